"""Gradient-alignment training: alternate classifier and pseudo-label updates.

One alternation round is (a) an epoch of minibatch SGD on the classifier
under the KL loss with pseudo labels held fixed, then (b) one latent update
of every pseudo label under the predictions collected during that epoch's
forward passes:

    latent <- latent - eta * psi(y_u) * grad_{y_u} L(y_u | y_p)

psi is a Gaussian bump centered at 0.5, so uncertain labels move fast and
confident ones are damped. The KL is per-class Bernoulli with the pseudo
label as the target distribution, mean-reduced over classes (and batch),
which lets the two loss directions share one implementation with the
arguments swapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envelope import EnvelopeError, read_envelope, write_envelope
from .labelstore import LATENT_LIMIT, PseudoLabelSet, sigmoid

# with this width psi(0.5) = 1 exactly, making the modulation a pure
# attenuation factor in (0, 1]
GAUSSIAN_WIDTH_DEFAULT = 1.0 / math.sqrt(2.0 * math.pi)

PREDICTION_CLIP = 1e-9


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.1
    sigma_g: float = GAUSSIAN_WIDTH_DEFAULT
    eta: float = 1.0
    seed: int = 0
    hidden_dim: int = 0  # 0 = linear head
    convergence_tol: float = 1e-5
    chain_through_sigmoid: bool = False
    # aggregation passthrough, recorded with run artifacts
    strategy: str = "minmax"
    zeta: float = 0.5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if self.learning_rate < 0 or self.sigma_g <= 0 or self.eta < 0:
            raise ValueError("learning rate, sigma_g, eta must be positive")


def _interior(name: str, arr: np.ndarray):
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"{name} must lie strictly inside (0,1)")


def kl_loss(y_p: np.ndarray, y_u: np.ndarray) -> float:
    """Mean over classes (and batch) of Bernoulli KL(y_u || y_p)."""
    y_p = np.asarray(y_p, dtype=np.float64)
    y_u = np.asarray(y_u, dtype=np.float64)
    _interior("predictions", y_p)
    _interior("pseudo labels", y_u)
    kl = y_u * (np.log(y_u) - np.log(y_p)) + (1.0 - y_u) * (
        np.log1p(-y_u) - np.log1p(-y_p)
    )
    return float(kl.mean())


def grad_wrt_pseudo(y_p: np.ndarray, y_u: np.ndarray) -> np.ndarray:
    """Gradient of kl_loss with respect to the pseudo labels, y_p fixed.

    Per class: (ln(y_u/y_p) - ln((1-y_u)/(1-y_p))) / C, the 1/C matching the
    mean reduction of :func:`kl_loss` over classes.
    """
    y_p = np.asarray(y_p, dtype=np.float64)
    y_u = np.asarray(y_u, dtype=np.float64)
    _interior("predictions", y_p)
    _interior("pseudo labels", y_u)
    c = y_u.shape[-1]
    return (np.log(y_u / y_p) - np.log((1.0 - y_u) / (1.0 - y_p))) / c


def gaussian_modulation(y_u: np.ndarray, sigma_g: float) -> np.ndarray:
    """Gaussian weight centered at 0.5: maximal for uncertain labels."""
    if sigma_g <= 0:
        raise ValueError(f"sigma_g must be positive, got {sigma_g}")
    y_u = np.asarray(y_u, dtype=np.float64)
    z = (y_u - 0.5) / sigma_g
    return np.exp(-0.5 * z * z) / (sigma_g * math.sqrt(2.0 * math.pi))


def refine_pseudo_labels(
    label_set: PseudoLabelSet,
    predictions: dict[str, np.ndarray],
    sigma_g: float = GAUSSIAN_WIDTH_DEFAULT,
    eta: float = 1.0,
    chain_through_sigmoid: bool = False,
) -> PseudoLabelSet:
    """One latent update of every pseudo label, predictions held fixed.

    ``chain_through_sigmoid`` additionally multiplies by the sigmoid
    derivative (ablation; the faithful update applies the raw gradient to
    the latent).
    """
    missing = [i for i in label_set.image_ids if i not in predictions]
    if missing:
        raise ValueError(f"missing predictions for {len(missing)} images, e.g. {missing[:3]}")
    y_p = np.stack([np.asarray(predictions[i], dtype=np.float64) for i in label_set.image_ids])
    y_u = label_set.probabilities
    grad = grad_wrt_pseudo(y_p, y_u)
    step = gaussian_modulation(y_u, sigma_g) * grad
    if chain_through_sigmoid:
        step = step * y_u * (1.0 - y_u)
    label_set.latents = np.clip(label_set.latents - eta * step, -LATENT_LIMIT, LATENT_LIMIT)
    label_set.epoch += 1
    return label_set


class EmbeddingClassifier:
    """Multi-label scoring head over cached embeddings.

    Linear by default; ``hidden_dim > 0`` inserts one ReLU layer. Trained
    with plain SGD on the KL loss (gradient at the logits is simply
    (y_p - y_u) / (batch * C)). A CNN backbone over raw pixels can replace
    this behind the same predict/step surface.
    """

    def __init__(self, in_dim: int, num_classes: int, hidden_dim: int = 0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        if hidden_dim > 0:
            self.w1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(hidden_dim, in_dim))
            self.b1 = np.zeros(hidden_dim)
            self.w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), size=(num_classes, hidden_dim))
            self.b2 = np.zeros(num_classes)
        else:
            self.w1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(num_classes, in_dim))
            self.b1 = np.zeros(num_classes)
            self.w2 = None
            self.b2 = None

    def _forward(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"feature dim {x.shape[1]} does not match classifier {self.in_dim}")
        if self.hidden_dim > 0:
            pre = x @ self.w1.T + self.b1
            hidden = np.maximum(pre, 0.0)
            logits = hidden @ self.w2.T + self.b2
            return logits, (x, hidden)
        return x @ self.w1.T + self.b1, (x, None)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Sigmoid scores strictly inside (0,1), one row per input."""
        logits, _ = self._forward(x)
        return np.clip(sigmoid(logits), PREDICTION_CLIP, 1.0 - PREDICTION_CLIP)

    def train_step(self, x: np.ndarray, targets: np.ndarray, lr: float) -> tuple[float, np.ndarray]:
        """One SGD step; returns (loss, the forward probabilities used)."""
        logits, (x2d, hidden) = self._forward(x)
        probs = np.clip(sigmoid(logits), PREDICTION_CLIP, 1.0 - PREDICTION_CLIP)
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        loss = kl_loss(probs, targets)
        dlogits = (probs - targets) / probs.size
        if self.hidden_dim > 0:
            dw2 = dlogits.T @ hidden
            db2 = dlogits.sum(axis=0)
            dhidden = (dlogits @ self.w2) * (hidden > 0.0)
            dw1 = dhidden.T @ x2d
            db1 = dhidden.sum(axis=0)
            self.w2 -= lr * dw2
            self.b2 -= lr * db2
        else:
            dw1 = dlogits.T @ x2d
            db1 = dlogits.sum(axis=0)
        self.w1 -= lr * dw1
        self.b1 -= lr * db1
        return loss, probs

    def save(self, base: str | Path) -> Path:
        meta = [
            ("in_dim", str(self.in_dim)),
            ("num_classes", str(self.num_classes)),
            ("hidden_dim", str(self.hidden_dim)),
        ]
        arrays = [self.w1, self.b1]
        if self.hidden_dim > 0:
            arrays += [self.w2, self.b2]
        return write_envelope(base, "classifier", meta, arrays, dtype="float64")

    @classmethod
    def load(cls, base: str | Path) -> "EmbeddingClassifier":
        manifest, flat = read_envelope(base, expect_kind="classifier")
        in_dim = manifest.get_int("in_dim")
        num_classes = manifest.get_int("num_classes")
        hidden_dim = manifest.get_int("hidden_dim")
        clf = cls(in_dim, num_classes, hidden_dim=hidden_dim, seed=0)
        shapes = [clf.w1.shape, clf.b1.shape]
        if hidden_dim > 0:
            shapes += [clf.w2.shape, clf.b2.shape]
        total = sum(int(np.prod(s)) for s in shapes)
        if flat.size != total:
            raise EnvelopeError(f"checkpoint holds {flat.size} floats, expected {total}")
        offset = 0
        loaded = []
        for shape in shapes:
            size = int(np.prod(shape))
            loaded.append(flat[offset : offset + size].reshape(shape).copy())
            offset += size
        clf.w1, clf.b1 = loaded[0], loaded[1]
        if hidden_dim > 0:
            clf.w2, clf.b2 = loaded[2], loaded[3]
        return clf


def predict(classifier: EmbeddingClassifier, features: np.ndarray) -> np.ndarray:
    """Inference on whole-image features, no snippet splitting involved."""
    return classifier.predict_proba(features)


@dataclass
class EpochResult:
    batch_losses: list[float]
    predictions: dict[str, np.ndarray]

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.batch_losses))


def train_epoch(
    classifier: EmbeddingClassifier,
    features: np.ndarray,
    image_ids: list[str],
    label_set: PseudoLabelSet,
    config: TrainConfig,
    rng: np.random.Generator,
) -> EpochResult:
    """One pass of minibatch SGD with pseudo labels treated as constants.

    Returns per-batch losses and the per-image predictions from each
    batch's forward pass (what the refinement step then consumes).
    """
    if len(image_ids) == 0:
        raise ValueError("empty training set")
    if features.shape[0] != len(image_ids):
        raise ValueError("features/id count mismatch")
    targets = label_set.probabilities
    rows = np.array([label_set.row(i) for i in image_ids])
    order = rng.permutation(len(image_ids))
    losses: list[float] = []
    predictions: dict[str, np.ndarray] = {}
    for start in range(0, len(order), config.batch_size):
        batch = order[start : start + config.batch_size]
        loss, probs = classifier.train_step(
            features[batch], targets[rows[batch]], config.learning_rate
        )
        losses.append(loss)
        for k, idx in enumerate(batch):
            predictions[image_ids[idx]] = probs[k]
    return EpochResult(batch_losses=losses, predictions=predictions)


@dataclass
class HistoryRow:
    epoch: int
    mean_loss: float
    drift: float
    eval_map: float | None = None


@dataclass
class History:
    rows: list[HistoryRow] = field(default_factory=list)
    converged: bool = False

    def render(self) -> str:
        """Line-oriented text table, byte-stable for identical runs."""
        with_map = any(r.eval_map is not None for r in self.rows)
        header = "epoch\tmean_loss\tdrift"
        if with_map:
            header += "\teval_map"
        lines = [header]
        for r in self.rows:
            line = f"{r.epoch}\t{r.mean_loss:.12g}\t{r.drift:.12g}"
            if with_map:
                line += "\t" + ("" if r.eval_map is None else f"{r.eval_map:.12g}")
            lines.append(line)
        return "\n".join(lines) + "\n"


def alternate(
    classifier: EmbeddingClassifier,
    features: np.ndarray,
    image_ids: list[str],
    label_set: PseudoLabelSet,
    config: TrainConfig,
    eval_hook=None,
) -> History:
    """Update network parameters and pseudo labels by turns.

    Runs [train_epoch; refine_pseudo_labels] until the epoch budget or until
    the relative change of the epoch-mean loss drops below the tolerance.
    ``eval_hook(classifier, label_set) -> float`` fills the optional metric
    column; it must not influence the optimization.
    """
    rng = np.random.default_rng(config.seed)
    history = History()
    prev_loss = None
    for epoch in range(1, config.epochs + 1):
        result = train_epoch(classifier, features, image_ids, label_set, config, rng)
        before = label_set.probabilities
        refine_pseudo_labels(
            label_set,
            result.predictions,
            sigma_g=config.sigma_g,
            eta=config.eta,
            chain_through_sigmoid=config.chain_through_sigmoid,
        )
        drift = float(np.abs(label_set.probabilities - before).mean())
        eval_map = None if eval_hook is None else eval_hook(classifier, label_set)
        history.rows.append(
            HistoryRow(epoch=epoch, mean_loss=result.mean_loss, drift=drift, eval_map=eval_map)
        )
        if prev_loss is not None:
            denom = max(abs(prev_loss), 1e-300)
            if abs(result.mean_loss - prev_loss) / denom < config.convergence_tol:
                history.converged = True
                break
        prev_loss = result.mean_loss
    return history
