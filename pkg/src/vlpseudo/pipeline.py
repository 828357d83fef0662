"""End-to-end command bodies: encode, aggregate, train, evaluate, report.

Each function is deterministic under a fixed seed and a fixed cache, and
writes its artifacts (plus the resolved config) into the run's output
directory. Ground truth is loaded only where a command reports quality;
the training update path never touches it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .datasets import DatasetManifest, load_image, parse_coco, parse_voc
from .encoders import (
    CacheContents,
    ConfigurationError,
    Encoder,
    HuggingFaceClipEncoder,
    PlantedEncoder,
    compute_record,
    encode_class_prompts,
    read_cache,
    write_cache,
)
from .envelope import manifest_path
from .labelstore import init_from_scores, read_score_file, snapshot, write_score_file
from .metrics import (
    EvaluationReport,
    GroundTruthSet,
    ablation_report,
    evaluate_scores,
    pseudo_label_quality,
    render_ablation_table,
    score_histogram,
    strategy_scores,
    write_reports_json,
)
from .training import EmbeddingClassifier, TrainConfig, alternate, predict


def _parse_kwargs(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    if not text:
        return out
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"encoder option {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def make_encoder(spec: str) -> Encoder:
    """Build an encoder from its spec string, e.g. ``planted:classes=10,seed=3``."""
    name, _, rest = spec.partition(":")
    options = _parse_kwargs(rest)
    if name == "planted":
        kwargs = dict(
            num_classes=int(options.pop("classes", 10)),
            dim=int(options.pop("dim", 64)),
            seed=int(options.pop("seed", 0)),
            noise=float(options.pop("noise", 0.05)),
            temperature=float(options.pop("tau", 0.1)),
        )
        if options:
            raise ConfigError(f"unknown planted encoder options: {sorted(options)}")
        return PlantedEncoder(**kwargs)
    if name == "clip":
        model = options.pop("model", "openai/clip-vit-base-patch32")
        device = options.pop("device", "cpu")
        if options:
            raise ConfigError(f"unknown clip encoder options: {sorted(options)}")
        return HuggingFaceClipEncoder(model_name=model, device=device)
    raise ConfigError(f"unknown encoder {spec!r}")


def default_cache_base(config: RunConfig, split: str) -> str:
    return str(Path(config.output_dir) / f"cache_{split or 'data'}")


def ensure_cache(
    config: RunConfig, manifest: DatasetManifest, cache_base: str | None = None
) -> CacheContents:
    """Read the embedding cache, building it first if absent.

    Downstream stages always consume the cache replay, so a live-encoder run
    and a cached rerun feed byte-identical embeddings.
    """
    base = cache_base or config.cache or default_cache_base(config, manifest.split)
    if not manifest_path(base).is_file():
        encoder = make_encoder(config.encoder)
        text = encode_class_prompts(encoder, manifest.class_names)
        records = [
            compute_record(encoder, image_id, load_image(path),
                           config.grid_rows, config.grid_cols)
            for image_id, path in zip(manifest.image_ids, manifest.image_paths)
        ]
        write_cache(records, text, encoder.temperature, base, encoder_id=encoder.identity)
    cache = read_cache(base)
    if cache.text.class_names != manifest.class_names:
        raise ConfigurationError(
            f"cache at {base} was built for a different class vocabulary"
        )
    if [r.image_id for r in cache.records] != manifest.image_ids:
        raise ConfigurationError(f"cache at {base} covers different images than the manifest")
    return cache


def load_annotations(source: str, class_names: list[str]) -> GroundTruthSet:
    scheme, sep, location = source.partition(":")
    if not sep:
        raise ConfigError(
            f"annotation source must look like voc:<dir> or coco:<file>, got {source!r}"
        )
    if scheme == "voc":
        return parse_voc(location, class_names)
    if scheme == "coco":
        return parse_coco(location, class_names)
    raise ConfigError(f"unknown annotation scheme {scheme!r}")


@dataclass
class BuildResult:
    score_base: Path
    quality_report: EvaluationReport | None
    report_paths: list[Path]


def build_pseudo_labels(config: RunConfig) -> BuildResult:
    """Encode, split-align, aggregate, and write the pseudo-label file."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(config.dataset)
    cache = ensure_cache(config, manifest)
    scored = strategy_scores(
        cache.records, cache.text, cache.temperature, config.strategy, config.zeta
    )
    score_base = out / "pseudo_labels"
    write_score_file(scored, cache.text.class_names, score_base,
                     strategy=config.strategy, zeta=config.zeta)
    if config.dump_similarities:
        from .alignment import global_similarity, local_similarities, write_similarity_dump

        per_image = [
            (r.image_id,
             global_similarity(r, cache.text, cache.temperature),
             local_similarities(r, cache.text, cache.temperature))
            for r in cache.records
        ]
        write_similarity_dump(per_image, out / "similarities")
    config.save(out / "config.txt")

    report = None
    report_paths: list[Path] = []
    truth = manifest.load_truth()
    if truth is not None:
        report = pseudo_label_quality(scored, truth, strategy=config.strategy)
        text_path = out / "pseudo_label_quality.txt"
        text_path.write_text(report.render_table(), encoding="utf-8")
        report_paths = [text_path, write_reports_json([report], out / "pseudo_label_quality.json")]
    return BuildResult(score_base=score_base, quality_report=report,
                       report_paths=report_paths)


@dataclass
class TrainResult:
    checkpoint_base: Path
    initial_snapshot_base: Path
    final_snapshot_base: Path
    history_path: Path
    history_rows: int


def run_training(config: RunConfig) -> TrainResult:
    """Initialize pseudo labels from the score file and alternate updates."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(config.dataset)
    cache = ensure_cache(config, manifest)

    score_base = out / "pseudo_labels"
    if not manifest_path(score_base).is_file():
        build_pseudo_labels(config)
    finals, class_names = read_score_file(score_base)
    if class_names != manifest.class_names:
        raise ConfigurationError("pseudo-label file class names do not match the dataset")

    label_set = init_from_scores(finals, epsilon=config.epsilon, hard=config.hard_labels)
    ids = label_set.image_ids
    features = np.stack([cache.by_id[i].global_embedding for i in ids]).astype(np.float64)

    classifier = EmbeddingClassifier(
        in_dim=features.shape[1],
        num_classes=label_set.num_classes,
        hidden_dim=config.hidden_dim,
        seed=config.seed,
    )
    train_config = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        sigma_g=config.sigma_g,
        eta=config.eta,
        seed=config.seed,
        hidden_dim=config.hidden_dim,
        chain_through_sigmoid=config.chain_through_sigmoid,
        strategy=config.strategy,
        zeta=config.zeta,
    )

    eval_hook = None
    if config.eval_annotations:
        truth = load_annotations(config.eval_annotations, manifest.class_names)
        # reporting only; must not influence the optimization path
        eval_hook = lambda _clf, labels: pseudo_label_quality(labels, truth).map_score

    initial_base = out / "labels_initial"
    snapshot(label_set, initial_base)
    history = alternate(classifier, features, ids, label_set, train_config,
                        eval_hook=eval_hook)

    checkpoint_base = out / "classifier"
    final_base = out / "labels_final"
    classifier.save(checkpoint_base)
    snapshot(label_set, final_base)
    history_path = out / "history.txt"
    history_path.write_text(history.render(), encoding="utf-8")
    config.save(out / "config.txt")
    return TrainResult(
        checkpoint_base=checkpoint_base,
        initial_snapshot_base=initial_base,
        final_snapshot_base=final_base,
        history_path=history_path,
        history_rows=len(history.rows),
    )


@dataclass
class EvaluateResult:
    report: EvaluationReport
    text_path: Path
    json_path: Path


def run_evaluation(
    config: RunConfig,
    checkpoint_base: str | Path,
    manifest_file: str | None = None,
    annotations: str = "",
    cache_base: str | None = None,
) -> EvaluateResult:
    """Score a checkpoint on a split: whole-image features, no splitting."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(manifest_file or config.dataset)
    evaluating_train_split = manifest_file is None or manifest_file == config.dataset
    if cache_base is None and not evaluating_train_split:
        cache_base = default_cache_base(config, manifest.split)
    cache = ensure_cache(config, manifest, cache_base=cache_base)

    truth = None
    if annotations:
        truth = load_annotations(annotations, manifest.class_names)
    else:
        truth = manifest.load_truth()
    if truth is None:
        raise ConfigError("evaluation needs annotations (manifest or --annotations)")

    classifier = EmbeddingClassifier.load(checkpoint_base)
    features = np.stack(
        [cache.by_id[i].global_embedding for i in manifest.image_ids]
    ).astype(np.float64)
    probs = predict(classifier, features)
    report = evaluate_scores(manifest.image_ids, probs, truth,
                             strategy="predictions", histogram_bins=config.histogram_bins)
    text_path = out / f"eval_{manifest.split or 'data'}.txt"
    text_path.write_text(report.render_table(), encoding="utf-8")
    json_path = write_reports_json([report], out / f"eval_{manifest.split or 'data'}.json")
    return EvaluateResult(report=report, text_path=text_path, json_path=json_path)


@dataclass
class AblationResult:
    reports: list[EvaluationReport]
    text_path: Path
    json_path: Path


def run_ablation(config: RunConfig) -> AblationResult:
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(config.dataset)
    cache = ensure_cache(config, manifest)
    truth = manifest.load_truth()
    if truth is None:
        raise ConfigError("the aggregator ablation needs annotations in the dataset manifest")
    reports = ablation_report(cache.records, cache.text, cache.temperature,
                              truth, zeta=config.zeta)
    text_path = out / "ablation.txt"
    text_path.write_text(render_ablation_table(reports), encoding="utf-8")
    json_path = write_reports_json(reports, out / "ablation.json")
    return AblationResult(reports=reports, text_path=text_path, json_path=json_path)


def run_histograms(config: RunConfig) -> Path:
    """Per-class score distributions for the global and local routes."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(config.dataset)
    cache = ensure_cache(config, manifest)

    from .alignment import global_similarity, local_similarities

    global_rows = []
    local_best_rows = []
    for record in cache.records:
        global_rows.append(global_similarity(record, cache.text, cache.temperature).scores)
        locals_ = local_similarities(record, cache.text, cache.temperature)
        local_best_rows.append(np.stack([v.scores for v in locals_]).max(axis=0))
    global_scores = np.stack(global_rows)
    local_best = np.stack(local_best_rows)

    payload = {}
    for c, name in enumerate(cache.text.class_names):
        entry = {}
        for route, matrix in (("global", global_scores), ("local_max", local_best)):
            edges, counts = score_histogram(matrix[:, c], bins=config.histogram_bins)
            entry[route] = {"bin_edges": edges.tolist(), "counts": counts.tolist()}
        payload[name] = entry
    path = out / "score_histograms.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
