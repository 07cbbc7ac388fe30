"""End-to-end evaluation pipeline: dataset preparation, training or
checkpoint loading, transform sampling, saliency invocation, record
scoring, aggregation, checkpoint correlation analysis, report emission,
and external-map scoring through the interchange format.

Determinism: (config, seed) fully determines the report files
(metrics/records/breakdowns/correlation tables and exported containers)
byte for byte in single-threaded mode, and every value to < 1e-9 with
worker threads (per-item seeds are derived from stable keys and the
final reduction runs in a fixed record order).  The manifest contains
wall-clock timings and is exempt from byte determinism.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

import cose
from cose import interchange, transforms
from cose.metrics import (
    CorrelationResult,
    EvalRecord,
    SsimParams,
    UndefinedCorrelationError,
    aggregate_records,
    checkpoint_correlation,
    ssim_detailed,
)
from cose.model import MicroModel, ModelCheckpoint, TrainConfig, train
from cose.saliency import REFERENCE_METHODS, MethodConfig, compute_map, method_names
from cose.toydata import ToyDataset, generate_toy_dataset


class ConfigError(ValueError):
    pass


class ExternalMapsError(RuntimeError):
    """Malformed external container (e.g. missing prediction metadata)."""


@dataclass
class RunConfig:
    """Everything a run needs; JSON config files mirror these fields."""

    dataset: str = "toy"  # "toy" | image folder path
    dataset_id: str = "toy"
    model_id: str = "micro-cnn"
    toy_n_per_class: int = 100
    image_side: int = 32

    epochs: int = 30
    checkpoint_epochs: tuple = (0, 1, 2, 5, 10, 20)
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    augment_prob: float = 0.5
    conv_channels: tuple = (16, 32)
    checkpoints_dir: str | None = None  # load instead of training

    methods: tuple = REFERENCE_METHODS
    samples_per_image: int = 10
    n_eval_images: int = 50
    seed: int = 0
    ssim: SsimParams = field(default_factory=SsimParams)
    method_config: MethodConfig = field(default_factory=MethodConfig)
    analyze_checkpoints: bool = True
    external_maps_dir: str | None = None
    out_dir: str = "runs/latest"
    threads: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.checkpoint_epochs = tuple(self.checkpoint_epochs)
        self.conv_channels = tuple(self.conv_channels)
        if isinstance(self.ssim, dict):
            try:
                self.ssim = SsimParams(**self.ssim)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad ssim params: {exc}") from exc
        if isinstance(self.method_config, dict):
            try:
                self.method_config = MethodConfig(**self.method_config)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad method_config: {exc}") from exc
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in method_names()]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; known: {method_names()}")
        if self.samples_per_image < 1:
            raise ConfigError("samples_per_image must be >= 1")
        if self.n_eval_images < 1:
            raise ConfigError("n_eval_images must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ssim"] = asdict(self.ssim)
        doc["method_config"] = asdict(self.method_config)
        return doc


@dataclass
class RunManifest:
    config: dict
    engine_version: str
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


@dataclass
class EvalRun:
    reports: dict
    records: dict
    manifest: RunManifest
    correlation: dict = field(default_factory=dict)  # method -> analysis rows


# ---------------------------------------------------------------------------
# seeds


def _rng(config_seed, *key) -> np.random.Generator:
    """Stable stream per (seed, structured key); independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence((config_seed,) + tuple(int(k) for k in key)))


_STREAM_TRANSFORM = 1
_STREAM_METHOD = 2

_VARIANT_ORIGINAL = 0
_VARIANT_TRANSFORM = 1  # + sample index
_VARIANT_CHECKPOINT = 100_000  # + epoch


# ---------------------------------------------------------------------------
# dataset / model preparation


def load_image_folder(root, side: int) -> ToyDataset:
    """Class-per-subdirectory image folder, resized to (side, side)."""
    from PIL import Image

    root = Path(root)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(classes) < 2:
        raise ConfigError(f"{root}: need >= 2 class subdirectories, found {classes}")
    images, labels = [], []
    for label, cls in enumerate(classes):
        files = sorted((root / cls).glob("*"))
        files = [f for f in files if f.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")]
        if not files:
            raise ConfigError(f"{root / cls}: no images")
        for f in files:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB").resize((side, side), Image.BILINEAR))
            images.append((arr / 255.0).astype(np.float32))
            labels.append(label)
    images = np.stack(images)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx, test_idx = [], []
    for label in range(len(classes)):
        idx = np.nonzero(labels == label)[0]
        n_train = max(1, int(round(0.8 * len(idx))))
        if n_train >= len(idx):
            n_train = len(idx) - 1
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    return ToyDataset(
        images=images,
        labels=labels,
        train_idx=np.asarray(train_idx, dtype=np.int64),
        test_idx=np.asarray(test_idx, dtype=np.int64),
        class_count=len(classes),
    )


def prepare_dataset(config: RunConfig) -> ToyDataset:
    if config.dataset == "toy":
        return generate_toy_dataset(config.seed, config.toy_n_per_class, side=config.image_side)
    return load_image_folder(config.dataset, config.image_side)


def prepare_model(config: RunConfig, data: ToyDataset):
    """Returns (final model, checkpoints); trains unless checkpoints_dir is set."""
    if config.checkpoints_dir:
        files = sorted(Path(config.checkpoints_dir).glob("checkpoint_*.cose"))
        if not files:
            raise ExternalMapsError(f"{config.checkpoints_dir}: no checkpoint_*.cose files")
        checkpoints = sorted((ModelCheckpoint.load(f) for f in files), key=lambda c: c.epoch)
        return checkpoints[-1].to_model(), checkpoints
    model = MicroModel(
        input_side=config.image_side,
        channels=3,
        num_classes=data.class_count,
        conv_channels=config.conv_channels,
        seed=config.seed,
    )
    cfg = TrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        momentum=config.momentum,
        batch_size=config.batch_size,
        augment_prob=config.augment_prob,
        seed=config.seed,
    )
    checkpoints = train(model, data, checkpoint_epochs=config.checkpoint_epochs, cfg=cfg)
    return model, checkpoints


def save_checkpoints(checkpoints, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for cp in checkpoints:
        p = out / f"checkpoint_{cp.epoch:04d}.cose"
        cp.save(p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# variant computation (shared by evaluate and export-maps)


@dataclass
class ImageVariants:
    """All scored artifacts for one evaluated image."""

    image_id: str
    pred_original: int
    maps_original: dict  # method -> SaliencyMap
    transform_specs: dict  # sample j -> TransformSpec
    preds_transform: dict  # sample j -> int
    maps_transform: dict  # (method, j) -> SaliencyMap
    preds_checkpoint: dict  # epoch -> int
    maps_checkpoint: dict  # (method, epoch) -> SaliencyMap
    checkpoint_accuracy: dict = field(default_factory=dict)  # epoch -> test accuracy


def _predict_chunked(model, images, chunk=64):
    preds = []
    for start in range(0, len(images), chunk):
        cls, _ = model.predict_batch(images[start : start + chunk])
        preds.append(cls)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


def compute_variants(config: RunConfig, model, checkpoints, data, full_checkpoint_maps=False):
    """Compute maps and predictions for every evaluated image.

    Transforms are sampled once per (image, sample index) and shared
    across methods, so method comparisons are paired.  Checkpoint maps
    are computed only where the checkpoint disagrees with the final
    model unless ``full_checkpoint_maps`` (export mode) is set.
    """
    test_images, _ = data.test()
    images = test_images[: config.n_eval_images]
    if len(images) < config.n_eval_images:
        raise ConfigError(
            f"test split has {len(images)} images < n_eval_images {config.n_eval_images}"
        )
    ids = [f"img{k:04d}" for k in range(len(images))]
    mean_color = data.mean_color

    preds_orig = _predict_chunked(model, images)
    cp_models = []
    for cp in checkpoints:
        if cp.epoch == checkpoints[-1].epoch:
            continue
        cp_models.append((cp.epoch, cp.to_model()))
    cp_preds = {epoch: _predict_chunked(m, images) for epoch, m in cp_models}

    method_idx = {m: k for k, m in enumerate(sorted(config.methods))}

    def method_rng(method, image_k, variant):
        return _rng(config.seed, _STREAM_METHOD, method_idx[method], image_k, variant)

    def build_one(k: int) -> ImageVariants:
        x = images[k]
        specs = {}
        preds_t = {}
        maps_t = {}
        xs_t = {}
        for j in range(config.samples_per_image):
            spec = transforms.sample_transform(_rng(config.seed, _STREAM_TRANSFORM, k, j))
            specs[j] = spec
            xs_t[j] = transforms.apply_transform(spec, x, fill=mean_color)
        t_preds = _predict_chunked(model, np.stack([xs_t[j] for j in range(config.samples_per_image)]))
        for j in range(config.samples_per_image):
            preds_t[j] = int(t_preds[j])

        maps_orig = {}
        for m in config.methods:
            maps_orig[m] = compute_map(
                model, x, int(preds_orig[k]), m, config.method_config, method_rng(m, k, _VARIANT_ORIGINAL)
            )
            for j in range(config.samples_per_image):
                maps_t[(m, j)] = compute_map(
                    model, xs_t[j], preds_t[j], m, config.method_config,
                    method_rng(m, k, _VARIANT_TRANSFORM + j),
                )

        preds_cp = {epoch: int(cp_preds[epoch][k]) for epoch, _ in cp_models}
        maps_cp = {}
        for epoch, cp_model in cp_models:
            if not full_checkpoint_maps and preds_cp[epoch] == int(preds_orig[k]) and not config.analyze_checkpoints:
                continue
            for m in config.methods:
                maps_cp[(m, epoch)] = compute_map(
                    cp_model, x, preds_cp[epoch], m, config.method_config,
                    method_rng(m, k, _VARIANT_CHECKPOINT + epoch),
                )
        return ImageVariants(
            image_id=ids[k],
            pred_original=int(preds_orig[k]),
            maps_original=maps_orig,
            transform_specs=specs,
            preds_transform=preds_t,
            maps_transform=maps_t,
            preds_checkpoint=preds_cp,
            maps_checkpoint=maps_cp,
        )

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            variants = list(pool.map(build_one, range(len(images))))
    else:
        variants = [build_one(k) for k in range(len(images))]
    return variants


# ---------------------------------------------------------------------------
# scoring


def score_variants(variants, methods, ssim_params: SsimParams):
    """Turn computed variants into per-method EvalRecords (the single
    scoring path used by both in-process and external runs)."""
    records = {m: [] for m in methods}
    for var in variants:
        for m in methods:
            m_orig = var.maps_original[m]
            for j, spec in sorted(var.transform_specs.items()):
                key = (m, j)
                if key not in var.maps_transform:
                    continue
                m_t = var.maps_transform[key]
                if spec.kind == "geometric":
                    inverted, mask = transforms.invert_on_map(spec, m_t.values)
                else:
                    inverted, mask = m_t.values, m_t.mask
                res = ssim_detailed(m_orig.values, inverted, ssim_params, mask_a=m_orig.mask, mask_b=mask)
                equivalent = var.preds_transform[j] == var.pred_original
                records[m].append(
                    EvalRecord(
                        image_id=var.image_id,
                        perturbation=spec.to_token(),
                        kind=spec.kind,
                        equivalent=equivalent,
                        score=res.value if equivalent else 1.0 - res.value,
                        method=m,
                        magnitude_index=spec.magnitude_index,
                        mask_coverage=res.coverage,
                        clamped=res.clamped,
                    )
                )
            for epoch in sorted(var.preds_checkpoint):
                if var.preds_checkpoint[epoch] == var.pred_original:
                    continue
                key = (m, epoch)
                if key not in var.maps_checkpoint:
                    continue
                m_cp = var.maps_checkpoint[key]
                res = ssim_detailed(m_orig.values, m_cp.values, ssim_params, mask_a=m_orig.mask, mask_b=m_cp.mask)
                records[m].append(
                    EvalRecord(
                        image_id=var.image_id,
                        perturbation=f"checkpoint:{epoch}",
                        kind="checkpoint",
                        equivalent=False,
                        score=1.0 - res.value,
                        method=m,
                        magnitude_index=None,
                        mask_coverage=res.coverage,
                        clamped=res.clamped,
                    )
                )
    return records


def analyze_from_variants(variants, methods, checkpoints, ssim_params: SsimParams):
    """Fig-5 style analysis: per method and checkpoint, the mean SSIM of
    the checkpoint's map against the final model's map, with Pearson
    correlation against checkpoint accuracy (pooled over images and on
    per-epoch means; both are reported)."""
    final_epoch = checkpoints[-1].epoch
    acc_by_epoch = {cp.epoch: cp.test_accuracy for cp in checkpoints}
    results = {}
    for m in methods:
        rows = []
        pooled = []
        for cp in checkpoints:
            epoch = cp.epoch
            ssims = []
            for var in variants:
                if epoch == final_epoch:
                    ssims.append(1.0)  # map against itself
                    continue
                key = (m, epoch)
                if key not in var.maps_checkpoint:
                    continue
                val = ssim_detailed(
                    var.maps_checkpoint[key].values, var.maps_original[m].values, ssim_params
                ).value
                ssims.append(val)
            if not ssims:
                continue
            acc = acc_by_epoch[epoch]
            rows.append({"epoch": epoch, "accuracy": acc, "mean_ssim": float(np.mean(ssims)), "n": len(ssims)})
            pooled.extend((acc, v) for v in ssims)
        corr = {}
        for name, pairs in (("pooled", pooled), ("epoch_means", [(r["accuracy"], r["mean_ssim"]) for r in rows])):
            try:
                corr[name] = checkpoint_correlation(pairs)
            except UndefinedCorrelationError as exc:
                corr[name] = str(exc)
        results[m] = {"rows": rows, "correlation": corr}
    return results


# ---------------------------------------------------------------------------
# container export / ingest


def _maps_metadata(config: RunConfig, var: ImageVariants, method: str, checkpoints) -> dict:
    preds = {"original": var.pred_original}
    spec_tokens = {}
    for j, spec in sorted(var.transform_specs.items()):
        name = f"transform/{j:03d}"
        preds[name] = var.preds_transform[j]
        spec_tokens[name] = spec.to_token()
    acc = {}
    for epoch in sorted(var.preds_checkpoint):
        name = f"checkpoint/{epoch:04d}"
        preds[name] = var.preds_checkpoint[epoch]
    for cp in checkpoints:
        acc[f"{cp.epoch:04d}"] = cp.test_accuracy
    return {
        "kind": "maps",
        "image_id": var.image_id,
        "method": method,
        "model_id": config.model_id,
        "dataset_id": config.dataset_id,
        "predictions": preds,
        "transform_specs": spec_tokens,
        "checkpoint_accuracy": acc,
    }


def export_containers(config: RunConfig, variants, checkpoints, out_dir) -> list[Path]:
    """Write one container per (method, image): the original map, every
    transformed-input map (pre-inversion), every checkpoint map, and the
    prediction/spec metadata needed to re-score them externally."""
    out = Path(out_dir)
    paths = []
    for m in config.methods:
        mdir = out / m
        mdir.mkdir(parents=True, exist_ok=True)
        for var in variants:
            entries = {"original": var.maps_original[m].values}
            for j in sorted(var.transform_specs):
                entries[f"transform/{j:03d}"] = var.maps_transform[(m, j)].values
            for epoch in sorted(var.preds_checkpoint):
                key = (m, epoch)
                if key in var.maps_checkpoint:
                    entries[f"checkpoint/{epoch:04d}"] = var.maps_checkpoint[key].values
            meta = _maps_metadata(config, var, m, checkpoints)
            path = mdir / f"{var.image_id}.cose"
            interchange.write(path, entries, meta)
            paths.append(path)
    return paths


def ingest_external(maps_dir, methods=None):
    """Load adapter- or engine-written containers back into the variant
    structure used by the common scoring path.

    Returns (variants-by-method-merged, methods, warnings).  A container
    without prediction metadata is rejected with a named error; a
    container whose map entries and predictions do not match up skips
    that image with a warning.
    """
    from cose.saliency import SaliencyMap

    root = Path(maps_dir)
    if not root.is_dir():
        raise ExternalMapsError(f"{maps_dir}: not a directory")
    found = sorted(p.name for p in root.iterdir() if p.is_dir())
    if methods is None:
        methods = found
    warnings = []
    by_image: dict[str, ImageVariants] = {}
    skipped: set[str] = set()

    for m in methods:
        mdir = root / m
        if not mdir.is_dir():
            warnings.append(f"method directory missing: {m}")
            continue
        for path in sorted(mdir.glob("*.cose")):
            entries, meta = interchange.read(path)
            if meta.get("kind") != "maps":
                raise ExternalMapsError(f"{path}: container is not a maps export")
            if "predictions" not in meta or "original" not in meta.get("predictions", {}):
                raise ExternalMapsError(f"{path}: missing prediction metadata")
            preds = meta["predictions"]
            image_id = meta.get("image_id", path.stem)
            if image_id in skipped:
                continue
            if "original" not in entries:
                warnings.append(f"{path}: no original map entry; image skipped")
                skipped.add(image_id)
                by_image.pop(image_id, None)
                continue
            var = by_image.get(image_id)
            if var is None:
                var = ImageVariants(
                    image_id=image_id,
                    pred_original=int(preds["original"]),
                    maps_original={},
                    transform_specs={},
                    preds_transform={},
                    maps_transform={},
                    preds_checkpoint={},
                    maps_checkpoint={},
                )
                by_image[image_id] = var

            ok = True
            spec_tokens = meta.get("transform_specs", {})
            for name in entries:
                if name == "original":
                    continue
                if name not in preds:
                    warnings.append(f"{path}: entry {name!r} has no prediction; image skipped")
                    ok = False
                    break
                if name.startswith("transform/") and name not in spec_tokens:
                    warnings.append(f"{path}: entry {name!r} has no transform spec; image skipped")
                    ok = False
                    break
            for name in preds:
                if name != "original" and name not in entries:
                    warnings.append(f"{path}: prediction {name!r} has no map entry; image skipped")
                    ok = False
                    break
            if not ok:
                skipped.add(image_id)
                by_image.pop(image_id, None)
                continue

            var.maps_original[m] = SaliencyMap(entries["original"], m, int(preds["original"]))
            for name, arr in entries.items():
                if name.startswith("transform/"):
                    j = int(name.split("/")[1])
                    spec = transforms.TransformSpec.from_token(spec_tokens[name])
                    var.transform_specs[j] = spec
                    var.preds_transform[j] = int(preds[name])
                    var.maps_transform[(m, j)] = SaliencyMap(arr, m, int(preds[name]))
                elif name.startswith("checkpoint/"):
                    epoch = int(name.split("/")[1])
                    var.preds_checkpoint[epoch] = int(preds[name])
                    var.maps_checkpoint[(m, epoch)] = SaliencyMap(arr, m, int(preds[name]))
            acc = meta.get("checkpoint_accuracy") or {}
            if acc:
                var.checkpoint_accuracy = {int(k): float(v) for k, v in acc.items()}

    variants = [by_image[k] for k in sorted(by_image)]
    return variants, list(methods), warnings


# ---------------------------------------------------------------------------
# top-level operations


def run_evaluation(config: RunConfig) -> EvalRun:
    """The full pipeline; returns per-method reports plus the manifest."""
    timings = {}
    t0 = time.perf_counter()
    data = prepare_dataset(config)
    timings["dataset"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model, checkpoints = prepare_model(config, data)
    timings["model"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    variants = compute_variants(config, model, checkpoints, data)
    timings["maps"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    records = score_variants(variants, config.methods, config.ssim)
    reports = {
        m: aggregate_records(records[m], m, model_id=config.model_id, dataset_id=config.dataset_id)
        for m in config.methods
    }
    correlation = {}
    if config.analyze_checkpoints and len(checkpoints) >= 2:
        correlation = analyze_from_variants(variants, config.methods, checkpoints, config.ssim)
    timings["scoring"] = time.perf_counter() - t0

    manifest = _build_manifest(config, reports, timings)
    return EvalRun(reports=reports, records=records, manifest=manifest, correlation=correlation)


def run_checkpoint_analysis(config: RunConfig) -> EvalRun:
    """Correlation analysis only (accuracy vs map similarity to final)."""
    if len(config.checkpoint_epochs) < 2:
        raise ConfigError("need >= 3 checkpoints (incl. final) for correlation analysis")
    timings = {}
    t0 = time.perf_counter()
    data = prepare_dataset(config)
    model, checkpoints = prepare_model(config, data)
    timings["model"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cfg = replace(config, samples_per_image=1, analyze_checkpoints=True)
    variants = compute_variants(cfg, model, checkpoints, data, full_checkpoint_maps=True)
    correlation = analyze_from_variants(variants, config.methods, checkpoints, config.ssim)
    timings["analysis"] = time.perf_counter() - t0

    manifest = _build_manifest(config, {}, timings)
    return EvalRun(reports={}, records={}, manifest=manifest, correlation=correlation)


def export_maps(config: RunConfig, out_dir=None) -> tuple[EvalRun, list[Path]]:
    """Run the pipeline and persist every computed map as containers."""
    out = Path(out_dir if out_dir is not None else config.out_dir) / "maps"
    timings = {}
    t0 = time.perf_counter()
    data = prepare_dataset(config)
    model, checkpoints = prepare_model(config, data)
    timings["model"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    variants = compute_variants(config, model, checkpoints, data, full_checkpoint_maps=True)
    timings["maps"] = time.perf_counter() - t0

    records = score_variants(variants, config.methods, config.ssim)
    reports = {
        m: aggregate_records(records[m], m, model_id=config.model_id, dataset_id=config.dataset_id)
        for m in config.methods
    }
    paths = export_containers(config, variants, checkpoints, out)
    manifest = _build_manifest(config, reports, timings)
    return EvalRun(reports=reports, records=records, manifest=manifest), paths


def score_external(config: RunConfig, maps_dir=None) -> EvalRun:
    """Score pre-computed maps from interchange containers; identical
    scoring path as the in-process run from the classification step on."""
    maps_dir = maps_dir or config.external_maps_dir
    if not maps_dir:
        raise ConfigError("score_external needs external_maps_dir (or a maps dir argument)")
    t0 = time.perf_counter()
    requested = None if config.methods == REFERENCE_METHODS else config.methods
    variants, methods, warnings = ingest_external(maps_dir, methods=requested)
    records = score_variants(variants, methods, config.ssim)
    reports = {
        m: aggregate_records(records[m], m, model_id=config.model_id, dataset_id=config.dataset_id)
        for m in methods
    }
    correlation = _external_correlation(variants, methods, config.ssim)
    timings = {"scoring": time.perf_counter() - t0}
    manifest = _build_manifest(config, reports, timings)
    manifest.warnings.extend(warnings)
    return EvalRun(reports=reports, records=records, manifest=manifest, correlation=correlation)


def _external_correlation(variants, methods, ssim_params):
    """Checkpoint correlation from external maps when accuracies are present."""
    accs = {}
    for var in variants:
        for epoch, acc in getattr(var, "checkpoint_accuracy", {}).items():
            accs[epoch] = acc
    if not accs:
        return {}
    results = {}
    for m in methods:
        rows = []
        pooled = []
        epochs = sorted({e for var in variants for (mm, e) in var.maps_checkpoint if mm == m})
        for epoch in epochs:
            if epoch not in accs:
                continue
            ssims = []
            for var in variants:
                key = (m, epoch)
                if key in var.maps_checkpoint and m in var.maps_original:
                    val = ssim_detailed(
                        var.maps_checkpoint[key].values, var.maps_original[m].values, ssim_params
                    ).value
                    ssims.append(val)
            if not ssims:
                continue
            rows.append({"epoch": epoch, "accuracy": accs[epoch], "mean_ssim": float(np.mean(ssims)), "n": len(ssims)})
            pooled.extend((accs[epoch], v) for v in ssims)
        if len(rows) < 3:
            continue
        corr = {}
        for name, pairs in (("pooled", pooled), ("epoch_means", [(r["accuracy"], r["mean_ssim"]) for r in rows])):
            try:
                corr[name] = checkpoint_correlation(pairs)
            except UndefinedCorrelationError as exc:
                corr[name] = str(exc)
        results[m] = {"rows": rows, "correlation": corr}
    return results


def _build_manifest(config, reports, timings) -> RunManifest:
    counts = {}
    warnings = []
    for m, rep in reports.items():
        counts[m] = {
            "n_consistent": rep.n_consistent,
            "m_sensitive": rep.m_sensitive,
            "m_sensitive_transform": rep.m_sensitive_transform,
            "m_sensitive_checkpoint": rep.m_sensitive_checkpoint,
            "clamp_events": rep.clamp_events,
            "mean_mask_coverage": rep.mean_mask_coverage,
        }
        for reason in rep.undefined:
            warnings.append(f"{m}: {reason}")
        if rep.clamp_events:
            warnings.append(f"{m}: {rep.clamp_events} clamped similarity values")
    return RunManifest(
        config=config.to_dict(),
        engine_version=cose.__version__,
        timings=timings,
        counts=counts,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# report emission


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def emit_reports(run: EvalRun, out_dir) -> dict[str, Path]:
    """Write the metrics table, per-record log, breakdown table,
    correlation table and manifest.  Identical runs produce byte-identical
    table files (the manifest carries timings and is exempt)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    lines = [
        "dataset\tmodel\tmethod\tconsistency\tsensitivity\tcose_percent\t"
        "n_consistent\tm_sensitive\tm_sensitive_transform\tm_sensitive_checkpoint\t"
        "clamp_events\tmean_mask_coverage\tundefined"
    ]
    for m in sorted(run.reports):
        rep = run.reports[m]
        lines.append(
            "\t".join(
                [
                    rep.dataset_id,
                    rep.model_id,
                    rep.method,
                    _fmt(rep.consistency),
                    _fmt(rep.sensitivity),
                    _fmt(rep.cose),
                    str(rep.n_consistent),
                    str(rep.m_sensitive),
                    str(rep.m_sensitive_transform),
                    str(rep.m_sensitive_checkpoint),
                    str(rep.clamp_events),
                    _fmt(rep.mean_mask_coverage),
                    ";".join(rep.undefined) or "-",
                ]
            )
        )
    files["metrics"] = out / "metrics.tsv"
    files["metrics"].write_text("\n".join(lines) + "\n")

    lines = ["method\timage_id\tperturbation\tkind\tmagnitude_index\tequivalent\tscore\tmask_coverage\tclamped"]
    for m in sorted(run.records):
        for r in sorted(run.records[m], key=lambda r: (r.image_id, r.perturbation)):
            lines.append(
                "\t".join(
                    [
                        r.method,
                        r.image_id,
                        r.perturbation,
                        r.kind,
                        "-" if r.magnitude_index is None else str(r.magnitude_index),
                        "1" if r.equivalent else "0",
                        _fmt(r.score),
                        _fmt(r.mask_coverage),
                        "1" if r.clamped else "0",
                    ]
                )
            )
    files["records"] = out / "records.tsv"
    files["records"].write_text("\n".join(lines) + "\n")

    lines = ["method\tscope\tkey\tn_consistent\tmean_ssim\tn_sensitive\tmean_d"]
    for m in sorted(run.reports):
        rep = run.reports[m]
        for name in sorted(rep.per_transform):
            cell = rep.per_transform[name]
            lines.append(
                f"{m}\ttransform\t{name}\t{cell.n_consistent}\t{_fmt(cell.mean_ssim)}\t"
                f"{cell.n_sensitive}\t{_fmt(cell.mean_d)}"
            )
        for kind, idx in sorted(rep.per_magnitude):
            cell = rep.per_magnitude[(kind, idx)]
            lines.append(
                f"{m}\tmagnitude\t{kind}:{idx}\t{cell.n_consistent}\t{_fmt(cell.mean_ssim)}\t"
                f"{cell.n_sensitive}\t{_fmt(cell.mean_d)}"
            )
    files["breakdowns"] = out / "breakdowns.tsv"
    files["breakdowns"].write_text("\n".join(lines) + "\n")

    lines = ["method\trow\tepoch\taccuracy\tmean_ssim\tn\tvariant\tr\tp_value\tsignificant_at_0.05"]
    for m in sorted(run.correlation):
        entry = run.correlation[m]
        for row in entry["rows"]:
            lines.append(
                f"{m}\tpoint\t{row['epoch']}\t{_fmt(row['accuracy'])}\t{_fmt(row['mean_ssim'])}\t{row['n']}\t-\t-\t-\t-"
            )
        for variant, corr in sorted(entry["correlation"].items()):
            if isinstance(corr, CorrelationResult):
                lines.append(
                    f"{m}\tcorrelation\t-\t-\t-\t{corr.n}\t{variant}\t{_fmt(corr.r)}\t{_fmt(corr.p_value)}\t"
                    + ("1" if corr.significant else "0")
                )
            else:
                lines.append(f"{m}\tcorrelation\t-\t-\t-\t-\t{variant}\tundefined\t{corr}\t-")
    files["correlation"] = out / "correlation.tsv"
    files["correlation"].write_text("\n".join(lines) + "\n")

    files["manifest"] = out / "manifest.json"
    run.manifest.save(files["manifest"])
    return files
