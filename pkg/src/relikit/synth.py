"""Synthetic pixel-wise benchmarks with known calibration properties.

Each image is built from a smoothed random field of per-pixel class
distributions p: labels are sampled from p, and the model's logits are
``tau_d * ln p`` plus optional Gaussian noise. At tau_d = 1 and zero noise
the softmax recovers p exactly, so the max-probability confidence equals
the true probability of the predicted class and the data is perfectly
calibrated in expectation. Larger tau_d sharpens the softmax into
overconfidence, and the NLL-optimal global temperature for the domain is
tau_d by construction, which makes fitted temperatures directly checkable.

Every image also carries a per-pixel channel tensor (noisy domain
indicator, a shift-strength channel carrying ln tau_d, and clipped ln p
evidence channels), a per-image feature vector (domain offset plus
jitter), and optionally an unknown-class pixel mask: labels drawn from
held-out classes are re-labelled as ignore, flagged in the mask, and get
their logits damped so the model is visibly less confident there.

All randomness is drawn from one stream per (seed, image_id), so any
image is reproducible in isolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_io
from .errors import UsageError
from .manifest import DatasetManifest, ManifestEntry, save_manifest
from .rng import derive_stream
from .tensors import ImageTensor, LabelMap, LogitTensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    """One shift condition: sharper logits (tau > 1) mean overconfidence."""

    tag: str
    true_temperature: float = 1.0
    logit_noise: float = 0.0
    feature_offset: tuple[float, ...] = (0.0, 0.0)
    calibration_images: int | None = None  # None: use the config default
    test_images: int | None = None


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 5
    height: int = 48
    width: int = 48
    domains: tuple[DomainSpec, ...] = (
        DomainSpec("id", 1.0, 0.0, (0.0, 0.0, 0.0, 0.0)),
        DomainSpec("mild", 2.0, 0.1, (6.0, 0.0, 0.0, 0.0)),
        DomainSpec("strong", 4.0, 0.25, (0.0, 6.0, 0.0, 0.0)),
    )
    concentration: float = 0.6
    smoothing_radius: int = 2
    sharpness: float = 3.0
    seed: int = 7
    feature_jitter: float = 0.1
    calibration_images: int = 4
    test_images: int = 4
    ignore_value: int = 255
    holdout_classes: tuple[int, ...] = ()
    holdout_logit_damp: float = 0.35
    channel_noise: float = 0.05
    evidence_floor: float = -6.0


@dataclass(frozen=True)
class Scene:
    """One generated image with its ground truth."""

    logits: LogitTensor
    labels: LabelMap
    image: ImageTensor
    feature: np.ndarray
    ood_mask: np.ndarray | None
    true_probs: np.ndarray  # (H, W, K) float64, the sampling distribution


def validate_config(config: SynthConfig) -> None:
    if config.classes < 2:
        raise UsageError(f"need at least 2 classes, got {config.classes}")
    if config.height < 1 or config.width < 1:
        raise UsageError("image extent must be positive")
    if not config.domains:
        raise UsageError("need at least one domain")
    tags = [d.tag for d in config.domains]
    if len(set(tags)) != len(tags):
        raise UsageError(f"duplicate domain tags: {tags}")
    dims = {len(d.feature_offset) for d in config.domains}
    if len(dims) != 1 or 0 in dims:
        raise UsageError("feature offsets must share one non-zero dimension")
    for d in config.domains:
        if not np.isfinite(d.true_temperature) or d.true_temperature <= 0:
            raise UsageError(f"domain {d.tag!r}: true temperature must be positive")
        if d.logit_noise < 0:
            raise UsageError(f"domain {d.tag!r}: logit noise must be non-negative")
        for count in (d.calibration_images, d.test_images):
            if count is not None and count < 0:
                raise UsageError(f"domain {d.tag!r}: image counts must be non-negative")
    if config.concentration <= 0:
        raise UsageError("concentration must be positive")
    if config.smoothing_radius < 0:
        raise UsageError("smoothing radius must be non-negative")
    if config.sharpness <= 0:
        raise UsageError("sharpness must be positive")
    if config.calibration_images < 0 or config.test_images < 0:
        raise UsageError("image counts must be non-negative")
    if config.ignore_value < config.classes or config.ignore_value > np.iinfo(np.uint16).max:
        raise UsageError(f"ignore_value must be in [{config.classes}, 65535]")
    bad = [c for c in config.holdout_classes if not 0 <= c < config.classes]
    if bad:
        raise UsageError(f"holdout classes outside [0, {config.classes}): {bad}")
    if len(set(config.holdout_classes)) >= config.classes:
        raise UsageError("cannot hold out every class")
    if not 0 < config.holdout_logit_damp <= 1:
        raise UsageError("holdout_logit_damp must be in (0, 1]")


def _box_smooth_axis(arr: np.ndarray, radius: int, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    cumsum = np.cumsum(arr, axis=axis)
    pad_shape = list(arr.shape)
    pad_shape[axis] = 1
    cumsum = np.concatenate([np.zeros(pad_shape), cumsum], axis=axis)
    idx = np.arange(n)
    lo = np.maximum(idx - radius, 0)
    hi = np.minimum(idx + radius + 1, n)
    window = np.take(cumsum, hi, axis=axis) - np.take(cumsum, lo, axis=axis)
    counts_shape = [1] * arr.ndim
    counts_shape[axis] = n
    return window / (hi - lo).reshape(counts_shape)


def box_smooth(field: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter over a (2r+1)^2 window, clamped at the borders."""
    if radius <= 0:
        return field
    return _box_smooth_axis(_box_smooth_axis(field, radius, 0), radius, 1)


def _domain(config: SynthConfig, tag: str) -> tuple[int, DomainSpec]:
    for index, spec in enumerate(config.domains):
        if spec.tag == tag:
            return index, spec
    raise UsageError(f"unknown domain tag {tag!r}")


def generate_scene(config: SynthConfig, domain_tag: str, image_id: str) -> Scene:
    """Generate one image; deterministic in (config.seed, image_id)."""
    validate_config(config)
    domain_index, domain = _domain(config, domain_tag)
    h, w, k = config.height, config.width, config.classes
    rng = derive_stream(config.seed, f"scene:{image_id}")

    raw = rng.gamma(config.concentration, 1.0, size=(h, w, k))
    # smoothing flattens the field; the sharpness exponent restores
    # confident regions while keeping spatial coherence
    raw = np.maximum(box_smooth(raw, config.smoothing_radius), PROB_FLOOR) ** config.sharpness
    probs = raw / raw.sum(axis=2, keepdims=True)

    draw = rng.random((h, w))
    labels = np.minimum((draw[:, :, None] > np.cumsum(probs, axis=2)).sum(axis=2), k - 1)

    base = np.log(probs)
    logits = domain.true_temperature * base
    logits += rng.normal(0.0, 1.0, size=(h, w, k)) * domain.logit_noise

    one_hot = rng.normal(0.0, 1.0, size=(h, w, len(config.domains))) * config.channel_noise
    one_hot[:, :, domain_index] += 1.0
    shift = np.full((h, w, 1), np.log(domain.true_temperature))
    shift += rng.normal(0.0, 1.0, size=(h, w, 1)) * config.channel_noise
    evidence = np.maximum(base, config.evidence_floor)
    evidence = evidence + rng.normal(0.0, 1.0, size=(h, w, k)) * config.channel_noise
    image = np.concatenate([one_hot, shift, evidence], axis=2)

    offset = np.asarray(domain.feature_offset, dtype=np.float64)
    feature = offset + rng.normal(0.0, 1.0, size=offset.shape[0]) * config.feature_jitter

    mask = None
    out_labels = labels.astype(np.uint16)
    if config.holdout_classes:
        mask = np.isin(labels, np.asarray(config.holdout_classes))
        logits = np.where(mask[:, :, None], logits * config.holdout_logit_damp, logits)
        out_labels = np.where(mask, config.ignore_value, out_labels).astype(np.uint16)

    return Scene(
        logits=LogitTensor(logits.astype(np.float32)),
        labels=LabelMap(out_labels),
        image=ImageTensor(image.astype(np.float32)),
        feature=feature.astype(np.float32),
        ood_mask=mask,
        true_probs=probs,
    )


def generate_benchmark(config: SynthConfig, out_dir) -> Path:
    """Write a full benchmark (tensors plus manifest); returns the manifest path."""
    validate_config(config)
    out = Path(out_dir)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    entries = []
    for domain in config.domains:
        counts = (
            ("calibration", "cal", domain.calibration_images if domain.calibration_images is not None
             else config.calibration_images),
            ("test", "test", domain.test_images if domain.test_images is not None
             else config.test_images),
        )
        for split, short, count in counts:
            for i in range(count):
                image_id = f"{domain.tag}-{short}-{i:03d}"
                scene = generate_scene(config, domain.tag, image_id)
                tensor_io.write_logits(data / f"{image_id}.logits.bin", scene.logits)
                tensor_io.write_labels(data / f"{image_id}.labels.bin", scene.labels, config.classes)
                tensor_io.write_image(data / f"{image_id}.image.bin", scene.image)
                tensor_io.write_feature(data / f"{image_id}.feature.bin", scene.feature)
                mask_path = None
                if scene.ood_mask is not None:
                    mask_path = f"data/{image_id}.mask.bin"
                    tensor_io.write_mask(data / f"{image_id}.mask.bin", scene.ood_mask)
                entries.append(ManifestEntry(
                    image_id=image_id,
                    split=split,
                    domain=domain.tag,
                    logits=f"data/{image_id}.logits.bin",
                    labels=f"data/{image_id}.labels.bin",
                    feature=f"data/{image_id}.feature.bin",
                    image=f"data/{image_id}.image.bin",
                    ood_mask=mask_path,
                ))
    manifest = DatasetManifest(
        classes=config.classes,
        ignore_value=config.ignore_value,
        entries=tuple(sorted(entries, key=lambda e: e.image_id)),
        root=out,
    )
    return save_manifest(manifest, out / "manifest.json")


def default_ladder(seed: int = 7, shift: float = 1.0) -> SynthConfig:
    """The stock three-domain benchmark: calibrated, mildly and strongly shifted.

    ``shift`` scales how far the shifted domains drift: their oracle
    temperatures are 1 + shift and 1 + 3 * shift.
    """
    if shift < 0:
        raise UsageError("shift must be non-negative")
    return SynthConfig(
        domains=(
            DomainSpec("id", 1.0, 0.0, (0.0, 0.0, 0.0, 0.0)),
            DomainSpec("mild", 1.0 + shift, 0.1 * shift, (6.0, 0.0, 0.0, 0.0)),
            DomainSpec("strong", 1.0 + 3.0 * shift, 0.25 * shift, (0.0, 6.0, 0.0, 0.0)),
        ),
        seed=seed,
    )


def config_to_json(config: SynthConfig) -> str:
    payload = {
        "classes": config.classes,
        "height": config.height,
        "width": config.width,
        "concentration": config.concentration,
        "smoothing_radius": config.smoothing_radius,
        "sharpness": config.sharpness,
        "seed": config.seed,
        "feature_jitter": config.feature_jitter,
        "calibration_images": config.calibration_images,
        "test_images": config.test_images,
        "ignore_value": config.ignore_value,
        "holdout_classes": list(config.holdout_classes),
        "holdout_logit_damp": config.holdout_logit_damp,
        "channel_noise": config.channel_noise,
        "evidence_floor": config.evidence_floor,
        "domains": [
            {
                key: value
                for key, value in (
                    ("tag", d.tag),
                    ("true_temperature", d.true_temperature),
                    ("logit_noise", d.logit_noise),
                    ("feature_offset", list(d.feature_offset)),
                    ("calibration_images", d.calibration_images),
                    ("test_images", d.test_images),
                )
                if value is not None
            }
            for d in config.domains
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def config_from_json(text: str) -> SynthConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"benchmark config is not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise UsageError("benchmark config must be a JSON object")
    defaults = SynthConfig()
    known = {
        "classes", "height", "width", "concentration", "smoothing_radius", "sharpness", "seed",
        "feature_jitter", "calibration_images", "test_images", "ignore_value",
        "holdout_classes", "holdout_logit_damp", "channel_noise", "evidence_floor", "domains",
    }
    unknown = payload.keys() - known
    if unknown:
        raise UsageError(f"unknown benchmark config keys: {sorted(unknown)}")
    domains = []
    for i, raw in enumerate(payload.get("domains", [])):
        if not isinstance(raw, dict) or "tag" not in raw:
            raise UsageError(f"domain {i}: must be an object with a tag")
        domain_known = {"tag", "true_temperature", "logit_noise", "feature_offset",
                        "calibration_images", "test_images"}
        domain_unknown = raw.keys() - domain_known
        if domain_unknown:
            raise UsageError(f"domain {i}: unknown keys {sorted(domain_unknown)}")
        domains.append(DomainSpec(
            tag=raw["tag"],
            true_temperature=float(raw.get("true_temperature", 1.0)),
            logit_noise=float(raw.get("logit_noise", 0.0)),
            feature_offset=tuple(float(x) for x in raw.get("feature_offset", (0.0, 0.0))),
            calibration_images=raw.get("calibration_images"),
            test_images=raw.get("test_images"),
        ))
    config = SynthConfig(
        classes=int(payload.get("classes", defaults.classes)),
        height=int(payload.get("height", defaults.height)),
        width=int(payload.get("width", defaults.width)),
        domains=tuple(domains) if domains else defaults.domains,
        concentration=float(payload.get("concentration", defaults.concentration)),
        smoothing_radius=int(payload.get("smoothing_radius", defaults.smoothing_radius)),
        sharpness=float(payload.get("sharpness", defaults.sharpness)),
        seed=int(payload.get("seed", defaults.seed)),
        feature_jitter=float(payload.get("feature_jitter", defaults.feature_jitter)),
        calibration_images=int(payload.get("calibration_images", defaults.calibration_images)),
        test_images=int(payload.get("test_images", defaults.test_images)),
        ignore_value=int(payload.get("ignore_value", defaults.ignore_value)),
        holdout_classes=tuple(int(c) for c in payload.get("holdout_classes", ())),
        holdout_logit_damp=float(payload.get("holdout_logit_damp", defaults.holdout_logit_damp)),
        channel_noise=float(payload.get("channel_noise", defaults.channel_noise)),
        evidence_floor=float(payload.get("evidence_floor", defaults.evidence_floor)),
    )
    validate_config(config)
    return config
