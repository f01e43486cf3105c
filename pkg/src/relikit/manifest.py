"""Dataset manifests.

A manifest is a JSON file that binds tensor files into a dataset:

.. code-block:: json

    {
      "classes": 5,
      "ignore_value": 255,
      "entries": [
        {
          "image_id": "id-cal-000",
          "split": "calibration",
          "domain": "id",
          "logits": "data/id-cal-000.logits.bin",
          "labels": "data/id-cal-000.labels.bin",
          "feature": "data/id-cal-000.feature.bin",
          "image": "data/id-cal-000.image.bin",
          "ood_mask": "data/id-cal-000.mask.bin"
        }
      ]
    }

``logits`` and ``labels`` are required per entry; ``feature`` (per-image
descriptor for cluster calibration), ``image`` (per-pixel channels for the
temperature regressor) and ``ood_mask`` (unknown-class pixels) are optional.
Relative paths are resolved against the manifest's directory. ``split`` is
``calibration`` or ``test``. ``ignore_value`` labels pixels excluded from
every metric and fit; it must not collide with a class index. Entries are
sorted by ``image_id`` at load so downstream results do not depend on the
order they were listed in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_io
from .errors import ManifestError

SPLITS = ("calibration", "test")
DEFAULT_IGNORE = 255


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    split: str
    domain: str
    logits: str
    labels: str
    feature: str | None = None
    image: str | None = None
    ood_mask: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    classes: int
    ignore_value: int
    entries: tuple[ManifestEntry, ...]
    root: Path = field(default_factory=Path)

    def resolve(self, relpath: str) -> Path:
        path = Path(relpath)
        return path if path.is_absolute() else self.root / path

    def select(self, split: str | None = None, domain: str | None = None) -> list[ManifestEntry]:
        out = []
        for entry in self.entries:
            if split is not None and entry.split != split:
                continue
            if domain is not None and entry.domain != domain:
                continue
            out.append(entry)
        return out

    def domains(self) -> list[str]:
        return sorted({entry.domain for entry in self.entries})


def _require(condition: bool, message: str):
    if not condition:
        raise ManifestError(message)


def _parse_entry(raw: dict, index: int) -> ManifestEntry:
    _require(isinstance(raw, dict), f"entry {index}: not a JSON object")
    for key in ("image_id", "split", "domain", "logits", "labels"):
        _require(key in raw, f"entry {index}: missing required field {key!r}")
        _require(isinstance(raw[key], str) and raw[key], f"entry {index}: field {key!r} must be a non-empty string")
    known = {"image_id", "split", "domain", "logits", "labels", "feature", "image", "ood_mask"}
    unknown = raw.keys() - known
    _require(not unknown, f"entry {index}: unknown fields {sorted(unknown)}")
    for key in ("feature", "image", "ood_mask"):
        if key in raw:
            _require(
                isinstance(raw[key], str) and raw[key],
                f"entry {index}: field {key!r} must be a non-empty string when present",
            )
    _require(raw["split"] in SPLITS, f"entry {index}: split must be one of {SPLITS}, got {raw['split']!r}")
    return ManifestEntry(
        image_id=raw["image_id"],
        split=raw["split"],
        domain=raw["domain"],
        logits=raw["logits"],
        labels=raw["labels"],
        feature=raw.get("feature"),
        image=raw.get("image"),
        ood_mask=raw.get("ood_mask"),
    )


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest, checking referenced files exist."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: manifest is not valid JSON ({exc})") from exc
    _require(isinstance(raw, dict), f"{path}: manifest must be a JSON object")
    for key in ("classes", "ignore_value", "entries"):
        _require(key in raw, f"{path}: missing top-level field {key!r}")
    classes = raw["classes"]
    ignore_value = raw["ignore_value"]
    _require(isinstance(classes, int) and not isinstance(classes, bool) and classes >= 2,
             f"{path}: classes must be an integer >= 2, got {classes!r}")
    _require(isinstance(ignore_value, int) and not isinstance(ignore_value, bool),
             f"{path}: ignore_value must be an integer, got {ignore_value!r}")
    _require(0 <= ignore_value <= np.iinfo(np.uint16).max,
             f"{path}: ignore_value must fit in uint16, got {ignore_value}")
    _require(ignore_value >= classes,
             f"{path}: ignore_value {ignore_value} collides with class indices [0, {classes})")
    _require(isinstance(raw["entries"], list) and raw["entries"],
             f"{path}: entries must be a non-empty list")
    entries = [_parse_entry(item, i) for i, item in enumerate(raw["entries"])]
    seen: set[str] = set()
    for entry in entries:
        _require(entry.image_id not in seen, f"{path}: duplicate image_id {entry.image_id!r}")
        seen.add(entry.image_id)
    manifest = DatasetManifest(
        classes=classes,
        ignore_value=ignore_value,
        entries=tuple(sorted(entries, key=lambda e: e.image_id)),
        root=path.parent,
    )
    for entry in manifest.entries:
        for key in ("logits", "labels", "feature", "image", "ood_mask"):
            rel = getattr(entry, key)
            if rel is not None and not manifest.resolve(rel).is_file():
                raise ManifestError(f"{path}: entry {entry.image_id!r} references missing {key} file {rel!r}")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> Path:
    """Write a manifest as JSON; entry paths are stored as given."""
    path = Path(path)
    payload = {
        "classes": manifest.classes,
        "ignore_value": manifest.ignore_value,
        "entries": [
            {
                key: value
                for key, value in (
                    ("image_id", entry.image_id),
                    ("split", entry.split),
                    ("domain", entry.domain),
                    ("logits", entry.logits),
                    ("labels", entry.labels),
                    ("feature", entry.feature),
                    ("image", entry.image),
                    ("ood_mask", entry.ood_mask),
                )
                if value is not None
            }
            for entry in manifest.entries
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_features(manifest: DatasetManifest, entries: list[ManifestEntry]) -> tuple[list[str], np.ndarray]:
    """Load per-image feature vectors for ``entries`` into one (n, D) matrix.

    Raises when an entry lacks a feature or when dimensions disagree.
    """
    ids, vectors = [], []
    for entry in entries:
        if entry.feature is None:
            raise ManifestError(f"entry {entry.image_id!r} has no feature vector")
        vectors.append(tensor_io.read_feature(manifest.resolve(entry.feature)))
        ids.append(entry.image_id)
    dims = {v.shape[0] for v in vectors}
    if len(dims) > 1:
        raise ManifestError(f"feature dimensions disagree across entries: {sorted(dims)}")
    return ids, np.stack(vectors).astype(np.float64)
