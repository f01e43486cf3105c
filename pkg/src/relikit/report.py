"""Reliability reports and their serializations.

A report is a plain nested structure: per-domain metrics, image-level OOD
AUROC per shifted domain, pixel-level OOD AUROC where unknown-class masks
exist, and a metadata echo of the evaluation settings. Serialization is
deterministic byte for byte: JSON uses sorted keys and Python's float
repr (which round-trips exactly), NaN is never emitted (absent classes
serialize as null), and CSV rows follow a fixed order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .errors import MetricError

DOMAIN_METRIC_ORDER = (
    "n_images", "n_records", "accuracy", "mean_confidence",
    "miou", "ece", "ada_ece", "ks_error", "prr",
)


@dataclass(frozen=True)
class ReliabilityReport:
    meta: dict
    domains: dict[str, dict]
    ood_auroc: dict[str, float] = field(default_factory=dict)
    pixel_ood_auroc: dict[str, float] = field(default_factory=dict)


def to_json_bytes(report: ReliabilityReport) -> bytes:
    payload = {
        "meta": report.meta,
        "domains": report.domains,
        "ood_auroc": report.ood_auroc,
        "pixel_ood_auroc": report.pixel_ood_auroc,
    }
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    return (text + "\n").encode("utf-8")


def from_json_bytes(data: bytes) -> ReliabilityReport:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MetricError(f"report is not valid JSON ({exc})") from exc
    for key in ("meta", "domains"):
        if key not in payload:
            raise MetricError(f"report is missing the {key!r} section")
    return ReliabilityReport(
        meta=payload["meta"],
        domains=payload["domains"],
        ood_auroc=payload.get("ood_auroc", {}),
        pixel_ood_auroc=payload.get("pixel_ood_auroc", {}),
    )


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv_bytes(report: ReliabilityReport) -> bytes:
    """Flat (domain, metric, value) rows; per-class IoU as iou_class_<c>."""
    buffer = io.StringIO(newline="")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["domain", "metric", "value"])
    for domain in sorted(report.domains):
        stats = report.domains[domain]
        for metric in DOMAIN_METRIC_ORDER:
            if metric in stats:
                writer.writerow([domain, metric, _format(stats[metric])])
        for c, value in enumerate(stats.get("per_class_iou", [])):
            writer.writerow([domain, f"iou_class_{c}", _format(value)])
    for domain in sorted(report.ood_auroc):
        writer.writerow([domain, "ood_auroc", _format(report.ood_auroc[domain])])
    for domain in sorted(report.pixel_ood_auroc):
        writer.writerow([domain, "pixel_ood_auroc", _format(report.pixel_ood_auroc[domain])])
    return buffer.getvalue().encode("utf-8")
