"""Binarization, confusion counting, segmentation metrics, and report tables.

Conventions, applied uniformly and tested:
- DSC and per-class IoU are 1.0 when both masks are empty.
- Precision / recall / F1 are 0.0 when their denominator is 0.
- Aggregation is per-instance (macro) arithmetic averaging.
- Metrics run in original image coordinates after inverse mapping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BinaryMask, ensure_binary_mask, ensure_probability_mask
from . import dataio

METRIC_NAMES = ("dsc", "precision", "recall", "f1", "iou_foreground", "iou_mean")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def binarize(p_hat, threshold: float = 0.5) -> BinaryMask:
    """Threshold a probability mask; a pixel is 1 iff p >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    pred = ensure_probability_mask(p_hat)
    return (pred >= threshold).astype(np.uint8)


def confusion(pred, truth) -> ConfusionCounts:
    p = ensure_binary_mask(pred).astype(bool)
    t = ensure_binary_mask(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
        tn=int(np.sum(~p & ~t)),
    )


def dsc(pred, truth) -> float:
    """Dice similarity 2*TP / (2*TP + FP + FN); 1.0 when both masks are empty."""
    c = confusion(pred, truth)
    den = 2 * c.tp + c.fp + c.fn
    return 1.0 if den == 0 else 2.0 * c.tp / den


def precision_recall_f1(counts: ConfusionCounts) -> tuple[float, float, float]:
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def iou(pred, truth) -> tuple[float, float]:
    """(foreground IoU, mean IoU over {background, foreground})."""
    c = confusion(pred, truth)
    fg_den = c.tp + c.fp + c.fn
    fg = 1.0 if fg_den == 0 else c.tp / fg_den
    bg_den = c.tn + c.fp + c.fn
    bg = 1.0 if bg_den == 0 else c.tn / bg_den
    return fg, (fg + bg) / 2.0


def instance_metrics(pred, truth) -> dict[str, float]:
    c = confusion(pred, truth)
    precision, recall, f1 = precision_recall_f1(c)
    fg, mean = iou(pred, truth)
    return {
        "dsc": dsc(pred, truth),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "iou_foreground": fg,
        "iou_mean": mean,
    }


@dataclass(frozen=True)
class MetricReport:
    per_instance: tuple[dict, ...]  # {id, class, dsc, precision, recall, f1, iou_*}
    threshold: float
    errors: tuple[dict, ...] = field(default_factory=tuple)

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.per_instance:
            return {name: float("nan") for name in METRIC_NAMES}
        return {
            name: float(np.mean([row[name] for row in self.per_instance]))
            for name in METRIC_NAMES
        }

    def instance_ids(self) -> tuple[str, ...]:
        return tuple(row["id"] for row in self.per_instance)


def evaluate_dataset(bundle, manifest, split: str, threshold: float = 0.5) -> MetricReport:
    """Per-instance box-prompted inference and metrics over one split."""
    from .inference import embed_image, predict_box  # local import: torch-backed

    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    rows: list[dict] = []
    errors: list[dict] = []
    for record in records:
        image = dataio.load_image(record.image_path)
        embedded = None
        for j, inst in enumerate(record.instances):
            instance_id = f"{record.id}:{j}"
            try:
                if embedded is None:
                    embedded = embed_image(bundle, image)
                truth = dataio.instance_mask(record, inst)
                prob, _ = predict_box(bundle, embedded, inst.box)
                pred = binarize(prob, threshold)
                row = {"id": instance_id, "class": inst.class_name}
                row.update(instance_metrics(pred, truth))
                rows.append(row)
            except Exception as exc:  # noqa: BLE001 - per-instance isolation
                errors.append({"id": instance_id, "error": str(exc)})
    return MetricReport(tuple(rows), threshold=threshold, errors=tuple(errors))


def improvement_table(report_a: MetricReport, report_b: MetricReport) -> dict:
    """Per-instance DSC deltas (a - b) and their arithmetic mean."""
    ids_a, ids_b = report_a.instance_ids(), report_b.instance_ids()
    if set(ids_a) != set(ids_b):
        raise ValueError("reports cover different instance ids")
    dsc_b = {row["id"]: row["dsc"] for row in report_b.per_instance}
    deltas = [
        {"id": row["id"], "delta_dsc": row["dsc"] - dsc_b[row["id"]]}
        for row in report_a.per_instance
    ]
    average = float(np.mean([d["delta_dsc"] for d in deltas])) if deltas else 0.0
    return {"per_instance": deltas, "average": average}


def report_from_scores(scores: dict[str, float], threshold: float = 0.5) -> MetricReport:
    """Build a single-metric report from {instance_id: dsc} pairs (external data)."""
    rows = tuple(
        {
            "id": key, "class": "unlabeled", "dsc": value,
            "precision": 0.0, "recall": 0.0, "f1": 0.0,
            "iou_foreground": 0.0, "iou_mean": 0.0,
        }
        for key, value in scores.items()
    )
    return MetricReport(rows, threshold=threshold)


def comparison_records(entries: list[tuple[str, dict]]) -> list[dict]:
    """Machine-readable comparison rows, sorted by F1 descending."""
    if not entries:
        raise ValueError("need at least one report")
    return [
        {
            "model": name,
            "precision": metrics.get("precision"),
            "recall": metrics.get("recall"),
            "f1": metrics.get("f1"),
            "iou_foreground": metrics.get("iou_foreground"),
            "iou_mean": metrics.get("iou_mean"),
        }
        for name, metrics in sorted(entries, key=lambda e: -e[1].get("f1", 0.0))
    ]


def render_comparison(entries: list[tuple[str, dict]]) -> str:
    """Column-aligned comparison table, rows sorted by F1 descending.

    Each entry is (model name, metrics dict with precision/recall/f1 and
    iou_foreground and/or iou_mean); external baselines are supplied as
    plain dicts.
    """
    if not entries:
        raise ValueError("need at least one report")
    header = ("Model", "Precision", "Recall", "F1 score",
              "IOU score (foreground)", "IOU score (mean)")
    rows = []
    for name, metrics in sorted(entries, key=lambda e: -e[1].get("f1", 0.0)):
        rows.append((
            name,
            f"{metrics.get('precision', float('nan')):.3f}",
            f"{metrics.get('recall', float('nan')):.3f}",
            f"{metrics.get('f1', float('nan')):.3f}",
            f"{metrics['iou_foreground']:.3f}" if "iou_foreground" in metrics else "-",
            f"{metrics['iou_mean']:.3f}" if "iou_mean" in metrics else "-",
        ))
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(widths[i]) for i, c in enumerate(row)) for row in rows]
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, directory: str | Path, stem: str = "report") -> list[Path]:
    """Write one structured record per instance plus the aggregate, and a text table."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    jsonl = directory / f"{stem}.jsonl"
    with open(jsonl, "w") as fh:
        for row in report.per_instance:
            fh.write(json.dumps({"kind": "instance", **row}, sort_keys=True) + "\n")
        fh.write(json.dumps(
            {"kind": "aggregate", "threshold": report.threshold, **report.aggregate},
            sort_keys=True,
        ) + "\n")
        for err in report.errors:
            fh.write(json.dumps({"kind": "error", **err}, sort_keys=True) + "\n")
    table = directory / f"{stem}.txt"
    table.write_text(render_comparison([("evaluated", report.aggregate)]))
    return [jsonl, table]
