"""KITTI-style disparity accuracy metrics.

Average absolute error, strict > k px outlier rates for k in {2,3,4,5}, and
the official D1 rule, which flags a pixel only when the error exceeds both
3 px and 5% of the true disparity. Aggregation across images is
pixel-weighted. Optional masks restrict evaluation to non-occluded pixels
(Noc) or split it into foreground/background.
"""

import os
from dataclasses import dataclass

import numpy as np

from .pnm import DisparityMap, decode_disp16

OUTLIER_THRESHOLDS = (2, 3, 4, 5)

CSV_HEADER = "image,avg_err,out2,out3,out4,out5,d1,valid_px"


@dataclass(frozen=True)
class MetricRow:
    name: str
    avg_err: float
    outliers: tuple[float, float, float, float]  # > 2, 3, 4, 5 px, percent
    d1: float
    valid_px: int

    def csv(self) -> str:
        o = ",".join(f"{v:.6f}" for v in self.outliers)
        return f"{self.name},{self.avg_err:.6f},{o},{self.d1:.6f},{self.valid_px}"


def _selected(pred: DisparityMap, gt: DisparityMap, mask: np.ndarray | None):
    if pred.values.shape != gt.values.shape:
        raise ValueError(
            f"pred {pred.values.shape} and gt {gt.values.shape} dimensions differ"
        )
    sel = gt.valid if mask is None else (gt.valid & mask)
    if not sel.any():
        raise ValueError("no valid ground-truth pixels under the mask")
    return sel


def avg_abs_error(pred: DisparityMap, gt: DisparityMap, mask: np.ndarray | None = None) -> float:
    """Mean |pred - gt| in pixels over valid (and optionally masked) pixels."""
    sel = _selected(pred, gt, mask)
    return float(np.abs(pred.values - gt.values)[sel].mean())

def outlier_rate(
    pred: DisparityMap, gt: DisparityMap, threshold: float, mask: np.ndarray | None = None
) -> float:
    """Percentage of pixels with |error| strictly above the threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    sel = _selected(pred, gt, mask)
    err = np.abs(pred.values - gt.values)[sel]
    return float((err > threshold).mean() * 100.0)


def d1_rate(pred: DisparityMap, gt: DisparityMap, mask: np.ndarray | None = None) -> float:
    """Official joint rule: outlier iff |err| > 3 px AND |err| > 5% of gt."""
    sel = _selected(pred, gt, mask)
    err = np.abs(pred.values - gt.values)[sel]
    rel = 0.05 * gt.values[sel]
    return float(((err > 3.0) & (err > rel)).mean() * 100.0)


def metric_row(name: str, pred: DisparityMap, gt: DisparityMap, mask: np.ndarray | None = None) -> MetricRow:
    return MetricRow(
        name=name,
        avg_err=avg_abs_error(pred, gt, mask),
        outliers=tuple(outlier_rate(pred, gt, t, mask) for t in OUTLIER_THRESHOLDS),
        d1=d1_rate(pred, gt, mask),
        valid_px=int(_selected(pred, gt, mask).sum()),
    )


def aggregate(rows: list[MetricRow], name: str = "aggregate") -> MetricRow:
    """Pixel-weighted mean of per-image metrics (the KITTI convention)."""
    total = sum(r.valid_px for r in rows)
    if total == 0:
        raise ValueError("nothing to aggregate")

    def wmean(get):
        return sum(get(r) * r.valid_px for r in rows) / total

    return MetricRow(
        name=name,
        avg_err=wmean(lambda r: r.avg_err),
        outliers=tuple(wmean(lambda r, i=i: r.outliers[i]) for i in range(4)),
        d1=wmean(lambda r: r.d1),
        valid_px=total,
    )


def _read_disp(path: str) -> DisparityMap:
    with open(path, "rb") as f:
        return decode_disp16(f.read())


def _mask_from(path: str) -> np.ndarray:
    return _read_disp(path).valid  # nonzero raw value = in mask


@dataclass
class EvalReport:
    variants: dict[str, list[MetricRow]]  # "all", "noc", "fg", "bg" -> rows + aggregate

    def csv(self, variant: str = "all") -> str:
        lines = [CSV_HEADER] + [r.csv() for r in self.variants[variant]]
        return "\n".join(lines) + "\n"


def eval_report(
    pred_dir: str,
    gt_dir: str,
    noc_dir: str | None = None,
    obj_dir: str | None = None,
) -> EvalReport:
    """Evaluate matching filename stems of pred_dir against gt_dir.

    noc_dir supplies non-occlusion masks (PGM16, nonzero = non-occluded);
    obj_dir supplies foreground object masks, which split the All variant
    into fg/bg. Every variant carries per-image rows plus a pixel-weighted
    aggregate row.
    """
    stems = sorted(os.path.splitext(n)[0] for n in os.listdir(gt_dir) if n.endswith(".pgm"))
    if not stems:
        raise ValueError(f"no .pgm ground truth under {gt_dir}")
    variants: dict[str, list[MetricRow]] = {"all": []}
    if noc_dir:
        variants["noc"] = []
    if obj_dir:
        variants["fg"] = []
        variants["bg"] = []
    for stem in stems:
        ppath = os.path.join(pred_dir, stem + ".pgm")
        if not os.path.exists(ppath):
            raise FileNotFoundError(f"missing prediction for {stem}")
        pred = _read_disp(ppath)
        gt = _read_disp(os.path.join(gt_dir, stem + ".pgm"))
        variants["all"].append(metric_row(stem, pred, gt))
        if noc_dir:
            noc = _mask_from(os.path.join(noc_dir, stem + ".pgm"))
            variants["noc"].append(metric_row(stem, pred, gt, noc))
        if obj_dir:
            fg = _mask_from(os.path.join(obj_dir, stem + ".pgm"))
            variants["fg"].append(metric_row(stem, pred, gt, fg))
            variants["bg"].append(metric_row(stem, pred, gt, ~fg))
    for rows in variants.values():
        rows.append(aggregate(rows[:]))
    return EvalReport(variants)
