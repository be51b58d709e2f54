"""Overlap scores, IoU-threshold detection matching and recall/precision reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

DETECTION_IOU = 0.2


def _mask(x):
    return np.asarray(getattr(x, "data", x)) != 0


def iou(a, b) -> float:
    """|a & b| / |a | b| for voxel sets on one grid; 0 when both are empty."""
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    return 0.0 if union == 0 else np.count_nonzero(a & b) / union


def dice_coeff(a, b) -> float:
    """2|a & b| / (|a| + |b|); 1 when both are empty."""
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch {a.shape} vs {b.shape}")
    total = np.count_nonzero(a) + np.count_nonzero(b)
    return 1.0 if total == 0 else 2.0 * np.count_nonzero(a & b) / total


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    tp: int
    fp: int
    fn: int
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    pred_sizes: dict = field(default_factory=dict)
    gt_sizes: dict = field(default_factory=dict)


def pairwise_iou(pred_labels, gt_labels):
    """IoU of every overlapping (pred id, gt id) pair plus the component sizes."""
    p = np.asarray(getattr(pred_labels, "data", pred_labels)).ravel().astype(np.int64)
    g = np.asarray(getattr(gt_labels, "data", gt_labels)).ravel().astype(np.int64)
    if p.shape != g.shape:
        raise ValueError("grid mismatch between prediction and ground truth labels")
    p_ids, p_counts = np.unique(p[p > 0], return_counts=True)
    g_ids, g_counts = np.unique(g[g > 0], return_counts=True)
    p_size = dict(zip(p_ids.tolist(), p_counts.tolist()))
    g_size = dict(zip(g_ids.tolist(), g_counts.tolist()))
    both = (p > 0) & (g > 0)
    pairs = {}
    if both.any():
        key = p[both] * (int(g.max()) + 1) + g[both]
        keys, inter = np.unique(key, return_counts=True)
        base = int(g.max()) + 1
        for k, n in zip(keys.tolist(), inter.tolist()):
            pid, gid = divmod(k, base)
            pairs[(pid, gid)] = n / (p_size[pid] + g_size[gid] - n)
    return pairs, p_size, g_size


def match_detections(pred_labels, gt_labels, iou_threshold=DETECTION_IOU) -> MatchResult:
    """Greedy one-to-one matching in descending IoU among pairs with IoU >= threshold.

    Ties are broken by (pred_id, gt_id). Unmatched predictions are false
    positives and unmatched ground-truth sources false negatives.
    """
    pairs, p_size, g_size = pairwise_iou(pred_labels, gt_labels)
    cands = sorted(
        ((v, pid, gid) for (pid, gid), v in pairs.items() if v >= iou_threshold),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_p, used_g, matched = set(), set(), []
    for v, pid, gid in cands:
        if pid in used_p or gid in used_g:
            continue
        used_p.add(pid)
        used_g.add(gid)
        matched.append((pid, gid, v))
    un_p = sorted(set(p_size) - used_p)
    un_g = sorted(set(g_size) - used_g)
    return MatchResult(matched, len(matched), len(un_p), len(un_g), un_p, un_g, p_size, g_size)


@dataclass
class EvalReport:
    iou_mean: float
    dice_mean: float
    recall: float
    precision: float
    tp: int
    fp: int
    fn: int
    per_source: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def percent(self, name: str) -> float:
        return round(100.0 * getattr(self, name), 1)


def compute_report(match: MatchResult, iou_mean: float = 0.0, dice_mean: float = 0.0) -> EvalReport:
    """Recall tp/(tp+fn) and precision tp/(tp+fp); zero denominators give 0 and a flag."""
    flags = []
    if match.tp + match.fn:
        recall = match.tp / (match.tp + match.fn)
    else:
        recall = 0.0
        flags.append("recall_undefined")
    if match.tp + match.fp:
        precision = match.tp / (match.tp + match.fp)
    else:
        precision = 0.0
        flags.append("precision_undefined")
    rows = []
    by_gt = {gid: (pid, v) for pid, gid, v in match.pairs}
    for gid in sorted(match.gt_sizes):
        pid, v = by_gt.get(gid, (None, 0.0))
        rows.append({"kind": "gt", "gt_id": gid, "pred_id": pid, "n_voxels": match.gt_sizes[gid], "iou": v,
                     "status": "TP" if pid is not None else "FN"})
    for pid in match.unmatched_pred:
        rows.append({"kind": "pred", "gt_id": None, "pred_id": pid, "n_voxels": match.pred_sizes.get(pid, 0),
                     "iou": 0.0, "status": "FP"})
    return EvalReport(iou_mean, dice_mean, recall, precision, match.tp, match.fp, match.fn, rows, flags)


def report_from_counts(tp: int, fp: int, n_gt: int) -> EvalReport:
    match = MatchResult([], tp, fp, n_gt - tp, [], [])
    return compute_report(match)


def evaluate_volumes(pred_labels, gt_labels, iou_threshold=DETECTION_IOU) -> EvalReport:
    """Voxel IoU/Dice of the binary masks plus detection matching for one cube."""
    match = match_detections(pred_labels, gt_labels, iou_threshold)
    return compute_report(match, iou(pred_labels, gt_labels), dice_coeff(pred_labels, gt_labels))


def combine_reports(reports) -> EvalReport:
    """Dataset summary: counts summed, IoU/Dice averaged per cube."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to combine")
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    rows = []
    for i, r in enumerate(reports):
        rows.extend(dict(row, cube=i) for row in r.per_source)
    out = compute_report(MatchResult([], tp, fp, fn, [], []),
                         float(np.mean([r.iou_mean for r in reports])),
                         float(np.mean([r.dice_mean for r in reports])))
    out.per_source = rows
    return out


# -- serialisation --------------------------------------------------------------

SUMMARY_COLUMNS = ("iou", "dice", "recall", "precision", "tp", "fp", "fn")
SOURCE_COLUMNS = ("cube", "kind", "gt_id", "pred_id", "n_voxels", "iou", "status")


def _meta_lines(meta):
    return "".join(f"# {key}={meta[key]}\n" for key in sorted(meta or {}))


def summary_csv(report: EvalReport, meta: dict | None = None) -> str:
    """One-row dataset summary with ``# key=value`` provenance lines."""
    buf = io.StringIO()
    buf.write(_meta_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerow((f"{report.iou_mean:.6f}", f"{report.dice_mean:.6f}", f"{report.recall:.6f}",
                f"{report.precision:.6f}", report.tp, report.fp, report.fn))
    return buf.getvalue()


def sources_csv(report: EvalReport, meta: dict | None = None) -> str:
    """Per-source rows: every ground-truth source (TP/FN) and every false positive."""
    buf = io.StringIO()
    buf.write(_meta_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SOURCE_COLUMNS)
    for row in report.per_source:
        w.writerow(tuple("" if row.get(c) is None else row.get(c, 0) for c in SOURCE_COLUMNS))
    return buf.getvalue()


def report_table(report: EvalReport, method: str = "Unet-LK") -> str:
    """Plain-text table with Segmentation (IoU, Dice) and Detection columns."""
    head = f"{'Method':<16}{'IoU':>8}{'Dice':>8}{'Recall':>9}{'Precision':>11}{'TP':>7}{'FP':>7}"
    line = (f"{method:<16}{report.percent('iou_mean'):>7.1f}%{report.percent('dice_mean'):>7.1f}%"
            f"{report.percent('recall'):>8.1f}%{report.percent('precision'):>10.1f}%{report.tp:>7d}{report.fp:>7d}")
    return "\n".join([head, "-" * len(head), line]) + "\n"
