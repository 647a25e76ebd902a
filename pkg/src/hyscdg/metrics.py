"""Change detection scores over confusion matrices.

Conventions used throughout:

* Confusion counts are ``counts[truth][pred]``.
* Category 0 is "no change" wherever a matrix mixes change and no-change.
* Degenerate denominators yield a score of 0 plus a machine-readable flag,
  never NaN, so reports can be aggregated blindly.

The kappa-style score on the change matrix zeroes the (no-change, no-change)
cell, computes Cohen's kappa on what remains and scales it by
``exp(change IoU - 1)``; the combined segmentation score is the equal-weight
mean of the binary change IoU and the mean class IoU restricted to pixels
that truly changed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .raster import unpack_trajectory
from .tileio import load_change_png, load_semantic_png, write_json

REPORT_COLUMNS = [
    "dataset",
    "pairs",
    "iou",
    "f1",
    "miou",
    "overall_iou",
    "sek",
    "scs",
    "change_miou",
    "sem_miou",
]


@dataclass
class ConfusionMatrix:
    k: int
    counts: np.ndarray = None  # type: ignore[assignment]
    kind: str = "semantic"  # binary-change | semantic | trajectory

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.k, self.k), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.k, self.k):
            raise ValueError("counts must be K x K")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(
        self,
        truth: np.ndarray,
        pred: np.ndarray,
        valid: Optional[np.ndarray] = None,
    ) -> "ConfusionMatrix":
        """Add per-pixel counts; labels must already be in [0, K)."""
        if truth.shape != pred.shape:
            raise ValueError("truth and prediction differ in shape")
        t = truth.ravel().astype(np.int64)
        p = pred.ravel().astype(np.int64)
        if valid is not None:
            v = valid.ravel().astype(bool)
            t, p = t[v], p[v]
        bad = (t < 0) | (t >= self.k) | (p < 0) | (p >= self.k)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"label out of range at flat pixel {i}: truth={t[i]} pred={p[i]}")
        self.counts += np.bincount(t * self.k + p, minlength=self.k * self.k).reshape(
            self.k, self.k
        )
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.k != self.k:
            raise ValueError("category counts differ")
        self.counts += other.counts
        return self


@dataclass
class BinaryScores:
    iou: float
    f1: float
    precision: float
    recall: float
    degenerate: bool


def binary_scores(matrix: ConfusionMatrix) -> BinaryScores:
    """IoU / F1 / precision / recall of the change class (class 1 of 2)."""
    if matrix.k != 2:
        raise ValueError("binary scores need a 2x2 matrix")
    c = matrix.counts
    tp = int(c[1][1])
    fp = int(c[0][1])
    fn = int(c[1][0])
    degenerate = (tp + fp + fn) == 0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return BinaryScores(iou=iou, f1=f1, precision=precision, recall=recall, degenerate=degenerate)


def sek(matrix: ConfusionMatrix) -> tuple[float, bool]:
    """Kappa on the matrix with the (0, 0) cell removed, scaled by exp(IoU - 1).

    Category 0 must be no-change. Returns (score, degenerate flag); an empty
    matrix after zeroing scores 0 and is flagged.
    """
    q = matrix.counts.astype(np.float64).copy()
    q[0, 0] = 0.0
    total = q.sum()
    if total == 0:
        return 0.0, True
    po = np.trace(q) / total
    pe = float((q.sum(axis=1) * q.sum(axis=0)).sum()) / (total * total)
    if pe >= 1.0:
        kappa = 1.0 if po == 1.0 else 0.0
    else:
        kappa = (po - pe) / (1.0 - pe)
    iou_changed = float(np.diag(q)[1:].sum()) / total
    return math.exp(iou_changed - 1.0) * kappa, False


@dataclass
class MiouScores:
    miou: float
    overall_iou: float
    per_class_iou: list[float]
    change_miou: float
    degenerate: bool


def miou_family(matrix: ConfusionMatrix) -> MiouScores:
    """Per-class IoU, their mean, the micro-averaged IoU, and the mean
    excluding category 0.

    Classes absent from both truth and prediction carry NaN in the per-class
    vector and are excluded from the means.
    """
    c = matrix.counts.astype(np.float64)
    diag = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, diag / np.where(union > 0, union, 1.0), np.nan)
    present = union > 0
    miou = float(per_class[present].mean()) if present.any() else 0.0
    total = c.sum()
    d = diag.sum()
    overall = d / (2 * total - d) if total > 0 else 0.0
    changed = present.copy()
    changed[0] = False
    change_miou = float(per_class[changed].mean()) if changed.any() else 0.0
    return MiouScores(
        miou=miou,
        overall_iou=float(overall),
        per_class_iou=[float(v) for v in per_class],
        change_miou=change_miou,
        degenerate=not present.any(),
    )


def scs(binary_matrix: ConfusionMatrix, semantic_matrix: ConfusionMatrix) -> tuple[float, bool]:
    """Equal-weight mean of binary change IoU and mean class IoU on changed pixels.

    ``semantic_matrix`` must have been accumulated only over pixels that are
    changed in the ground truth.
    """
    bc = binary_scores(binary_matrix)
    sc = miou_family(semantic_matrix)
    return 0.5 * (bc.iou + sc.miou), bc.degenerate or sc.degenerate


@dataclass
class MetricReport:
    dataset: str
    pairs: int
    iou: float
    f1: float
    precision: float
    recall: float
    miou: float
    overall_iou: float
    sek: float
    scs: float
    change_miou: float
    sem_miou: float
    per_class_iou: list[float] = field(default_factory=list)
    trajectory_categories: list[int] = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "pairs": self.pairs,
            "scores": {
                "iou": self.iou,
                "f1": self.f1,
                "precision": self.precision,
                "recall": self.recall,
                "miou": self.miou,
                "overall_iou": self.overall_iou,
                "sek": self.sek,
                "scs": self.scs,
                "change_miou": self.change_miou,
                "sem_miou": self.sem_miou,
            },
            "per_class_iou": [None if math.isnan(v) else v for v in self.per_class_iou],
            "trajectory_categories": self.trajectory_categories,
            "flags": self.flags,
        }


def write_report(report: MetricReport, out_dir: Path) -> tuple[Path, Path]:
    """Emit report.json and the one-row report.csv with the fixed column order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    write_json(json_path, report.to_json())
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        writer.writerow(
            [
                report.dataset,
                report.pairs,
                f"{report.iou:.6f}",
                f"{report.f1:.6f}",
                f"{report.miou:.6f}",
                f"{report.overall_iou:.6f}",
                f"{report.sek:.6f}",
                f"{report.scs:.6f}",
                f"{report.change_miou:.6f}",
                f"{report.sem_miou:.6f}",
            ]
        )
    return json_path, csv_path


# ---------------------------------------------------------------------------
# dataset-level evaluation from rasters
# ---------------------------------------------------------------------------


def evaluate_dataset(truth_root: Path, pred_root: Path, k: int) -> MetricReport:
    """Score predicted packed change maps against a generated dataset.

    Predictions live in ``pred_root/<pair_id>.png`` as 16-bit packed
    trajectories using the same class table as the truth dataset.
    """
    from .assemble import pair_change_packed

    truth_root = Path(truth_root)
    pred_root = Path(pred_root)
    with open(truth_root / "index.json", "r", encoding="utf-8") as fh:
        index = json.load(fh)

    binary = ConfusionMatrix(2, kind="binary-change")
    sem_all = ConfusionMatrix(k, kind="semantic")
    sem_changed = ConfusionMatrix(k, kind="semantic")
    traj_counts: dict[tuple[int, int], int] = {}
    pairs = 0

    for pair in index["pairs"]:
        pred_path = pred_root / f"{pair['pair_id']}.png"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction {pred_path}")
        truth_packed = pair_change_packed(truth_root, pair, k)
        pred_packed = load_change_png(pred_path)
        if pred_packed.shape != truth_packed.shape:
            raise ValueError(f"{pair['pair_id']}: prediction shape mismatch")
        pairs += 1

        t_bin = (truth_packed != 0).astype(np.int64)
        p_bin = (pred_packed != 0).astype(np.int64)
        binary.accumulate(t_bin, p_bin)

        first = load_semantic_png(truth_root / pair["first"]["semantic"]).astype(np.int64)
        second = load_semantic_png(truth_root / pair["second"]["semantic"]).astype(np.int64)
        _, pred_c2 = unpack_trajectory(pred_packed, k)
        pred_second = np.where(pred_packed != 0, pred_c2, first)
        sem_all.accumulate(second, pred_second)
        changed = truth_packed != 0
        if changed.any():
            sem_changed.accumulate(second[changed], pred_second[changed])

        stacked = truth_packed.astype(np.int64) * 65536 + pred_packed.astype(np.int64)
        values, counts = np.unique(stacked, return_counts=True)
        for v, n in zip(values.tolist(), counts.tolist()):
            key = (v // 65536, v % 65536)
            traj_counts[key] = traj_counts.get(key, 0) + n

    seen = {t for t, _ in traj_counts} | {p for _, p in traj_counts}
    categories = [0] + sorted(seen - {0})
    cat_index = {c: i for i, c in enumerate(categories)}
    traj = ConfusionMatrix(max(len(categories), 2), kind="trajectory")
    for (t, p), n in traj_counts.items():
        traj.counts[cat_index[t], cat_index[p]] += n

    b = binary_scores(binary)
    sek_score, sek_flag = sek(traj)
    traj_miou = miou_family(traj)
    scs_score, scs_flag = scs(binary, sem_changed)
    sem_miou = miou_family(sem_all)

    return MetricReport(
        dataset=truth_root.name,
        pairs=pairs,
        iou=b.iou,
        f1=b.f1,
        precision=b.precision,
        recall=b.recall,
        miou=traj_miou.miou,
        overall_iou=traj_miou.overall_iou,
        sek=sek_score,
        scs=scs_score,
        change_miou=traj_miou.change_miou,
        sem_miou=sem_miou.miou,
        per_class_iou=traj_miou.per_class_iou,
        trajectory_categories=categories,
        flags={
            "binary_degenerate": b.degenerate,
            "sek_degenerate": sek_flag,
            "scs_degenerate": scs_flag,
        },
    )
