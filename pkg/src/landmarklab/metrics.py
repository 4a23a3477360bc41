"""Localization quality metrics: normalized mean error, failure rate, CED/AUC.

Boundary conventions: the failure rate counts samples with error strictly
above the threshold, while the cumulative error distribution counts errors
less than or equal to each threshold, so FR(t) = 1 - CED(t) away from ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from landmarklab.heatmap import LandmarkSet


@dataclass(frozen=True)
class EvalConfig:
    fr_threshold: float = 0.10
    auc_threshold: float = 0.10
    ced_points: int = 1001

    def __post_init__(self):
        if self.fr_threshold <= 0 or self.auc_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.ced_points < 2:
            raise ValueError("need at least two CED points")


@dataclass
class EvalReport:
    per_sample_nme: list
    nme_mean: float
    fr: float
    auc: float
    ced_points: list  # (threshold, fraction) pairs, fraction nondecreasing


def nme(pred: LandmarkSet, gt: LandmarkSet, d: float) -> float:
    """Mean Euclidean landmark error divided by the normalizing distance d."""
    if len(pred) != len(gt):
        raise ValueError(f"landmark count mismatch: {len(pred)} vs {len(gt)}")
    if d <= 0:
        raise ValueError(f"normalizing distance must be positive, got {d}")
    err = np.linalg.norm(pred.points - gt.points, axis=1)
    return float(err.mean() / d)


def failure_rate(nmes, threshold: float) -> float:
    """Fraction of errors strictly greater than the threshold."""
    arr = np.asarray(list(nmes), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty error list")
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return float(np.count_nonzero(arr > threshold) / arr.size)


def auc_ced(nmes, threshold: float, n_points: int = 1001):
    """Area under the cumulative error distribution over [0, threshold].

    CED(t) is the fraction of errors <= t on a uniform grid of n_points
    thresholds; the area is the trapezoidal integral divided by the
    threshold, so the result lies in [0, 1].
    Returns (auc, [(threshold, fraction), ...]).
    """
    arr = np.asarray(list(nmes), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty error list")
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if n_points < 2:
        raise ValueError("need at least two integration points")
    ts = np.linspace(0.0, threshold, n_points)
    ced = (arr[None, :] <= ts[:, None]).mean(axis=1)
    auc = float(np.trapezoid(ced, ts) / threshold)
    return auc, list(zip(ts.tolist(), ced.tolist()))


def evaluate(per_sample_nmes, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Summarize per-sample errors into the full report."""
    errs = [float(x) for x in per_sample_nmes]
    fr = failure_rate(errs, cfg.fr_threshold)
    auc, ced = auc_ced(errs, cfg.auc_threshold, cfg.ced_points)
    return EvalReport(
        per_sample_nme=errs,
        nme_mean=float(np.mean(errs)),
        fr=fr,
        auc=auc,
        ced_points=ced,
    )


def write_report_csv(report: EvalReport, sample_ids, path) -> None:
    """One row per sample plus a trailing summary row."""
    ids = list(sample_ids)
    if len(ids) != len(report.per_sample_nme):
        raise ValueError("sample id count does not match error count")
    with open(path, "w", newline="\n") as f:
        f.write("sample_id,nme\n")
        for sid, e in zip(ids, report.per_sample_nme):
            f.write(f"{sid},{format(e, '.12g')}\n")
        f.write(f"mean,{format(report.nme_mean, '.12g')}\n")


def write_ced_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("threshold,fraction\n")
        for t, frac in report.ced_points:
            f.write(f"{format(t, '.12g')},{format(frac, '.12g')}\n")
