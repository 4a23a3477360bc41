"""Training objectives over heatmaps, each with its closed-form gradient.

Three objectives are implemented against the same gradient carrier:

* ``structured_loss`` -- a margin-augmented log-sum-exp over all grid
  cells minus the score at the true cell.  Convex in the heatmap values;
  its gradient is softmax-minus-one-hot.
* ``soft_argmax_l2_loss`` -- squared coordinate error of the softmax
  expectation of the grid coordinates.
* ``heatmap_mse_loss`` -- plain squared error against a target grid.

``smoothed_structured_loss`` averages the structured objective over grid
cells drawn from a per-landmark Gaussian, for uncertainty-aware targets.

Gradients are with respect to the heatmap values only; margins never
receive gradient (the candidate cells are a fixed grid, so the margin
table is a constant per call).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from landmarklab.heatmap import Heatmap, coordinate_grids, softmax_tempered
from landmarklab.smoothing import GaussianLabel, sample_label


class MarginKind(enum.Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"
    SMOOTH_L1 = "smooth_l1"


@dataclass(frozen=True)
class MarginSpec:
    """Distance penalty added to every candidate cell's score.

    With ``normalize_coords`` set, coordinates are divided by
    max(width, height) before the distance is taken, which keeps the
    smooth-l1 threshold ``s`` meaningful on any grid size.
    """

    kind: MarginKind = MarginKind.NONE
    s: float = 0.01
    alpha: float = 1.0
    normalize_coords: bool = True

    def __post_init__(self):
        if not isinstance(self.kind, MarginKind):
            raise ValueError(f"unknown margin kind {self.kind!r}")
        if self.kind is MarginKind.SMOOTH_L1 and self.s <= 0:
            raise ValueError(f"smooth-l1 threshold must be positive, got {self.s}")
        if self.alpha < 0:
            raise ValueError(f"margin weight must be nonnegative, got {self.alpha}")


@dataclass(frozen=True)
class StructuredLossConfig:
    epsilon: float = 1.0
    margin: MarginSpec = MarginSpec()

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"temperature must be positive, got {self.epsilon}")


@dataclass
class LossGrad:
    """Loss value plus its gradient with respect to the heatmap values."""

    value: float
    grad: np.ndarray


def _margin_from_diffs(delta: MarginSpec, du, dv):
    """Margin for coordinate differences; du/dv may be scalars or arrays."""
    d1 = np.abs(du) + np.abs(dv)
    if delta.kind is MarginKind.NONE:
        return np.zeros_like(d1)
    if delta.kind is MarginKind.L1:
        return delta.alpha * d1
    if delta.kind is MarginKind.L2:
        return delta.alpha * np.sqrt(du * du + dv * dv)
    d2sq = du * du + dv * dv
    quad = 0.5 / delta.s * d2sq
    lin = d1 - 0.5 * delta.s
    return delta.alpha * np.where(d1 < delta.s, quad, lin)


def margin(
    delta: MarginSpec,
    y: tuple[float, float],
    y_hat: tuple[float, float],
    grid_size: tuple[int, int],
) -> float:
    """Distance penalty between a candidate and the true landmark."""
    scale = float(max(grid_size)) if delta.normalize_coords else 1.0
    du = (float(y_hat[0]) - float(y[0])) / scale
    dv = (float(y_hat[1]) - float(y[1])) / scale
    return float(_margin_from_diffs(delta, du, dv))


def margin_table(delta: MarginSpec, y: tuple[float, float], width: int, height: int) -> np.ndarray:
    """Margin against every grid cell, shape (height, width)."""
    uu, vv = coordinate_grids(width, height)
    scale = float(max(width, height)) if delta.normalize_coords else 1.0
    du = (uu - float(y[0])) / scale
    dv = (vv - float(y[1])) / scale
    return _margin_from_diffs(delta, du, dv)


def structured_loss(h: Heatmap, y, cfg: StructuredLossConfig = StructuredLossConfig()) -> LossGrad:
    """Margin-augmented soft-max-margin objective at the true cell y.

    value = eps * ln sum_k exp((margin_k + h_k) / eps) - h[y], computed with
    max subtraction; grad = p - onehot(y) where p is the tempered softmax of
    the augmented scores, so the gradient sums to zero and grad[y] <= 0.
    As eps -> 0 the value tends to the hinge max_k(margin_k + h_k) - h[y].
    """
    yu, yv = int(y[0]), int(y[1])
    if not (0 <= yu < h.width and 0 <= yv < h.height):
        raise ValueError(f"target cell {(yu, yv)} outside {h.width}x{h.height} grid")
    eps = cfg.epsilon
    aug = margin_table(cfg.margin, (yu, yv), h.width, h.height) + h.values
    m = aug.max()
    z = np.exp((aug - m) / eps)
    total = z.sum()
    value = eps * np.log(total) + m - h.values[yv, yu]
    grad = z / total
    grad[yv, yu] -= 1.0
    return LossGrad(value=float(value), grad=grad)


def soft_argmax_l2_loss(h: Heatmap, y: tuple[float, float]) -> LossGrad:
    """Squared error of the softmax coordinate expectation against y.

    grad_k = 2 (ytilde - y) . p_k (coord_k - ytilde), by the chain rule
    through the expectation.  Can vanish while the argmax is wrong: any
    score grid whose probability mass balances around y has zero loss.
    """
    if not (0 <= y[0] <= h.width - 1 and 0 <= y[1] <= h.height - 1):
        raise ValueError(f"target {y} outside {h.width}x{h.height} grid")
    p = softmax_tempered(h, 1.0).values
    uu, vv = coordinate_grids(h.width, h.height)
    su = float((uu * p).sum())
    sv = float((vv * p).sum())
    ru = su - float(y[0])
    rv = sv - float(y[1])
    value = ru * ru + rv * rv
    grad = 2.0 * p * (ru * (uu - su) + rv * (vv - sv))
    return LossGrad(value=float(value), grad=grad)


def heatmap_mse_loss(h_pred: Heatmap, h_target: Heatmap) -> LossGrad:
    """Summed squared error between two grids; grad = 2 * (pred - target)."""
    if h_pred.values.shape != h_target.values.shape:
        raise ValueError(
            f"shape mismatch: {h_pred.values.shape} vs {h_target.values.shape}"
        )
    diff = h_pred.values - h_target.values
    return LossGrad(value=float((diff * diff).sum()), grad=2.0 * diff)


def smoothed_structured_loss(
    h: Heatmap,
    label: GaussianLabel,
    cfg: StructuredLossConfig,
    n_samples: int,
    rng_seed: int,
) -> LossGrad:
    """Monte Carlo average of the structured loss over jittered target cells.

    Targets are drawn from the label's Gaussian, rounded to the nearest
    in-bounds cell; value and gradient are averaged over the draws.
    """
    cells = sample_label(label, n_samples, rng_seed, (h.width, h.height))
    value = 0.0
    grad = np.zeros_like(h.values)
    for cell in cells:
        lg = structured_loss(h, cell, cfg)
        value += lg.value
        grad += lg.grad
    n = len(cells)
    return LossGrad(value=value / n, grad=grad / n)
