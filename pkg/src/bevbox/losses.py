"""Loss assembly for grid predictions against assigned targets.

Three terms, mirroring a single-stage BEV detection head:

* :func:`classification_loss`: quality focal loss between per-class scores
  and the assignment's soft heatmap weights, averaged over the positive
  count.  ``gamma = 0`` degrades it to a plain weighted cross-entropy.
* :func:`regression_loss_scene`: the RWIoU + center-distance sample loss
  over positive cells, with exact per-cell gradients, normalized by the
  total positive count.
* :func:`iou_prediction_loss`: smooth-L1 between a per-cell confidence
  channel and the rescaled true IoU ``2 * IoU - 1`` of the cell's predicted
  box against its owner, positives only.

:func:`total_loss` recombines the three with scalar weights into a
:class:`LossReport`.  Every loss treats the assignment (ownership, weights,
IoU targets) as a constant: there is deliberately no gradient path through
the assignment itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .geometry import BoxParams8, _check_alpha, rotated_iou_exact
from .gradients import regression_sample_grad, regression_sample_loss

if TYPE_CHECKING:  # pragma: no cover
    from .assignment import AssignmentResult, GroundTruth, PredictionMap

__all__ = [
    "SCORE_EPS",
    "LossWeights",
    "LossReport",
    "PerGtRegression",
    "RegressionSceneLoss",
    "quality_focal",
    "quality_focal_with_grad",
    "smooth_l1",
    "smooth_l1_with_grad",
    "classification_loss",
    "regression_loss_sample",
    "regression_loss_scene",
    "iou_prediction_loss",
    "total_loss",
]

# Stabilizing clamp for scores inside logs and gradient fractions.  The raw
# score is kept in the |q - p| factor so an exact match costs exactly zero.
SCORE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the three loss terms plus the shared alpha."""

    lambda_cls: float = 1.0
    lambda_reg: float = 3.0
    lambda_iou: float = 1.0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        for name in ("lambda_cls", "lambda_reg", "lambda_iou"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"LossWeights.{name} must be non-negative")
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class PerGtRegression:
    """Per-ground-truth regression summary: realized k and mean sample loss."""

    gt_index: int
    k: int
    mean_loss: float


@dataclass
class RegressionSceneLoss:
    """Scene regression loss with its gradient map.

    ``box_grads`` holds the per-cell parameter gradient already scaled by
    ``1 / max(N, 1)``; non-positive cells stay zero.  ``degenerate`` flags a
    scene with no positives, where the loss is defined as 0.
    """

    value: float
    box_grads: np.ndarray
    per_gt: list[PerGtRegression] = field(default_factory=list)
    degenerate: bool = False


@dataclass(frozen=True)
class LossReport:
    """Weighted total with its components and assignment bookkeeping."""

    l_cls: float
    l_reg: float
    l_iou: float
    total: float
    n_positives: int
    per_gt: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "l_cls": self.l_cls,
            "l_reg": self.l_reg,
            "l_iou": self.l_iou,
            "total": self.total,
            "n_positives": self.n_positives,
            "per_gt": [
                {"gt": p.gt_index, "k": p.k, "mean_regression_loss": p.mean_loss}
                for p in self.per_gt
            ],
        }


def quality_focal(p, q, gamma: float = 2.0):
    """Quality focal value ``-|q - p|**gamma * (q log p + (1-q) log(1-p))``.

    Vectorized over numpy arrays; accepts scalars.  ``p`` is clamped to
    ``[SCORE_EPS, 1 - SCORE_EPS]`` inside the logs only, so ``p == q`` gives
    exactly zero even at saturated scores.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p_safe = np.clip(p, SCORE_EPS, 1.0 - SCORE_EPS)
    ce = -(q * np.log(p_safe) + (1.0 - q) * np.log1p(-p_safe))
    value = np.abs(q - p) ** gamma * ce
    if value.ndim == 0:
        return float(value)
    return value


def quality_focal_with_grad(p, q, gamma: float = 2.0):
    """Quality focal value and its derivative w.r.t. ``p``.

    The clamp contributes zero subgradient outside its band, in line with
    the loss definition; the modulating factor keeps the derivative finite
    at saturated scores.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p_safe = np.clip(p, SCORE_EPS, 1.0 - SCORE_EPS)
    diff = np.abs(q - p)
    ce = -(q * np.log(p_safe) + (1.0 - q) * np.log1p(-p_safe))
    mod = diff ** gamma
    value = mod * ce
    if gamma > 0.0:
        d_mod = gamma * diff ** (gamma - 1.0) * np.sign(p - q)
    else:
        d_mod = np.zeros_like(p)
    pass_band = (p >= SCORE_EPS) & (p <= 1.0 - SCORE_EPS)
    d_ce = -(q / p_safe - (1.0 - q) / (1.0 - p_safe)) * pass_band
    return value, d_mod * ce + mod * d_ce


def smooth_l1(d, beta: float = 1.0):
    """Huber-style smooth L1: quadratic within ``beta``, linear outside."""
    d = np.asarray(d, dtype=float)
    a = np.abs(d)
    value = np.where(a < beta, 0.5 * d * d / beta, a - 0.5 * beta)
    if value.ndim == 0:
        return float(value)
    return value


def smooth_l1_with_grad(d, beta: float = 1.0):
    """Smooth L1 value and derivative (``d / beta`` inside, ``sign`` outside)."""
    d = np.asarray(d, dtype=float)
    a = np.abs(d)
    value = np.where(a < beta, 0.5 * d * d / beta, a - 0.5 * beta)
    grad = np.where(a < beta, d / beta, np.sign(d))
    return value, grad


def classification_loss(assignment: "AssignmentResult", preds: "PredictionMap",
                        gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Quality focal loss over all cells and classes, averaged over positives.

    Targets are the assignment's heatmap weights (1 on positives, IoU values
    on cross-region negatives, 0 elsewhere).  Returns the scalar loss and the
    gradient map w.r.t. the scores, scaled by the same ``1 / max(N, 1)``.
    """
    q = assignment.heatmap
    p = preds.scores
    if p.shape != q.shape:
        raise ValueError(f"scores shape {p.shape} does not match heatmap {q.shape}")
    norm = 1.0 / max(assignment.n_positives, 1)
    value, grad = quality_focal_with_grad(p, q, gamma)
    return float(np.sum(value) * norm), grad * norm


def regression_loss_sample(pred: BoxParams8, target: BoxParams8, alpha: float) -> float:
    """Per-sample regression loss: RWIoU loss plus the center-distance term."""
    return regression_sample_loss(pred, target, alpha)


def regression_loss_scene(assignment: "AssignmentResult", preds: "PredictionMap",
                          gts: Sequence["GroundTruth"], alpha: float = 0.5) -> RegressionSceneLoss:
    """Mean per-sample regression loss over every positive cell.

    The normalizer is the total positive count N; each positive cell's
    gradient lands in ``box_grads`` scaled by ``1 / N``.  A scene with no
    positives is degenerate: loss 0, zero gradients, ``degenerate=True``.
    """
    alpha = _check_alpha(alpha)
    rows, cols = preds.boxes.shape[:2]
    box_grads = np.zeros((rows, cols, 8))
    n_pos = assignment.n_positives
    if n_pos == 0:
        return RegressionSceneLoss(0.0, box_grads,
                                   [PerGtRegression(i, 0, 0.0) for i in range(len(gts))],
                                   degenerate=True)
    norm = 1.0 / n_pos
    total = 0.0
    per_gt = []
    for i, gt in enumerate(gts):
        target = BoxParams8.from_box(gt.box)
        cells = assignment.positives[i]
        gt_sum = 0.0
        for cell in cells:
            pred = preds.params_at(cell)
            value, grad = regression_sample_grad(pred, target, alpha)
            gt_sum += value
            box_grads[cell.row, cell.col] += grad.as_array() * norm
        mean = gt_sum / len(cells) if cells else 0.0
        per_gt.append(PerGtRegression(i, len(cells), mean))
        total += gt_sum
    return RegressionSceneLoss(total * norm, box_grads, per_gt)


def iou_prediction_loss(assignment: "AssignmentResult", preds: "PredictionMap",
                        gts: Sequence["GroundTruth"]) -> tuple[float, np.ndarray]:
    """Smooth-L1 between the confidence channel and ``2 * IoU - 1``.

    Positives only, averaged over ``max(N, 1)``; the rescaled-IoU target is a
    constant within the step (no gradient flows into the boxes from here).
    Returns the scalar and the gradient map w.r.t. the confidence channel.
    """
    rows, cols = preds.boxes.shape[:2]
    grads = np.zeros((rows, cols))
    norm = 1.0 / max(assignment.n_positives, 1)
    total = 0.0
    for i, gt in enumerate(gts):
        for cell in assignment.positives[i]:
            iou = rotated_iou_exact(preds.box_at(cell), gt.box)
            target = 2.0 * iou - 1.0
            u = float(preds.iou_conf[cell.row, cell.col])
            value, grad = smooth_l1_with_grad(u - target)
            total += float(value)
            grads[cell.row, cell.col] += float(grad) * norm
    return total * norm, grads


def total_loss(l_cls: float, l_reg: float, l_iou: float, weights: LossWeights,
               n_positives: int = 0, per_gt: Sequence[PerGtRegression] = ()) -> LossReport:
    """Weighted recombination of the three loss terms into a report."""
    total = (weights.lambda_cls * l_cls
             + weights.lambda_reg * l_reg
             + weights.lambda_iou * l_iou)
    return LossReport(l_cls=float(l_cls), l_reg=float(l_reg), l_iou=float(l_iou),
                      total=float(total), n_positives=int(n_positives),
                      per_gt=tuple(per_gt))
