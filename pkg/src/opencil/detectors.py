"""Post-hoc rectification of activations and weights.

Four detector kinds share one head-evaluation contract: Base applies the
head unchanged, ReAct clips activations at a threshold fitted on training
activations, DICE sparsifies the head weights by contribution, and SCALE
multiplies activations by a per-sample factor derived from their own
percentile mass. All percentile computations in the package use the
nearest-rank convention implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DETECTOR_KINDS = ("base", "react", "dice", "scale")
DEFAULT_PERCENTILES = {"base": 0.0, "react": 90.0, "dice": 85.0, "scale": 85.0}

__all__ = [
    "DETECTOR_KINDS",
    "DEFAULT_PERCENTILES",
    "Detector",
    "percentile",
    "rectify_react",
    "build_dice_mask",
    "dice_keep_count",
    "rectify_scale",
    "detector_logits",
]


@dataclass(frozen=True)
class Detector:
    """A detector kind plus its percentile parameter.

    Leaving ``percentile`` unset selects the kind's default (90 for
    react, 85 for dice and scale).
    """

    kind: str
    percentile: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(
                f"unknown detector {self.kind!r}; expected one of {DETECTOR_KINDS}"
            )
        p = self.percentile
        if p is None:
            p = DEFAULT_PERCENTILES[self.kind]
        if not 0.0 <= p <= 100.0:
            raise ValueError(f"percentile must lie in [0, 100], got {p}")
        object.__setattr__(self, "percentile", float(p))


def _nearest_rank_index(p: float, n: int) -> int:
    """1-based nearest-rank index into an ascending sort of n values."""
    if p <= 0.0:
        return 1
    # the epsilon absorbs float fuzz like 0.9 * 10 -> 9.000000000000002
    k = math.ceil(p * n / 100.0 - 1e-9)
    return min(max(k, 1), n)


def percentile(values, p: float) -> float:
    """Nearest-rank percentile: the element at 1-based index ceil(p/100 * n).

    p = 0 returns the minimum, p = 100 the maximum.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("percentile of empty sequence")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile must lie in [0, 100], got {p}")
    return float(np.sort(arr)[_nearest_rank_index(p, arr.size) - 1])


def rectify_react(z: np.ndarray, threshold: float) -> np.ndarray:
    """Clip every activation at ``threshold`` from above."""
    if threshold < 0:
        raise ValueError(f"react threshold must be >= 0, got {threshold}")
    return np.minimum(z, threshold)


def dice_keep_count(p: float, width: int) -> int:
    """Entries kept per output row: ceil((100-p)/100 * width), at least 1."""
    k = math.ceil((100.0 - p) * width / 100.0 - 1e-9)
    return min(max(k, 1), width)


def build_dice_mask(weights: np.ndarray, mean_activations: np.ndarray, p: float) -> np.ndarray:
    """Binary keep-mask over a (n_outputs, n_inputs) weight matrix.

    The contribution of weight (i, j) is weights[i, j] times the j-th
    mean training activation; each output row keeps its top
    ceil((100-p)/100 * n_inputs) contributions, breaking ties toward the
    lower input index.
    """
    weights = np.asarray(weights, dtype=np.float64)
    mean_activations = np.asarray(mean_activations, dtype=np.float64)
    if weights.ndim != 2:
        raise ValueError(f"weights must be 2-D, got shape {weights.shape}")
    if mean_activations.shape != (weights.shape[1],):
        raise ValueError(
            f"mean_activations length {mean_activations.shape} does not match "
            f"weight input width {weights.shape[1]}"
        )
    contribution = weights * mean_activations
    keep = dice_keep_count(p, weights.shape[1])
    # stable sort on the negated contributions keeps lower indices first on ties
    order = np.argsort(-contribution, axis=1, kind="stable")
    mask = np.zeros_like(weights)
    rows = np.repeat(np.arange(weights.shape[0]), keep)
    cols = order[:, :keep].ravel()
    mask[rows, cols] = 1.0
    return mask


def rectify_scale(z: np.ndarray, p: float) -> np.ndarray:
    """Scale all activations by exp(r), r the total-to-top activation ratio.

    The top set holds the activations at or above the p-th percentile of
    z; since activations are nonnegative, r >= 1 always. Raises on an
    all-zero vector (callers fall back to the unrectified head there).
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.any(z > 0):
        raise ValueError("all-zero activation vector; scale factor undefined")
    threshold = percentile(z, p)
    top_sum = z[z >= threshold].sum()
    r = z.sum() / top_sum
    return z * math.exp(r)


def detector_logits(head, z: np.ndarray, detector: Detector, stats=None) -> np.ndarray:
    """Head logits after the detector's rectification.

    ``head`` carries weights of shape (H, C) and a bias of shape (C,);
    ``stats`` must provide the fitted react threshold or mean activations
    when the detector needs them.
    """
    z = np.asarray(z, dtype=np.float64)
    kind = detector.kind
    if kind == "base":
        return z @ head.weights + head.bias
    if kind == "react":
        if stats is None:
            raise ValueError("react rectification needs train statistics")
        return rectify_react(z, stats.react_threshold) @ head.weights + head.bias
    if kind == "scale":
        try:
            scaled = rectify_scale(z, detector.percentile)
        except ValueError:
            scaled = z  # all-zero activations: fall back to the plain head
        return scaled @ head.weights + head.bias
    if kind == "dice":
        if stats is None:
            raise ValueError("dice sparsification needs train statistics")
        mask = build_dice_mask(head.weights.T, stats.mean_activations, detector.percentile)
        return z @ (head.weights * mask.T) + head.bias
    raise ValueError(f"unknown detector {kind!r}")
