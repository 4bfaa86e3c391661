"""
Soft-DTW
Differentiable soft-DTW divergence with its exact gradient (backward occupancy DP),
the classic DTW and brute-force path-enumeration oracles, and a torch loss wrapper.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.audio.features import FeatureSequence
from src.utils.errors import ArgumentError, ShapeError

METRICS = ("sqeuclidean", "sqeuclidean_mean")
MAX_BRUTE_FORCE_LEN = 8


@dataclass(frozen=True)
class SoftDtwConfig:
    """Smoothing temperature, pairwise cost and length normalisation."""

    gamma: float = 1.0
    metric: str = "sqeuclidean"
    normalize_by_length: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ArgumentError(f"soft-DTW gamma must be > 0, got {self.gamma}")
        if self.metric not in METRICS:
            raise ArgumentError(f"unknown soft-DTW metric {self.metric!r}; choose from {METRICS}")


@dataclass
class AlignmentResult:
    value: float
    grad_x: np.ndarray
    soft_alignment: np.ndarray


def soft_min(values: Sequence[float], gamma: float) -> float:
    """-gamma * log(sum(exp(-v / gamma))), with gamma == 0 meaning the hard min."""
    values = [float(v) for v in values]
    if not values:
        raise ArgumentError("soft_min needs at least one value")
    if gamma < 0:
        raise ArgumentError(f"gamma must be >= 0, got {gamma}")
    lowest = min(values)
    if gamma == 0 or math.isinf(lowest):
        return lowest
    total = 0.0
    for v in values:
        total += math.exp(-(v - lowest) / gamma)
    return lowest - gamma * math.log(total)


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, FeatureSequence):
        x = x.numpy()
    elif isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"sequence must be (T, d), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ArgumentError("sequences must be non-empty")
    return arr


def _check_pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _as_matrix(x), _as_matrix(y)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"channel mismatch: {x.shape[1]} vs {y.shape[1]}")
    return x, y


def pairwise_cost(x: np.ndarray, y: np.ndarray, metric: str = "sqeuclidean") -> np.ndarray:
    """(T_x, T_y) matrix of squared Euclidean distances, optionally per channel."""
    diff = x[:, None, :] - y[None, :, :]
    cost = np.sum(diff * diff, axis=-1)
    if metric == "sqeuclidean_mean":
        cost = cost / x.shape[1]
    return cost


def soft_dtw_forward(cost: np.ndarray, gamma: float) -> np.ndarray:
    """Accumulated-cost table R with an infinite border, shape (n + 2, m + 2)."""
    n, m = cost.shape
    R = np.full((n + 2, m + 2), np.inf)
    R[0, 0] = 0.0
    c = cost.tolist()
    rows = R.tolist()
    for i in range(1, n + 1):
        prev, cur = rows[i - 1], rows[i]
        ci = c[i - 1]
        for j in range(1, m + 1):
            r0, r1, r2 = prev[j - 1], prev[j], cur[j - 1]
            lowest = min(r0, r1, r2)
            if gamma == 0:
                cur[j] = ci[j - 1] + lowest
                continue
            total = 0.0
            for r in (r0, r1, r2):
                if r != math.inf:
                    total += math.exp(-(r - lowest) / gamma)
            cur[j] = ci[j - 1] + lowest - gamma * math.log(total)
    return np.array(rows)


def soft_dtw_backward(cost: np.ndarray, R: np.ndarray, gamma: float) -> np.ndarray:
    """Expected path occupancy E = dR[n, m] / dcost, shape (n, m)."""
    n, m = cost.shape
    D = np.zeros((n + 2, m + 2))
    D[1 : n + 1, 1 : m + 1] = cost
    R = R.copy()
    R[:, m + 1] = -np.inf
    R[n + 1, :] = -np.inf
    R[n + 1, m + 1] = R[n, m]
    E = np.zeros((n + 2, m + 2))
    E[n + 1, m + 1] = 1.0
    Rl, Dl, El = R.tolist(), D.tolist(), E.tolist()
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            rij = Rl[i][j]
            a = math.exp((Rl[i + 1][j] - rij - Dl[i + 1][j]) / gamma)
            b = math.exp((Rl[i][j + 1] - rij - Dl[i][j + 1]) / gamma)
            c = math.exp((Rl[i + 1][j + 1] - rij - Dl[i + 1][j + 1]) / gamma)
            El[i][j] = El[i + 1][j] * a + El[i][j + 1] * b + El[i + 1][j + 1] * c
    return np.array(El)[1 : n + 1, 1 : m + 1]


def _hard_path_occupancy(R: np.ndarray) -> np.ndarray:
    """0/1 occupancy of one optimal path, backtracked through R."""
    n, m = R.shape[0] - 2, R.shape[1] - 2
    E = np.zeros((n, m))
    i, j = n, m
    while True:
        E[i - 1, j - 1] = 1.0
        if i == 1 and j == 1:
            break
        moves = [(R[i - 1, j - 1], i - 1, j - 1), (R[i - 1, j], i - 1, j), (R[i, j - 1], i, j - 1)]
        _, i, j = min(moves, key=lambda t: t[0])
    return E


def _grad_from_occupancy(x: np.ndarray, y: np.ndarray, E: np.ndarray, metric: str) -> np.ndarray:
    # d/dx_i sum_j E_ij ||x_i - y_j||^2 = 2 (rowsum_i x_i - sum_j E_ij y_j)
    grad = 2.0 * (E.sum(axis=1)[:, None] * x - E @ y)
    if metric == "sqeuclidean_mean":
        grad = grad / x.shape[1]
    return grad


def soft_dtw(
    x, y, cfg: SoftDtwConfig = SoftDtwConfig(), gamma: Optional[float] = None
) -> AlignmentResult:
    """Soft-DTW divergence between two (T, d) sequences with its gradient in x.

    `gamma` overrides cfg.gamma and may be 0 (the hard-min limit).
    """
    x, y = _check_pair(x, y)
    g = cfg.gamma if gamma is None else float(gamma)
    if g < 0:
        raise ArgumentError(f"gamma must be >= 0, got {g}")
    return _soft_dtw_gamma(x, y, g, cfg.metric, cfg.normalize_by_length)


def _soft_dtw_gamma(x, y, gamma, metric="sqeuclidean", normalize_by_length=False) -> AlignmentResult:
    cost = pairwise_cost(x, y, metric)
    R = soft_dtw_forward(cost, gamma)
    value = float(R[x.shape[0], y.shape[0]])
    if gamma == 0:
        E = _hard_path_occupancy(R)
    else:
        E = soft_dtw_backward(cost, R, gamma)
    grad = _grad_from_occupancy(x, y, E, metric)
    if normalize_by_length:
        scale = 1.0 / (x.shape[0] + y.shape[0])
        value, grad = value * scale, grad * scale
    return AlignmentResult(value=value, grad_x=grad, soft_alignment=np.clip(E, 0.0, 1.0))


def classic_dtw(x, y, metric: str = "sqeuclidean") -> float:
    """Hard-min DTW; identical to soft-DTW at gamma = 0."""
    x, y = _check_pair(x, y)
    R = soft_dtw_forward(pairwise_cost(x, y, metric), 0.0)
    return float(R[x.shape[0], y.shape[0]])


def _monotone_path_costs(cost: np.ndarray) -> List[float]:
    n, m = cost.shape
    costs: List[float] = []

    def walk(i: int, j: int, acc: float) -> None:
        acc += cost[i, j]
        if i == n - 1 and j == m - 1:
            costs.append(acc)
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return costs


def brute_force_soft_dtw(x, y, gamma: float, metric: str = "sqeuclidean") -> float:
    """-gamma * log sum over every monotone path of exp(-cost / gamma)."""
    x, y = _check_pair(x, y)
    if x.shape[0] > MAX_BRUTE_FORCE_LEN or y.shape[0] > MAX_BRUTE_FORCE_LEN:
        raise ArgumentError(
            f"path enumeration limited to {MAX_BRUTE_FORCE_LEN} frames per sequence, "
            f"got {x.shape[0]} x {y.shape[0]}"
        )
    costs = _monotone_path_costs(pairwise_cost(x, y, metric))
    return soft_min(costs, gamma)


def soft_dtw_grad_check(x, y, cfg: SoftDtwConfig, h: float = 1e-4) -> float:
    """Max error of grad_x against central differences, relative to the largest gradient entry."""
    x, y = _check_pair(x, y)
    analytic = soft_dtw(x, y, cfg).grad_x
    numeric = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        numeric[idx] = (soft_dtw(xp, y, cfg).value - soft_dtw(xm, y, cfg).value) / (2 * h)
    err = float(np.max(np.abs(analytic - numeric)))
    scale = float(max(np.max(np.abs(analytic)), np.max(np.abs(numeric))))
    if scale < 1e-8:
        return err
    return err / scale


class _SoftDTWFunction(torch.autograd.Function):
    """Soft-DTW value of a cost matrix; backward multiplies by the occupancy E."""

    @staticmethod
    def forward(ctx, cost: torch.Tensor, gamma: float):
        c = cost.detach().cpu().double().numpy()
        R = soft_dtw_forward(c, gamma)
        n, m = c.shape
        E = soft_dtw_backward(c, R, gamma)
        ctx.save_for_backward(torch.from_numpy(E).to(dtype=cost.dtype, device=cost.device))
        return cost.new_tensor(R[n, m])

    @staticmethod
    def backward(ctx, grad_output):
        (E,) = ctx.saved_tensors
        return grad_output * E, None


class SoftDTWLoss(torch.nn.Module):
    """Soft-DTW between (T_x, d) and (T_y, d) torch tensors, differentiable in both."""

    def __init__(self, cfg: SoftDtwConfig = SoftDtwConfig()):
        super().__init__()
        self.cfg = cfg

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != y.shape[-1]:
            raise ShapeError(f"channel mismatch: {x.shape[-1]} vs {y.shape[-1]}")
        diff = x.unsqueeze(1) - y.unsqueeze(0)
        cost = (diff * diff).sum(dim=-1)
        if self.cfg.metric == "sqeuclidean_mean":
            cost = cost / x.shape[-1]
        value = _SoftDTWFunction.apply(cost, float(self.cfg.gamma))
        if self.cfg.normalize_by_length:
            value = value / (x.shape[0] + y.shape[0])
        return value
