"""Distribution-separation measures: exact 1D W1, sliced W1, effective covariance rank."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, EmptyInput


def wasserstein1_1d(xs, ys) -> float:
    """Exact 1-Wasserstein distance between two empirical 1D samples."""
    x = np.sort(np.asarray(xs, dtype=np.float64).ravel())
    y = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    if x.size == 0 or y.size == 0:
        raise EmptyInput("wasserstein1_1d needs non-empty samples")
    if x.size == y.size:
        return float(np.abs(x - y).mean())
    # integrate |F_x - F_y| over the merged support
    grid = np.concatenate([x, y])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float((np.abs(fx - fy) * widths).sum())


def random_directions(dim: int, n_proj: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_proj, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_w1(X, Y, n_proj: int = 64, seed: int = 42) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"dimension {X.shape[1]} vs {Y.shape[1]}")
    dirs = random_directions(X.shape[1], n_proj, seed)
    px, py = X @ dirs.T, Y @ dirs.T
    return float(np.mean([wasserstein1_1d(px[:, k], py[:, k]) for k in range(n_proj)]))


def collapse_rank(features, energy: float = 0.99) -> int:
    """Fewest covariance eigenvalues holding ``energy`` of the trace; 0 for no variance."""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if F.size == 0:
        raise EmptyInput("collapse_rank needs features")
    if not 0 < energy <= 1:
        raise ValueError("energy must lie in (0, 1]")
    C = np.cov(F, rowvar=False, bias=True)
    C = np.atleast_2d(C)
    ev = np.clip(np.linalg.eigvalsh(C)[::-1], 0.0, None)
    trace = ev.sum()
    if trace <= 1e-12 * max(1.0, np.abs(F).max() ** 2):
        return 0
    cum = np.cumsum(ev) / trace
    return int(np.searchsorted(cum, energy - 1e-12) + 1)
