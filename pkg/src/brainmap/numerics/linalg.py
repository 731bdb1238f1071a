"""Dense kernels: checked matmul, row softmax, one-sided Jacobi SVD."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ConfigError, NumericalError, ShapeError
from . import tensor as T


def matmul(a, b):
    """Matrix product; records on the tape when either operand is a Tensor."""
    if isinstance(a, T.Tensor) or isinstance(b, T.Tensor):
        return T.matmul(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(m):
    """Softmax along the last axis with per-row max subtraction."""
    if isinstance(m, T.Tensor):
        return T.softmax(m, axis=-1)
    return T.softmax_array(np.asarray(m, dtype=np.float64), axis=-1)


SVD_METHODS = ("jacobi", "lapack")


@dataclass(frozen=True)
class SvdConfig:
    """``method="lapack"`` delegates to numpy's gesdd driver."""

    method: str = "jacobi"
    max_sweeps: int = 60
    tol: float = 1e-10
    precondition_qr: bool = True


@lru_cache(maxsize=64)
def _round_robin(n: int):
    """Pairings covering every column pair exactly once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_columns(a: np.ndarray, cfg: SvdConfig):
    """Orthogonalise the columns of ``a``; returns (a, V, sweeps, off)."""
    n = a.shape[1]
    # rows of w are columns of a, so pair gathers are contiguous
    w = np.ascontiguousarray(a.T)
    vt = np.eye(n)
    scale = float(np.sum(w * w))
    if n < 2 or scale == 0.0:
        return a, vt.T, 0, 0.0
    rounds = _round_robin(n)
    off = np.inf
    for sweep in range(1, cfg.max_sweeps + 1):
        off_sq = 0.0
        for p, q in rounds:
            wp, wq = w[p], w[q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            off_sq += float(gamma @ gamma)
            active = np.abs(gamma) > 1e-300
            if not active.any():
                continue
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(zeta == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            w[p] = c * wp - s * wq
            w[q] = s * wp + c * wq
            vp, vq = vt[p], vt[q]
            vt[p] = c * vp - s * vq
            vt[q] = s * vp + c * vq
        off = np.sqrt(off_sq) / scale
        if off <= cfg.tol:
            return w.T, vt.T, sweep, off
    raise NumericalError(
        "Jacobi SVD did not converge",
        {"sweeps": cfg.max_sweeps, "off_diagonal": off, "tol": cfg.tol, "shape": a.shape},
    )


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns flagged ``~good`` by an orthonormal completion."""
    if good.all():
        return u
    m, k = u.shape
    keep = u[:, good]
    cand = np.concatenate([keep, np.eye(m)], axis=1)
    q, _ = np.linalg.qr(cand)
    fill = q[:, keep.shape[1]:keep.shape[1] + (k - keep.shape[1])]
    out = u.copy()
    out[:, ~good] = fill
    return out


def thin_svd(m, cfg: SvdConfig | None = None):
    """Thin SVD ``m = U @ diag(S) @ Vt`` via one-sided (Hestenes) Jacobi.

    Singular values are returned in nonincreasing order. Columns of U that
    belong to numerically zero singular values are completed to an
    orthonormal set.
    """
    cfg = cfg or SvdConfig()
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"thin_svd needs a non-empty 2-d matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("thin_svd input has non-finite entries", {"shape": m.shape})
    if cfg.method not in SVD_METHODS:
        raise ConfigError(f"unknown SVD method {cfg.method!r}; expected one of {SVD_METHODS}")
    if cfg.method == "lapack":
        try:
            return np.linalg.svd(m, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("LAPACK SVD did not converge", {"shape": m.shape}) from exc
    rows, cols = m.shape
    if rows < cols:
        u, s, vt = thin_svd(m.T, cfg)
        return vt.T, s, u.T

    if cfg.precondition_qr and rows > cols:
        q, r = np.linalg.qr(m)
        work = r.copy()
    else:
        q, work = None, m.copy()

    work, v, _, _ = _jacobi_columns(work, cfg)
    s = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-s, kind="stable")
    s, work, v = s[order], work[:, order], v[:, order]
    floor = (s[0] if s.size else 0.0) * max(work.shape) * np.finfo(float).eps
    good = s > floor
    u = np.zeros_like(work)
    u[:, good] = work[:, good] / s[good]
    s = np.where(good, s, 0.0)
    if q is not None:
        u = q @ u
    u = _complete_basis(u, good)
    return u, s, v.T
