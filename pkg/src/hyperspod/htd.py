"""Classic target detectors over dual-window local background statistics.

For each pixel the background sample is every pixel inside the ``w_out``
box minus the ``w_in`` box, both centred on the pixel and clipped at the
image border.  Window sums come from integral images computed per block of
rows, on data centred by the global mean to limit cancellation.

Centering conventions: CEM and TCIMF use the uncentred correlation matrix
``R``; SMF and ASD use the covariance ``K`` and background mean ``m``.

Every local matrix ``M`` is regularized as ``M + lam*I`` with
``lam = 1e-6 * trace(M) / N``.  If the Cholesky factorization still fails,
``lam`` is multiplied by 10 up to three times before
:class:`SingularCorrelation` is raised.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import LengthMismatch, SingularCorrelation
from .hsicube import HyperCube, ScoreMap

__all__ = [
    "DualWindow",
    "PriorSpectra",
    "METHODS",
    "RIDGE",
    "local_statistics",
    "regularize",
    "cem_filter",
    "osp_projector",
    "cem",
    "smf",
    "osp",
    "asd",
    "tcimf",
    "detect_all",
    "read_priors_csv",
    "write_priors_csv",
]

RIDGE = 1e-6
RETRIES = 3
CHUNK_ROWS = 8
METHODS = ("cem", "smf", "osp", "asd", "tcimf")


@dataclass(frozen=True)
class DualWindow:
    w_in: int
    w_out: int

    def __post_init__(self):
        if self.w_in < 1 or self.w_in % 2 == 0 or self.w_out % 2 == 0:
            raise ValueError("window sizes must be odd and >= 1")
        if self.w_out <= self.w_in:
            raise ValueError("w_out must exceed w_in")


@dataclass(frozen=True, eq=False)
class PriorSpectra:
    class_id: int
    spectra: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.spectra, dtype=np.float64))
        if s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("a prior needs at least one spectrum")
        object.__setattr__(self, "spectra", s)

    @property
    def bands(self) -> int:
        return self.spectra.shape[1]


def write_priors_csv(priors: Sequence[PriorSpectra], path) -> None:
    """One row per spectrum: ``class_id, v0, ..., v{N-1}``."""
    bands = {p.bands for p in priors}
    if len(bands) > 1:
        raise LengthMismatch("priors disagree on band count")
    n = bands.pop() if bands else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id"] + [f"v{i}" for i in range(n)])
        for p in priors:
            for row in p.spectra:
                w.writerow([p.class_id] + [repr(float(v)) for v in row])


def read_priors_csv(path) -> list[PriorSpectra]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["class_id"]:
        raise ValueError(f"{path}: expected a 'class_id,v0,...' header")
    grouped: dict[int, list[list[float]]] = {}
    for r in rows[1:]:
        if r:
            grouped.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
    return [PriorSpectra(cid, np.array(v)) for cid, v in sorted(grouped.items())]


# ---------------------------------------------------------------------------
# Local statistics
# ---------------------------------------------------------------------------


def _box_sum(ii: np.ndarray, r0, r1, c0, c1):
    """Sum over rows [r0, r1) and cols [c0, c1) from an integral image."""
    return ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]


def _chunk_stats(xc: np.ndarray, win: DualWindow, rows: range):
    """Count, centred first and second moments of the background ring for ``rows``."""
    h, w, n = xc.shape
    ho, hi = win.w_out // 2, win.w_in // 2
    s0, s1 = max(rows.start - ho, 0), min(rows.stop + ho, h)
    slab = xc[s0:s1]
    ii1 = np.zeros((s1 - s0 + 1, w + 1, n))
    ii1[1:, 1:] = slab.cumsum(0).cumsum(1)
    ii2 = np.zeros((s1 - s0 + 1, w + 1, n, n))
    ii2[1:, 1:] = (slab[..., :, None] * slab[..., None, :]).cumsum(0).cumsum(1)

    r = np.arange(rows.start, rows.stop)[:, None]
    c = np.arange(w)[None, :]

    def ring(half):
        r0 = np.clip(r - half, 0, h) - s0
        r1 = np.clip(r + half + 1, 0, h) - s0
        c0 = np.clip(c - half, 0, w)
        c1 = np.clip(c + half + 1, 0, w)
        cnt = (r1 - r0) * (c1 - c0)
        return cnt, _box_sum(ii1, r0, r1, c0, c1), _box_sum(ii2, r0, r1, c0, c1)

    n_o, a_o, b_o = ring(ho)
    n_i, a_i, b_i = ring(hi)
    return (n_o - n_i).astype(np.float64), a_o - a_i, b_o - b_i


def local_statistics(cube: HyperCube, win: DualWindow, rows: range | None = None):
    """``(count, mean, covariance, correlation)`` of each pixel's background ring.

    Shapes: ``(r, W)``, ``(r, W, N)``, ``(r, W, N, N)``, ``(r, W, N, N)``.
    """
    x = cube.data.astype(np.float64)
    g = x.mean(axis=(0, 1))
    rows = rows or range(cube.height)
    return _moments(x - g, g, win, rows)


def _moments(xc, g, win, rows):
    cnt, s1, s2 = _chunk_stats(xc, win, rows)
    if np.any(cnt < 1):
        raise ValueError("background ring is empty; image smaller than the outer window allows")
    m_c = s1 / cnt[..., None]
    cov = s2 / cnt[..., None, None] - m_c[..., :, None] * m_c[..., None, :]
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    mean = m_c + g
    corr = cov + mean[..., :, None] * mean[..., None, :]
    return cnt, mean, cov, corr


def regularize(mats: np.ndarray, ridge: float = RIDGE, retries: int = RETRIES) -> np.ndarray:
    """Add the diagonal loading ladder to a stack of symmetric matrices."""
    mats = np.asarray(mats, dtype=np.float64)
    flat = mats.reshape(-1, mats.shape[-2], mats.shape[-1])
    n = flat.shape[-1]
    eye = np.eye(n)
    lam = ridge * np.trace(flat, axis1=-2, axis2=-1) / n
    out = flat + lam[:, None, None] * eye
    try:
        if np.all(lam > 0):
            np.linalg.cholesky(out)
            return out.reshape(mats.shape)
    except np.linalg.LinAlgError:
        pass
    for p in range(flat.shape[0]):
        if not (np.isfinite(lam[p]) and lam[p] > 0):
            raise SingularCorrelation("local matrix has zero trace")
        for k in range(retries + 1):
            cand = flat[p] + lam[p] * 10.0**k * eye
            try:
                np.linalg.cholesky(cand)
            except np.linalg.LinAlgError:
                continue
            out[p] = cand
            break
        else:
            raise SingularCorrelation(f"regularization failed after {retries} retries")
    return out.reshape(mats.shape)


def cem_filter(R, d) -> np.ndarray:
    """``w = R^-1 d / (d^T R^-1 d)`` for one matrix."""
    z = np.linalg.solve(np.asarray(R, dtype=np.float64), np.asarray(d, dtype=np.float64))
    return z / (np.asarray(d, dtype=np.float64) @ z)


def osp_projector(U) -> np.ndarray:
    """``I - U U^+``, projecting onto the orthogonal complement of ``span(U)``."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    return np.eye(U.shape[0]) - U @ np.linalg.pinv(U)


# ---------------------------------------------------------------------------
# Per-chunk scoring
# ---------------------------------------------------------------------------


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def _score_chunk(method, x, stats, targets, others, bg_rank):
    """Scores ``(k, r, W)`` for the pixels ``x`` ``(r, W, N)``."""
    _, mean, cov, corr = stats
    if method == "cem":
        Z = np.linalg.solve(regularize(corr), np.broadcast_to(targets.T, corr.shape[:-1] + targets.T.shape[-1:]))
        return np.moveaxis(_safe_div(np.einsum("rwnk,rwn->rwk", Z, x), np.einsum("rwnk,kn->rwk", Z, targets)), -1, 0)
    if method in ("smf", "asd"):
        K = regularize(cov)
        dt = targets[None, None] - mean[..., None, :]          # (r, W, k, N)
        xt = x - mean
        rhs = np.concatenate([np.swapaxes(dt, -1, -2), xt[..., None]], axis=-1)
        Z = np.linalg.solve(K, rhs)
        Zd = Z[..., :-1]
        dKx = np.einsum("rwnk,rwn->rwk", Zd, xt)
        dKd = np.einsum("rwnk,rwkn->rwk", Zd, dt)
        if method == "smf":
            out = _safe_div(dKx, dKd)
        else:
            xKx = np.einsum("rwn,rwn->rw", Z[..., -1], xt)[..., None]
            out = _safe_div(dKx**2, dKd * xKx)
        return np.moveaxis(out, -1, 0)
    if method == "tcimf":
        R = regularize(corr)
        k = targets.shape[0]
        U = others if others is not None else np.zeros((0, targets.shape[1]))
        A_all = np.concatenate([targets, U]).T                  # (N, k+u)
        Z = np.linalg.solve(R, np.broadcast_to(A_all, R.shape[:-1] + A_all.shape[-1:]))
        AtZ = np.einsum("nj,rwnl->rwjl", A_all, Z)              # A^T R^-1 A
        AtRx = np.einsum("rwnj,rwn->rwj", Z, x)                 # A^T R^-1 x
        out = np.empty((k,) + x.shape[:2])
        u_idx = np.arange(k, k + U.shape[0])
        for j in range(k):
            idx = np.concatenate([[j], u_idx])
            G = AtZ[..., idx[:, None], idx[None, :]]
            c = np.linalg.pinv(G, rcond=1e-10)[..., :, 0]
            out[j] = np.einsum("rwj,rwj->rw", c, AtRx[..., idx])
        return out
    if method == "osp":
        if bg_rank <= 0:
            P = osp_projector(others.T) if others is not None and len(others) else np.eye(x.shape[-1])
            return np.einsum("kn,nm,rwm->krw", targets, P, x)
        _, vecs = np.linalg.eigh(cov)
        E = vecs[..., -bg_rank:]                                # (r, W, N, q)
        if others is not None and len(others):
            E = np.concatenate([np.broadcast_to(others.T, E.shape[:2] + others.T.shape), E], axis=-1)
        proj = E @ np.linalg.pinv(E, rcond=1e-10)
        Px = x - np.einsum("rwnm,rwm->rwn", proj, x)
        return np.einsum("kn,rwn->krw", targets, Px)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _score_stack(cube: HyperCube, targets, win: DualWindow, method: str, others=None,
                 workers: int = 1, bg_rank: int = 0) -> np.ndarray:
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if targets.shape[1] != cube.bands:
        raise LengthMismatch(f"prior has {targets.shape[1]} bands, cube has {cube.bands}")
    if others is not None:
        others = np.atleast_2d(np.asarray(others, dtype=np.float64))
        if others.size == 0:
            others = None
        elif others.shape[1] != cube.bands:
            raise LengthMismatch("non-target spectra have the wrong band count")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    x = cube.data.astype(np.float64)
    g = x.mean(axis=(0, 1))
    xc = x - g
    needs_window = method != "osp" or bg_rank > 0

    def job(r0):
        rows = range(r0, min(r0 + CHUNK_ROWS, cube.height))
        stats = _moments(xc, g, win, rows) if needs_window else (None, None, None, None)
        return _score_chunk(method, x[rows.start:rows.stop], stats, targets, others, bg_rank)

    starts = range(0, cube.height, CHUNK_ROWS)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(r0) for r0 in starts]
    out = np.concatenate(parts, axis=1)
    if not np.all(np.isfinite(out)):
        raise SingularCorrelation("non-finite detector output")
    return out


def _single(cube, d, win, method, class_id, **kw) -> ScoreMap:
    return ScoreMap(_score_stack(cube, d, win, method, **kw)[0], class_id)


def cem(cube: HyperCube, d, win: DualWindow, class_id: int = 0, workers: int = 1) -> ScoreMap:
    """Constrained energy minimization with the local correlation matrix."""
    return _single(cube, d, win, "cem", class_id, workers=workers)


def smf(cube: HyperCube, d, win: DualWindow, class_id: int = 0, workers: int = 1) -> ScoreMap:
    """Spectral matched filter, normalized so a pixel equal to ``d`` scores 1."""
    return _single(cube, d, win, "smf", class_id, workers=workers)


def asd(cube: HyperCube, d, win: DualWindow, class_id: int = 0, workers: int = 1) -> ScoreMap:
    """Adaptive subspace (cosine) GLRT on background-centred spectra, in [0, 1]."""
    return _single(cube, d, win, "asd", class_id, workers=workers)


def osp(cube: HyperCube, d, win: DualWindow | None = None, others=None, class_id: int = 0,
        workers: int = 1, bg_rank: int = 0) -> ScoreMap:
    """``d^T P x`` with ``P`` projecting out ``others``.

    With ``bg_rank > 0`` the top eigenvectors of each pixel's local
    background covariance are also projected out, and ``win`` is required.
    """
    if bg_rank > 0 and win is None:
        raise ValueError("bg_rank > 0 needs a dual window")
    return _single(cube, d, win or DualWindow(1, 3), "osp", class_id, others=others,
                   workers=workers, bg_rank=bg_rank)


def tcimf(cube: HyperCube, d, win: DualWindow, others=None, class_id: int = 0, workers: int = 1) -> ScoreMap:
    """Target-constrained interference-minimized filter: unit response to ``d``, zero to ``others``."""
    return _single(cube, d, win, "tcimf", class_id, others=others, workers=workers)


def detect_all(cube: HyperCube, priors: Sequence[PriorSpectra], method: str,
               windows: Mapping[int, DualWindow] | DualWindow, workers: int = 1,
               bg_rank: int = 0) -> list[ScoreMap]:
    """One map per class; classes with several spectra keep the per-pixel maximum.

    OSP and TCIMF treat the spectra of every other class as interference.
    """
    maps = []
    for p in priors:
        win = windows if isinstance(windows, DualWindow) else windows[p.class_id]
        others = None
        if method in ("osp", "tcimf"):
            rest = [q.spectra for q in priors if q.class_id != p.class_id]
            others = np.concatenate(rest) if rest else None
        stack = _score_stack(cube, p.spectra, win, method, others=others, workers=workers, bg_rank=bg_rank)
        maps.append(ScoreMap(stack.max(axis=0), p.class_id))
    return maps
