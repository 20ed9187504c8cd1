"""Monte Carlo fit of ``F(m) = A p^m + B`` under box constraints, and the
interleaved gate-fidelity estimator built on two fitted decay rates."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

A_BOUNDS = (0.4, 0.5)
B_BOUNDS = (0.48, 0.52)
P_BOUNDS = (0.0, 1.0)
GRID_POINTS = 41
P_TOL = 1e-12
MC_P_TOL = 1e-8
DRAW_CHUNK = 32768
DEFAULT_MC_SAMPLES = 10**6
CI_MC_SAMPLES = 10**5
_GOLDEN = (math.sqrt(5) - 1) / 2


class FitError(ValueError):
    """The data cannot be fitted."""


@dataclass(frozen=True)
class FitResult:
    A: float
    sigma_A: float
    p: float
    sigma_p: float
    B: float
    sigma_B: float
    samples_used: int
    boundary_hits: dict = field(default_factory=dict)
    points: tuple = ()
    seed: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["points"] = [list(pt) for pt in self.points]
        d["constraints"] = {"A": list(A_BOUNDS), "B": list(B_BOUNDS), "p": list(P_BOUNDS)}
        return d


@dataclass(frozen=True)
class FidelityEstimate:
    F: float
    sigma: float
    p_ref_used: float
    p_int_used: float
    samples_used: int = 1
    rejected: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _clip(v, bounds):
    return np.clip(v, bounds[0], bounds[1])


def _solve_ab(k, sx, sxx, sf, sxf, objective_only: bool = False):
    """Box-constrained least squares for ``f ~ A x + B`` in closed form.

    Takes the sufficient statistics ``sum x``, ``sum x^2``, ``sum f`` and
    ``sum x f`` (broadcastable arrays). The problem is a convex quadratic
    in two variables, so the minimiser is either the free solution or lies
    on one of the four box edges, where the remaining variable is solved
    and clipped. Returns ``(A, B, objective)`` with the objective offset by
    the constant ``sum f^2``.
    """
    det = k * sxx - sx * sx
    ok = det > 1e-300
    inv_det = np.where(ok, 1.0, 0.0) / np.where(ok, det, 1.0)
    inv_xx = np.where(sxx > 0, 1.0 / np.where(sxx > 0, sxx, 1.0), 0.0)

    def obj(a, b):
        return a * (a * sxx - 2 * sxf + 2 * b * sx) + b * (k * b - 2 * sf)

    a_free = (k * sxf - sx * sf) * inv_det
    b_free = (sxx * sf - sx * sxf) * inv_det
    inside = (
        ok & (a_free >= A_BOUNDS[0]) & (a_free <= A_BOUNDS[1])
        & (b_free >= B_BOUNDS[0]) & (b_free <= B_BOUNDS[1])
    )
    best = np.where(inside, obj(a_free, b_free), np.inf)
    best_a, best_b = a_free, b_free
    edges = [(a0, np.clip((sf - a0 * sx) / k, *B_BOUNDS)) for a0 in A_BOUNDS]
    edges += [(np.clip((sxf - b0 * sx) * inv_xx, *A_BOUNDS), b0) for b0 in B_BOUNDS]
    for a, b in edges:
        c = obj(a, b)
        if objective_only:
            np.minimum(best, c, out=best)
            continue
        take = c < best
        best = np.where(take, c, best)
        best_a = np.where(take, a, best_a)
        best_b = np.where(take, b, best_b)
    return best_a, best_b, best


def _grid_objective(m, f, grid):
    """Profiled objective on the p grid for every row of ``f``: ``(n, g)``."""
    x = grid[:, None] ** m[None, :]
    sxf = f @ x.T
    _, _, obj = _solve_ab(len(m), x.sum(1), (x * x).sum(1), f.sum(1)[:, None], sxf, objective_only=True)
    return obj


def _profile(p, m, f):
    """Best (A, B) and residual sum of squares at one ``p`` per row of ``f``.

    The residuals are formed explicitly so the objective keeps full
    precision near an exact fit.
    """
    # column loops: k is tiny, and reductions over a short axis are slow
    xs = [p**mj for mj in m]
    fs = [f[:, j] for j in range(len(m))]
    sx = sum(xs)
    sxx = sum(x * x for x in xs)
    sf = sum(fs)
    sxf = sum(x * fj for x, fj in zip(xs, fs))
    a, b, _ = _solve_ab(len(m), sx, sxx, sf, sxf)
    a = np.broadcast_to(a, p.shape)
    b = np.broadcast_to(b, p.shape)
    rss = sum((fj - a * x - b) ** 2 for x, fj in zip(xs, fs))
    return a, b, rss


def _fit_batch(m: np.ndarray, f: np.ndarray, grid: np.ndarray, tol: float = P_TOL):
    """Fit every row of ``f``: grid search on p, then golden-section search
    in the bracket around the best grid point."""
    n = f.shape[0]
    i = np.argmin(_grid_objective(m, f, grid), axis=1)
    lo = grid[np.maximum(i - 1, 0)]
    hi = grid[np.minimum(i + 1, len(grid) - 1)]
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc = _profile(c, m, f)[2]
    fd = _profile(d, m, f)[2]
    while np.max(hi - lo) > tol:
        left = fc < fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        new = np.where(left, hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo))
        fnew = _profile(new, m, f)[2]
        c, d, fc, fd = (
            np.where(left, new, d), np.where(left, c, new),
            np.where(left, fnew, fd), np.where(left, fc, fnew),
        )
    # compare the refined point with the bracket ends, which include p = 0 and 1
    cands = np.stack([lo, 0.5 * (lo + hi), hi], axis=1)
    objs = np.stack([_profile(cands[:, j], m, f)[2] for j in range(3)], axis=1)
    p = cands[np.arange(n), np.argmin(objs, axis=1)]
    a, b, _ = _profile(p, m, f)
    return a, p, b


def _in_box(a, p, b) -> bool:
    return (A_BOUNDS[0] <= a <= A_BOUNDS[1] and B_BOUNDS[0] <= b <= B_BOUNDS[1]
            and P_BOUNDS[0] <= p <= P_BOUNDS[1])


def _polish(m, f, a, p, b, steps: int = 8):
    """Gauss-Newton steps on the full three-parameter problem, kept only
    while they stay feasible and do not increase the residual."""
    def sse(a, p, b):
        r = f - a * p**m - b
        return float(r @ r)

    best = sse(a, p, b)
    for _ in range(steps):
        r = f - a * p**m - b
        jac = np.stack([p**m, a * m * p ** (m - 1), np.ones_like(m)], axis=1)
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        na, np_, nb = a + step[0], p + step[1], b + step[2]
        if not _in_box(na, np_, nb):
            break
        new = sse(na, np_, nb)
        if new > best:
            break
        a, p, b, best = na, np_, nb, new
    return a, p, b


def _check_points(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = [tuple(float(v) for v in pt) for pt in points]
    if len(pts) < 3:
        raise FitError(f"need at least 3 points, got {len(pts)}")
    arr = np.array(pts, dtype=float)
    if arr.shape[1] != 3:
        raise FitError("points must be (m, F, sigma) triples")
    m, f, s = arr.T
    if len(np.unique(m)) < 3:
        raise FitError("need at least 3 distinct sequence lengths")
    if np.any(s < 0) or not np.all(np.isfinite(arr)):
        raise FitError("sigmas must be non-negative and all values finite")
    return m, f, s


def _boundary_hits(a, p, b) -> dict:
    tol = 1e-9
    out = {}
    for name, v, bounds in (("A", a, A_BOUNDS), ("p", p, P_BOUNDS), ("B", b, B_BOUNDS)):
        out[name] = int(np.sum((v <= bounds[0] + tol) | (v >= bounds[1] - tol)))
    return out


def fit_decay(
    points: Sequence[tuple[float, float, float]],
    mc_samples: int = CI_MC_SAMPLES,
    seed: int | None = 0,
    threads: int = 1,
    grid_points: int = GRID_POINTS,
) -> FitResult:
    """Monte Carlo constrained fit of ``F(m) = A p^m + B``.

    Each draw perturbs every F by a Gaussian of its sigma and is fitted
    with ``A`` in [0.4, 0.5], ``B`` in [0.48, 0.52] and ``p`` in [0, 1].
    Reports the mean and standard deviation of each parameter over draws
    and how many draws ended on a constraint. Draws come in fixed-size
    chunks with their own seed streams, so results do not depend on
    ``threads``. With every sigma zero a single fit is returned.
    """
    m, f, s = _check_points(points)
    if mc_samples < 1:
        raise FitError("mc_samples must be positive")
    grid = np.linspace(*P_BOUNDS, grid_points)
    pts = tuple((float(a), float(b), float(c)) for a, b, c in zip(m, f, s))
    if not np.any(s > 0):
        a, p, b = (float(v[0]) for v in _fit_batch(m, f[None], grid))
        a, p, b = map(float, _polish(m, f, a, p, b))
        return FitResult(a, 0.0, p, 0.0, b, 0.0, 1, _boundary_hits(*map(np.atleast_1d, (a, p, b))), pts, seed)

    root = np.random.SeedSequence(seed)
    starts = list(range(0, mc_samples, DRAW_CHUNK))

    def chunk(c):
        size = min(DRAW_CHUNK, mc_samples - starts[c])
        rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(c,)))
        draws = f + rng.standard_normal((size, len(f))) * s
        return _fit_batch(m, draws, grid, MC_P_TOL)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, range(len(starts))))
    else:
        parts = [chunk(c) for c in range(len(starts))]
    a, p, b = (np.concatenate([q[j] for q in parts]) for j in range(3))
    ok = np.isfinite(a) & np.isfinite(p) & np.isfinite(b)
    if not np.any(ok):
        raise FitError("no Monte Carlo draw could be fitted")
    a, p, b = a[ok], p[ok], b[ok]
    return FitResult(
        float(a.mean()), float(a.std()), float(p.mean()), float(p.std()),
        float(b.mean()), float(b.std()), int(ok.sum()), _boundary_hits(a, p, b), pts, seed,
    )


def gate_fidelity(p_ref: float, p_int: float, d: int = 2) -> float:
    return 1 - (d - 1) / d * (1 - p_int / p_ref)


def estimate_gate_fidelity(
    ref: FitResult,
    inter: FitResult,
    mc_samples: int = CI_MC_SAMPLES,
    seed: int | None = 0,
    max_rejection: float = 0.5,
) -> FidelityEstimate:
    """Gate fidelity ``1 - (1 - p_int / p_ref) / 2`` with Gaussian
    propagation of both decay-rate uncertainties.

    Draws with ``p_ref <= 0`` are discarded and counted; more than
    ``max_rejection`` of them is an error. Only the reported mean is
    clamped to [0, 1].
    """
    if ref.sigma_p == 0 and inter.sigma_p == 0:
        if ref.p <= 0:
            raise FitError("reference decay rate must be positive")
        f = gate_fidelity(ref.p, inter.p)
        return FidelityEstimate(min(max(f, 0.0), 1.0), 0.0, ref.p, inter.p, 1, 0, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pr = rng.normal(ref.p, ref.sigma_p, mc_samples)
    pi = rng.normal(inter.p, inter.sigma_p, mc_samples)
    keep = pr > 0
    rejected = int(mc_samples - keep.sum())
    if rejected > max_rejection * mc_samples:
        raise FitError(f"{rejected} of {mc_samples} draws had a non-positive reference decay rate")
    vals = gate_fidelity(pr[keep], pi[keep])
    return FidelityEstimate(
        min(max(float(vals.mean()), 0.0), 1.0), float(vals.std()),
        ref.p, inter.p, int(keep.sum()), rejected, seed,
    )


def fit_report(fits: dict[str, FitResult], estimate: FidelityEstimate | None, mc_samples: int, seed) -> str:
    doc = {
        "mc_samples": mc_samples,
        "seed": seed,
        "fits": {k: v.to_dict() for k, v in sorted(fits.items())},
        "estimate": None if estimate is None else estimate.to_dict(),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
