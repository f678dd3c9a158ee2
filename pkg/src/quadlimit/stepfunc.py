"""Step functions and step kernels on [0, infinity).

A StepFunction1D is constant on left-open right-closed intervals and zero
beyond its last breakpoint. A StepGraphon is the two-dimensional symmetric
analogue with block values in [0, 1]. Both are immutable. All window
integrals (tail mass, truncated L1 distance, cut norms) split partial blocks
analytically, so results are exact up to float64 rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlockCountExceededError, ValidationError
from .rng import stream

# Full empirical kernels are dense B x B matrices; past this width callers
# must go through the windowed constructor instead.
MAX_EMPIRICAL_BLOCKS = 4000

EXACT_CUT_NORM_MAX_BLOCKS = 22
ALTERNATING_RESTARTS = 16


def _merge_tol(*arrays) -> float:
    hi = max((float(a[-1]) for a in arrays if len(a)), default=1.0)
    return 1e-9 * max(1.0, hi)


def _as_breaks(breakpoints) -> np.ndarray:
    b = np.asarray(breakpoints, dtype=np.float64)
    if b.ndim != 1 or b.size < 2:
        raise ValidationError("breakpoints must be a 1-d array with at least 2 entries")
    if b[0] != 0.0:
        raise ValidationError("breakpoints must start at 0")
    if not np.all(np.diff(b) > 0):
        raise ValidationError("breakpoints must be strictly increasing")
    return b


@dataclass(frozen=True)
class StepFunction1D:
    """Piecewise-constant function, value[i] on (breakpoints[i], breakpoints[i+1]]."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = _as_breaks(self.breakpoints)
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (b.size - 1,):
            raise ValidationError("need exactly one value per interval")
        if not np.all(np.isfinite(v)):
            raise ValidationError("values must be finite")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @property
    def support_end(self) -> float:
        return float(self.breakpoints[-1])

    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def integral(self) -> float:
        return float(self.values @ self.lengths())

    def abs_integral(self) -> float:
        return float(np.abs(self.values) @ self.lengths())

    def evaluate(self, x) -> np.ndarray:
        """Pointwise values; 0 at x <= 0 and beyond the support."""
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, x, side="left") - 1
        out = np.where((idx >= 0) & (idx < self.values.size),
                       self.values[np.clip(idx, 0, self.values.size - 1)], 0.0)
        return np.where(x <= 0, 0.0, out)

    def truncate_above(self, M: float) -> "StepFunction1D":
        """Zero out intervals where the value exceeds M."""
        v = np.where(self.values <= M, self.values, 0.0)
        return StepFunction1D(self.breakpoints, v)

    def to_json_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @staticmethod
    def from_json_dict(obj: dict) -> "StepFunction1D":
        return StepFunction1D(np.asarray(obj["breakpoints"]), np.asarray(obj["values"]))


@dataclass(frozen=True)
class StepGraphon:
    """Symmetric block kernel; block (i, j) covers the product of intervals i and j.

    mesh, when set, promises that the grid is uniform with mesh blocks per
    unit length; row integrals then divide integer row sums by mesh instead
    of accumulating per-block products, which keeps normalized degrees exact.
    """

    breakpoints: np.ndarray
    block_values: np.ndarray
    mesh: float | None = field(default=None, compare=False)

    def __post_init__(self):
        b = _as_breaks(self.breakpoints)
        v = np.asarray(self.block_values, dtype=np.float64)
        k = b.size - 1
        if v.shape != (k, k):
            raise ValidationError("block_values must be square and match the breakpoints")
        if not np.allclose(v, v.T, rtol=0.0, atol=1e-12):
            raise ValidationError("block_values must be symmetric")
        if v.size and (v.min() < -1e-12 or v.max() > 1.0 + 1e-12):
            raise ValidationError("block values must lie in [0, 1]")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "block_values", np.clip(v, 0.0, 1.0))

    @property
    def support_end(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_blocks(self) -> int:
        return self.block_values.shape[0]

    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def integral(self) -> float:
        ell = self.lengths()
        return float(ell @ self.block_values @ ell)

    def to_json_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(),
                "values": self.block_values.tolist()}

    @staticmethod
    def from_json_dict(obj: dict) -> "StepGraphon":
        return StepGraphon(np.asarray(obj["breakpoints"]), np.asarray(obj["values"]))


@dataclass(frozen=True)
class CutNormResult:
    value: float
    witness_f: np.ndarray
    witness_g: np.ndarray
    exact: bool
    breakpoints: np.ndarray = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "witness_f": np.asarray(self.witness_f).tolist(),
            "witness_g": np.asarray(self.witness_g).tolist(),
            "exact": self.exact,
            "breakpoints": np.asarray(self.breakpoints).tolist()
            if self.breakpoints is not None else None,
        }


# ---------------------------------------------------------------------------
# shared grid machinery


def merge_breakpoints(*break_arrays, upper: float | None = None) -> np.ndarray:
    """Union of breakpoint sets, deduplicated within a relative tolerance.

    With upper set, the result is clipped to [0, upper] and always ends at
    upper exactly (partial blocks are thereby split at the window edge).
    """
    # with a window, tolerance must scale with the window and not with the
    # full supports, which can be enormously longer than the part kept
    tol = 1e-9 * max(1.0, float(upper)) if upper is not None else _merge_tol(*break_arrays)
    pieces = [np.asarray(a, dtype=np.float64) for a in break_arrays]
    if upper is not None:
        pieces.append(np.asarray([0.0, float(upper)]))
    merged = np.sort(np.concatenate(pieces))
    if upper is not None:
        merged = merged[merged <= float(upper) + tol]
        merged[-1] = float(upper)
    keep = np.concatenate([[True], np.diff(merged) > tol])
    out = merged[keep]
    out[0] = 0.0
    if upper is not None:
        out[-1] = float(upper)
    return out


def _interval_index(breaks: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """For each interval of `grid`, the index of the `breaks` interval containing
    it, or -1 where the grid interval lies outside the support."""
    mid = (grid[:-1] + grid[1:]) / 2.0
    idx = np.searchsorted(breaks, mid, side="left") - 1
    idx[(mid <= 0) | (mid > breaks[-1]) | (idx < 0) | (idx >= breaks.size - 1)] = -1
    return idx


def resample_values_1d(f: StepFunction1D, grid: np.ndarray) -> np.ndarray:
    idx = _interval_index(f.breakpoints, grid)
    out = np.zeros(grid.size - 1)
    ok = idx >= 0
    out[ok] = f.values[idx[ok]]
    return out


def resample_block_values(breaks: np.ndarray, values: np.ndarray,
                          grid: np.ndarray) -> np.ndarray:
    idx = _interval_index(breaks, grid)
    k = grid.size - 1
    out = np.zeros((k, k))
    ok = np.nonzero(idx >= 0)[0]
    if ok.size:
        sub = values[np.ix_(idx[ok], idx[ok])]
        out[np.ix_(ok, ok)] = sub
    return out


# ---------------------------------------------------------------------------
# empirical kernels


def empirical_graphon(g, r_n: float) -> StepGraphon:
    """Adjacency of g as a step kernel: block (i, j) on (i/r_n, (i+1)/r_n]^2
    equals 1 exactly when canonical vertices i and j are adjacent."""
    if r_n <= 0:
        raise ValidationError("r_n must be positive")
    if g.n > MAX_EMPIRICAL_BLOCKS:
        raise BlockCountExceededError(
            f"full empirical kernel would need {g.n} blocks per axis "
            f"(limit {MAX_EMPIRICAL_BLOCKS}); use empirical_graphon_window")
    breaks = np.arange(g.n + 1, dtype=np.float64) / r_n
    vals = np.zeros((g.n, g.n))
    if g.m:
        vals[g.edges[:, 0], g.edges[:, 1]] = 1.0
        vals[g.edges[:, 1], g.edges[:, 0]] = 1.0
    return StepGraphon(breaks, vals, mesh=float(r_n))


def empirical_graphon_window(g, r_n: float, K: float) -> StepGraphon:
    """Restriction of the empirical kernel to [0, K]^2, materializing only the
    vertex blocks that meet the window. Equal to
    restrict_window(empirical_graphon(g, r_n), K) whenever the latter fits."""
    if r_n <= 0 or K <= 0:
        raise ValidationError("r_n and K must be positive")
    b = min(g.n, math.ceil(K * r_n))
    if b > MAX_EMPIRICAL_BLOCKS:
        raise BlockCountExceededError(
            f"window [0,{K}] spans {b} vertex blocks (limit {MAX_EMPIRICAL_BLOCKS})")
    breaks = np.arange(b + 1, dtype=np.float64) / r_n
    vals = np.zeros((b, b))
    if g.m:
        e = g.edges[(g.edges[:, 0] < b) & (g.edges[:, 1] < b)]
        vals[e[:, 0], e[:, 1]] = 1.0
        vals[e[:, 1], e[:, 0]] = 1.0
    w = StepGraphon(breaks, vals)
    return restrict_window(w, K)


def empirical_degree_function(g, r_n: float) -> StepFunction1D:
    """Normalized degrees as a step function: d_i / r_n on (i/r_n, (i+1)/r_n]."""
    if r_n <= 0:
        raise ValidationError("r_n must be positive")
    breaks = np.arange(g.n + 1, dtype=np.float64) / r_n
    return StepFunction1D(breaks, g.degrees.astype(np.float64) / r_n)


def degree_function(w: StepGraphon) -> StepFunction1D:
    """Row integrals of the kernel, one value per block row."""
    if w.mesh is not None:
        vals = w.block_values.sum(axis=1) / w.mesh
    else:
        vals = w.block_values @ w.lengths()
    return StepFunction1D(w.breakpoints, vals)


def tail_mass(w: StepGraphon, K: float) -> float:
    """Half the kernel mass on [K, infinity)^2, partial blocks split exactly."""
    if K < 0:
        raise ValidationError("K must be >= 0")
    b = w.breakpoints
    alpha = np.clip(b[1:] - np.maximum(b[:-1], K), 0.0, None)
    return 0.5 * float(alpha @ w.block_values @ alpha)


def empirical_tail_mass(g, r_n: float, K: float) -> float:
    """tail_mass of the empirical kernel, computed edge-by-edge so the kernel
    never has to be materialized."""
    if r_n <= 0 or K < 0:
        raise ValidationError("r_n must be positive and K >= 0")
    if g.m == 0:
        return 0.0
    lo = g.edges[:, 0] / r_n
    hi = (g.edges[:, 0] + 1) / r_n
    a_u = np.clip(hi - np.maximum(lo, K), 0.0, None)
    lo = g.edges[:, 1] / r_n
    hi = (g.edges[:, 1] + 1) / r_n
    a_v = np.clip(hi - np.maximum(lo, K), 0.0, None)
    return float(a_u @ a_v)


# ---------------------------------------------------------------------------
# windows, cut norm, L1


def restrict_window(w: StepGraphon, K: float) -> StepGraphon:
    """The kernel restricted to [0, K]^2: blocks split at K, zero-padded to K
    when the support ends earlier."""
    if K <= 0:
        raise ValidationError("K must be positive")
    grid = merge_breakpoints(w.breakpoints, upper=K)
    vals = resample_block_values(w.breakpoints, w.block_values, grid)
    return StepGraphon(grid, vals)


def _signed_block_masses(w1: StepGraphon, w2: StepGraphon, K: float):
    grid = merge_breakpoints(w1.breakpoints, w2.breakpoints, upper=K)
    v1 = resample_block_values(w1.breakpoints, w1.block_values, grid)
    v2 = resample_block_values(w2.breakpoints, w2.block_values, grid)
    ell = np.diff(grid)
    masses = (v1 - v2) * np.outer(ell, ell)
    return grid, masses


def _score_rows(sign_rows: np.ndarray, masses: np.ndarray) -> np.ndarray:
    return np.abs(sign_rows @ masses).sum(axis=1)


def _exact_cut_norm(masses: np.ndarray):
    b = masses.shape[0]
    best_val = -1.0
    best_f = None
    # enumerate f in {-1,+1}^b in chunks; optimal g is closed-form per f
    chunk_bits = min(b, 16)
    base = np.arange(2 ** chunk_bits, dtype=np.uint32)
    low_signs = (((base[:, None] >> np.arange(chunk_bits)) & 1) * 2.0 - 1.0)
    for high in range(2 ** (b - chunk_bits)):
        high_signs = ((high >> np.arange(b - chunk_bits)) & 1) * 2.0 - 1.0
        rows = np.empty((low_signs.shape[0], b))
        rows[:, :chunk_bits] = low_signs
        rows[:, chunk_bits:] = high_signs
        scores = _score_rows(rows, masses)
        i = int(np.argmax(scores))
        if scores[i] > best_val:
            best_val = float(scores[i])
            best_f = rows[i].copy()
    g = np.where(best_f @ masses >= 0, 1.0, -1.0)
    return best_val, best_f, g


def _polish_signs(f: np.ndarray, masses: np.ndarray):
    """Greedy single-sign flips of f, with g always the closed-form response.

    The objective with optimal g is just the L1 norm of f @ masses, so each
    candidate flip is scored exactly; the walk only ever moves uphill and
    stops at a flip-optimal vector. Keeps the heuristic a true lower bound.
    """
    r = f @ masses
    val = float(np.abs(r).sum())
    for _ in range(4 * masses.shape[0] + 8):
        cand = np.abs(r[None, :] - 2.0 * f[:, None] * masses).sum(axis=1)
        i = int(np.argmax(cand))
        if cand[i] <= val + 1e-15:
            break
        r = r - 2.0 * f[i] * masses[i]
        f = f.copy()
        f[i] = -f[i]
        val = float(cand[i])
    return f, val


def _alternating_cut_norm(masses: np.ndarray):
    b = masses.shape[0]
    best_val, best_f = -1.0, None
    for restart in range(ALTERNATING_RESTARTS):
        rng = stream(0, "cutnorm-alt", restart, b)
        f = rng.integers(0, 2, size=b) * 2.0 - 1.0
        val = -1.0
        for _ in range(200):
            g = np.where(f @ masses >= 0, 1.0, -1.0)
            f = np.where(masses @ g >= 0, 1.0, -1.0)
            new_val = float(abs(f @ masses @ g))
            if new_val <= val + 1e-15:
                val = max(val, new_val)
                break
            val = new_val
        f, val = _polish_signs(f, masses)
        if val > best_val:
            best_val, best_f = val, f
    best_g = np.where(best_f @ masses >= 0, 1.0, -1.0)
    return best_val, best_f, best_g


def cut_norm_window(w1: StepGraphon, w2: StepGraphon, K: float,
                    mode: str = "exact") -> CutNormResult:
    """Windowed cut norm of w1 - w2 over [0, K]^2.

    The supremum over test functions into [-1, 1] is attained at block-wise
    sign vectors, so exact mode enumerates all 2^B choices of f and optimizes
    g in closed form. Alternating mode only alternates the two closed-form
    updates from random starts and therefore reports a lower bound.
    """
    if mode not in ("exact", "alternating"):
        raise ValidationError(f"unknown cut norm mode {mode!r}")
    grid, masses = _signed_block_masses(w1, w2, K)
    b = masses.shape[0]
    if mode == "exact":
        if b > EXACT_CUT_NORM_MAX_BLOCKS:
            raise BlockCountExceededError(
                f"exact cut norm needs {b} refined blocks "
                f"(limit {EXACT_CUT_NORM_MAX_BLOCKS}); use mode='alternating'")
        val, f, g = _exact_cut_norm(masses)
        return CutNormResult(val, f, g, True, grid)
    val, f, g = _alternating_cut_norm(masses)
    return CutNormResult(val, f, g, False, grid)


def l1_graphon_window(w1: StepGraphon, w2: StepGraphon, K: float) -> float:
    """L1 norm of w1 - w2 over the window [0, K]^2."""
    _, masses = _signed_block_masses(w1, w2, K)
    return float(np.abs(masses).sum())


def l1_distance_truncated(f1: StepFunction1D, f2: StepFunction1D,
                          K: float, M: float) -> float:
    """Integral over [0, K] of |f1 1{f1<=M} - f2 1{f2<=M}|."""
    if K <= 0 or M <= 0:
        raise ValidationError("K and M must be positive")
    grid = merge_breakpoints(f1.breakpoints, f2.breakpoints, upper=K)
    v1 = resample_values_1d(f1, grid)
    v2 = resample_values_1d(f2, grid)
    t1 = np.where(v1 <= M, v1, 0.0)
    t2 = np.where(v2 <= M, v2, 0.0)
    return float(np.abs(t1 - t2) @ np.diff(grid))


# ---------------------------------------------------------------------------
# block approximation


def _grid_overlap(cells: np.ndarray, breaks: np.ndarray) -> np.ndarray:
    """overlap[a, i] = length of cell a intersected with source interval i."""
    lo = np.maximum(cells[:-1, None], breaks[None, :-1])
    hi = np.minimum(cells[1:, None], breaks[None, 1:])
    return np.clip(hi - lo, 0.0, None)


def block_approximation(f, L: int):
    """Average f over the uniform mesh-1/L grid. Mass is conserved exactly;
    the result has ceil(L * support_end) cells per axis."""
    if not isinstance(L, (int, np.integer)) or L < 1:
        raise ValidationError("L must be a positive integer")
    n_cells = math.ceil(L * f.support_end - 1e-12)
    cells = np.arange(n_cells + 1, dtype=np.float64) / L
    if isinstance(f, StepFunction1D):
        mass = _grid_overlap(cells, f.breakpoints) @ f.values
        return StepFunction1D(cells, mass * L)
    if isinstance(f, StepGraphon):
        ov = _grid_overlap(cells, f.breakpoints)
        vals = (L * L) * (ov @ f.block_values @ ov.T)
        return StepGraphon(cells, vals)
    raise ValidationError("block_approximation expects a step function or step kernel")


def l1_distance_1d(f1: StepFunction1D, f2: StepFunction1D, K: float | None = None) -> float:
    """Plain L1 distance over [0, K] (default: joint support)."""
    if K is None:
        K = max(f1.support_end, f2.support_end)
    grid = merge_breakpoints(f1.breakpoints, f2.breakpoints, upper=K)
    v1 = resample_values_1d(f1, grid)
    v2 = resample_values_1d(f2, grid)
    return float(np.abs(v1 - v2) @ np.diff(grid))


# ---------------------------------------------------------------------------
# cut metric upper bound via block alignment


def cut_metric_upper_bound(w1: StepGraphon, w2: StepGraphon, K: float,
                           L: int = 8, mode: str = "exact"):
    """Upper bound on the relabeling-minimized cut distance over [0, K].

    Both kernels are averaged onto the uniform mesh-1/L grid (equal-measure
    cells), and the cut norm is minimized over cell permutations of the
    second kernel: exhaustively for <= 8 cells, greedy 2-swap descent above.
    Returns (value, permutation). The value is an upper bound for the
    grid-aligned relabeling family, not the full infimum.
    """
    a1 = block_approximation(restrict_window(w1, K), L)
    a2 = block_approximation(restrict_window(w2, K), L)
    cells = max(a1.n_blocks, a2.n_blocks)

    def padded(a):
        v = np.zeros((cells, cells))
        v[:a.n_blocks, :a.n_blocks] = a.block_values
        return v

    v1, v2 = padded(a1), padded(a2)
    grid = np.arange(cells + 1, dtype=np.float64) / L

    def value(perm):
        w2p = StepGraphon(grid, v2[np.ix_(perm, perm)])
        return cut_norm_window(StepGraphon(grid, v1), w2p, K, mode=mode).value

    idx = list(range(cells))
    if cells <= 8:
        import itertools
        best_perm = min(itertools.permutations(idx), key=lambda p: value(list(p)))
        best_perm = list(best_perm)
        return value(best_perm), best_perm
    perm = idx[:]
    best = value(perm)
    improved = True
    while improved:
        improved = False
        for i in range(cells):
            for j in range(i + 1, cells):
                perm[i], perm[j] = perm[j], perm[i]
                cand = value(perm)
                if cand < best - 1e-12:
                    best = cand
                    improved = True
                else:
                    perm[i], perm[j] = perm[j], perm[i]
    return best, perm
