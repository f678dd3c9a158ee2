"""Limiting laws of sparse graph quadratic forms, in block form.

A limit is specified by a step kernel W (pair interactions inside the
finite-degree window), a nonnegative step function delta (excess degree
converted to a conditionally-Poisson count), and a scalar lambda0 (mass that
escaped every window). One replicate draws block counts N_j ~ Pois(block
length) and forms

    Q1 = sum_j Bin(C(N_j, 2), W_jj) + sum_{j<j'} Bin(N_j N_j', W_jj')
    Q2 ~ Pois(sum_j delta_j N_j)      (given the N's)
    Q3 ~ Pois(lambda0)                (independent)

The same block counts drive the Poisson stochastic-integral samplers that
express the MGF identities. Quasi-exact pmfs come from enumerating the
Poisson block vectors to a tail tolerance and convolving the conditional
laws.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BlockCountExceededError, RuntimeLimitError, ValidationError
from .quadform import Pmf
from .rng import block_streams
from .stepfunc import (
    StepFunction1D,
    StepGraphon,
    _as_breaks,
    merge_breakpoints,
    resample_block_values,
    resample_values_1d,
)

LIMIT_PMF_MAX_BLOCKS = 6
_MAX_ENUM_VECTORS = 500_000
_BINOM_DIRECT_MAX = 2 ** 31 - 1


@dataclass(frozen=True)
class LimitSpec:
    """Block description (W, delta, lambda0) of a limiting law.

    truncation_tail records mean mass dropped when an infinite block family
    was cut off to finitely many blocks; it is carried into result pmfs.
    """

    W: StepGraphon
    delta: StepFunction1D
    lambda0: float
    truncation_tail: float = 0.0

    def __post_init__(self):
        if not isinstance(self.W, StepGraphon):
            raise ValidationError("W must be a step kernel")
        if not isinstance(self.delta, StepFunction1D):
            raise ValidationError("delta must be a step function")
        if np.any(self.delta.values < 0):
            raise ValidationError("delta must be nonnegative everywhere")
        if self.lambda0 < 0:
            raise ValidationError("lambda0 must be >= 0")

    def degree_function(self) -> StepFunction1D:
        """delta plus the row integral of W, on their common refined grid."""
        grid, ell, wv, dv = _refined(self)
        return StepFunction1D(grid, dv + wv @ ell)

    def to_json_dict(self) -> dict:
        return {"W": self.W.to_json_dict(), "delta": self.delta.to_json_dict(),
                "lambda0": self.lambda0}

    @staticmethod
    def from_json_dict(obj: dict) -> "LimitSpec":
        return LimitSpec(StepGraphon.from_json_dict(obj["W"]),
                         StepFunction1D.from_json_dict(obj["delta"]),
                         float(obj["lambda0"]))


@dataclass(frozen=True)
class PoissonBlockIntegrand:
    """Symmetric block function with unrestricted real values."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = _as_breaks(self.breakpoints)
        v = np.asarray(self.values, dtype=np.float64)
        k = b.size - 1
        if v.shape != (k, k):
            raise ValidationError("values must be square and match the breakpoints")
        if not np.allclose(v, v.T, rtol=0.0, atol=1e-12):
            raise ValidationError("values must be symmetric")
        if not np.all(np.isfinite(v)):
            raise ValidationError("values must be finite")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)


def _log_shrunk(values: np.ndarray, t: float) -> np.ndarray:
    """log(1 - b + b e^{-t}) blockwise, kept finite even at b = 1 with large t."""
    return np.log((1.0 - values) + values * math.exp(-t))


def phi_integrand(w: StepGraphon, t: float) -> PoissonBlockIntegrand:
    """Blockwise log(1 - W + W e^{-t}), the MGF integrand for Q1."""
    if t < 0:
        raise ValidationError("t must be >= 0")
    return PoissonBlockIntegrand(w.breakpoints, _log_shrunk(w.block_values, t))


def _refined(spec: LimitSpec):
    """Common grid for W and delta: (lengths, W values, delta values).

    Identical grids skip the tolerance-based merge, which matters for specs
    whose support is so long that the merge tolerance would swallow the
    short early blocks.
    """
    bw, bd = spec.W.breakpoints, spec.delta.breakpoints
    if bw.size == bd.size and np.array_equal(bw, bd):
        return bw, np.diff(bw), spec.W.block_values, spec.delta.values
    grid = merge_breakpoints(bw, bd)
    wv = resample_block_values(bw, spec.W.block_values, grid)
    dv = resample_values_1d(spec.delta, grid)
    return grid, np.diff(grid), wv, dv


# ---------------------------------------------------------------------------
# sampling


def _binomial_any(rng: np.random.Generator, trials: np.ndarray, p: float) -> np.ndarray:
    """Binomial draws for trial counts far beyond integer range.

    Small counts go to the library sampler; huge counts (arising from
    C(N, 2) under heavy Poisson rates, always with tiny p) use inverse-CDF
    starting at P(0) = exp(n log(1-p)) and walking the pmf ratio upward.
    """
    trials = np.asarray(trials, dtype=np.float64)
    out = np.zeros(trials.shape, dtype=np.int64)
    if p <= 0.0:
        return out
    if p >= 1.0:
        return np.rint(trials).astype(np.int64)
    small = trials <= _BINOM_DIRECT_MAX
    if small.any():
        out[small] = rng.binomial(trials[small].astype(np.int64), p)
    big = np.nonzero(~small)[0]
    if big.size:
        tb = trials[big]
        u = rng.uniform(size=big.size)
        p0 = np.exp(tb * math.log1p(-p))
        vals = np.zeros(big.size, dtype=np.int64)
        odds = p / (1.0 - p)
        for i in np.nonzero(u >= p0)[0]:
            target, pk, cdf, k = u[i], p0[i], p0[i], 0
            while target >= cdf and k < 10 ** 6:
                pk *= (tb[i] - k) / (k + 1) * odds
                k += 1
                cdf += pk
                if pk == 0.0:
                    break
            vals[i] = k
        out[big] = vals
    return out


def _choose2(n: np.ndarray) -> np.ndarray:
    nf = n.astype(np.float64)
    return nf * (nf - 1.0) / 2.0


def sample_limit(spec: LimitSpec, samples: int, seed: int,
                 return_joint: bool = False):
    """Monte Carlo pmf of Q1 + Q2 + Q3; optionally also the joint component
    samples as a (3, samples) array."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    _, ell, wv, dv = _refined(spec)
    B = ell.size
    diag = [(j, wv[j, j]) for j in range(B) if wv[j, j] > 0.0]
    off = [(j, k, wv[j, k]) for j in range(B) for k in range(j + 1, B)
           if wv[j, k] > 0.0]
    has_delta = bool(np.any(dv > 0.0))
    q1 = np.zeros(samples, dtype=np.int64)
    q2 = np.zeros(samples, dtype=np.int64)
    q3 = np.zeros(samples, dtype=np.int64)
    for start, stop, rng in block_streams(seed, samples, "limit"):
        reps = stop - start
        N = np.empty((B, reps), dtype=np.int64)
        for j in range(B):
            N[j] = rng.poisson(ell[j], size=reps)
        acc = np.zeros(reps, dtype=np.int64)
        for j, b in diag:
            acc += _binomial_any(rng, _choose2(N[j]), b)
        for j, k, b in off:
            acc += _binomial_any(rng, N[j].astype(np.float64) * N[k], b)
        q1[start:stop] = acc
        if has_delta:
            q2[start:stop] = rng.poisson(dv @ N)
        if spec.lambda0 > 0.0:
            q3[start:stop] = rng.poisson(spec.lambda0, size=reps)
    total = q1 + q2 + q3
    vals, counts = np.unique(total, return_counts=True)
    probs = {int(v): c / samples for v, c in zip(vals, counts)}
    pmf = Pmf(probs, tail_mass=spec.truncation_tail)
    if return_joint:
        return pmf, np.vstack([q1, q2, q3])
    return pmf


def ito_block_integral(f: PoissonBlockIntegrand, samples: int, seed: int) -> np.ndarray:
    """Samples of the order-2 Poisson block integral
    2 sum_j f_jj C(N_j,2) + 2 sum_{j<j'} f_jj' N_j N_j'."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    ell = f.lengths()
    B = ell.size
    out = np.empty(samples, dtype=np.float64)
    for start, stop, rng in block_streams(seed, samples, "ito2"):
        reps = stop - start
        N = np.empty((B, reps), dtype=np.float64)
        for j in range(B):
            N[j] = rng.poisson(ell[j], size=reps)
        acc = np.zeros(reps, dtype=np.float64)
        for j in range(B):
            acc += 2.0 * f.values[j, j] * (N[j] * (N[j] - 1.0) / 2.0)
            for k in range(j + 1, B):
                acc += 2.0 * f.values[j, k] * N[j] * N[k]
        out[start:stop] = acc
    return out


def ito_expected_value(f: PoissonBlockIntegrand) -> float:
    """E I_2(f) = the full double integral of f over its support."""
    ell = f.lengths()
    return float(ell @ f.values @ ell)


def univariate_ito_integral(f: StepFunction1D, samples: int, seed: int) -> np.ndarray:
    """Samples of sum_j f_j N_j with N_j ~ Pois(block length)."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    ell = f.lengths()
    out = np.empty(samples, dtype=np.float64)
    for start, stop, rng in block_streams(seed, samples, "ito1"):
        reps = stop - start
        acc = np.zeros(reps, dtype=np.float64)
        for j in range(ell.size):
            acc += f.values[j] * rng.poisson(ell[j], size=reps)
        out[start:stop] = acc
    return out


def univariate_expected_value(f: StepFunction1D) -> float:
    return f.integral()


# ---------------------------------------------------------------------------
# quasi-exact pmf and MGF by Poisson-vector enumeration


def _poisson_pmf_array(lam: float, upper: int) -> np.ndarray:
    out = np.empty(upper + 1)
    out[0] = math.exp(-lam)
    for k in range(1, upper + 1):
        out[k] = out[k - 1] * lam / k
    return out


def _poisson_cutoff(lam: float, tol: float) -> int:
    """Smallest n with P(Pois(lam) > n) <= tol."""
    p = math.exp(-lam)
    cdf = p
    n = 0
    while 1.0 - cdf > tol and n < 10 ** 6:
        n += 1
        p *= lam / n
        cdf += p
    return n


def _binomial_pmf_array(n: int, p: float) -> np.ndarray:
    if p >= 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    out = np.empty(n + 1)
    out[0] = math.exp(n * math.log1p(-p))
    odds = p / (1.0 - p)
    for k in range(n):
        out[k + 1] = out[k] * (n - k) / (k + 1) * odds
    return out


def _poisson_pmf_truncated(lam: float, tol: float) -> np.ndarray:
    return _poisson_pmf_array(lam, _poisson_cutoff(lam, tol))


def _enumeration_grid(spec: LimitSpec, eps: float):
    _, ell, wv, dv = _refined(spec)
    B = ell.size
    if B > LIMIT_PMF_MAX_BLOCKS:
        raise BlockCountExceededError(
            f"enumeration supports at most {LIMIT_PMF_MAX_BLOCKS} blocks, "
            f"got {B}; use sample_limit")
    cutoffs = [_poisson_cutoff(float(l), eps / (2 * B)) for l in ell]
    n_vec = 1
    for c in cutoffs:
        n_vec *= c + 1
    if n_vec > _MAX_ENUM_VECTORS:
        raise RuntimeLimitError(
            f"enumeration would need {n_vec} Poisson vectors (cap "
            f"{_MAX_ENUM_VECTORS}); loosen eps")
    tables = [_poisson_pmf_array(float(l), c) for l, c in zip(ell, cutoffs)]
    return ell, wv, dv, cutoffs, tables


def limit_pmf(spec: LimitSpec, eps: float) -> Pmf:
    """Pmf of Q1 + Q2 + Q3 with all unenumerated mass reported in tail_mass.

    Conditions on the Poisson block vector: vectors are enumerated until
    their joint tail is below eps, and each vector's conditional law is an
    exact convolution of Binomial pmfs and a truncated Poisson.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValidationError("eps must lie in (0, 1e-2]")
    ell, wv, dv, cutoffs, tables = _enumeration_grid(spec, eps)
    B = ell.size
    inner_tol = eps * 1e-4
    acc = np.zeros(1)
    for vec in itertools.product(*(range(c + 1) for c in cutoffs)):
        pv = 1.0
        for j, v in enumerate(vec):
            pv *= tables[j][v]
        if pv <= 0.0:
            continue
        cond = np.ones(1)
        for j in range(B):
            trials = vec[j] * (vec[j] - 1) // 2
            if trials and wv[j, j] > 0.0:
                cond = np.convolve(cond, _binomial_pmf_array(trials, wv[j, j]))
            for k in range(j + 1, B):
                trials = vec[j] * vec[k]
                if trials and wv[j, k] > 0.0:
                    cond = np.convolve(cond, _binomial_pmf_array(trials, wv[j, k]))
        rate = float(dv @ np.asarray(vec))
        if rate > 0.0:
            cond = np.convolve(cond, _poisson_pmf_truncated(rate, inner_tol))
        if cond.size > acc.size:
            acc = np.pad(acc, (0, cond.size - acc.size))
        acc[:cond.size] += pv * cond
    if spec.lambda0 > 0.0:
        acc = np.convolve(acc, _poisson_pmf_truncated(spec.lambda0, inner_tol))
    total = float(acc.sum())
    tail = max(0.0, 1.0 - total) + spec.truncation_tail
    probs = {k: float(v) for k, v in enumerate(acc) if v > 0.0}
    return Pmf(probs, tail_mass=tail)


def mgf(spec: LimitSpec, t1: float, t2: float, eps: float = 1e-10) -> float:
    """E exp(-t1 Q1 - t2 Q2) by Poisson-vector enumeration.

    The Q3 factor exp(lambda0 (e^{-t} - 1)) is deliberately not included;
    mgf_total folds it in for the law of the full sum.
    """
    if t1 < 0 or t2 < 0:
        raise ValidationError("t1 and t2 must be >= 0")
    if not 0.0 < eps <= 1e-2:
        raise ValidationError("eps must lie in (0, 1e-2]")
    ell, wv, dv, cutoffs, tables = _enumeration_grid(spec, eps)
    B = ell.size
    psi = _log_shrunk(wv, t1)
    shrink = 1.0 - math.exp(-t2)
    out = 0.0
    for vec in itertools.product(*(range(c + 1) for c in cutoffs)):
        pv = 1.0
        for j, v in enumerate(vec):
            pv *= tables[j][v]
        if pv <= 0.0:
            continue
        expo = 0.0
        for j in range(B):
            pairs = vec[j] * (vec[j] - 1) // 2
            if pairs:
                expo += psi[j, j] * pairs
            for k in range(j + 1, B):
                if vec[j] and vec[k]:
                    expo += psi[j, k] * vec[j] * vec[k]
            if dv[j] and vec[j]:
                expo -= shrink * dv[j] * vec[j]
        out += pv * math.exp(expo)
    return out


def mgf_total(spec: LimitSpec, t: float, eps: float = 1e-10) -> float:
    """E exp(-t (Q1 + Q2 + Q3)), including the independent Q3 factor."""
    return mgf(spec, t, t, eps) * math.exp(spec.lambda0 * (math.exp(-t) - 1.0))


# ---------------------------------------------------------------------------
# presets for the worked examples


def _const_graphon(value: float, end: float) -> StepGraphon:
    return StepGraphon(np.asarray([0.0, end]), np.asarray([[value]]))


def _zero_delta(end: float = 1.0) -> StepFunction1D:
    return StepFunction1D(np.asarray([0.0, end]), np.asarray([0.0]))


def _preset_dense_er() -> LimitSpec:
    # dense ER overlay: single unit block at density 1/2, nothing else
    return LimitSpec(_const_graphon(0.5, 1.0), _zero_delta(), 0.0)


def _preset_stars() -> LimitSpec:
    # pure star forest: all structure is the conditional Poisson count
    return LimitSpec(_const_graphon(0.0, 1.0),
                     StepFunction1D([0.0, 1.0], [1.0]), 0.0)


def _preset_cycle() -> LimitSpec:
    # every edge escapes the degree window: bare Pois(2)
    return LimitSpec(_const_graphon(0.0, 1.0), _zero_delta(), 2.0)


def _preset_star_plus_matching() -> LimitSpec:
    # the star is discarded by truncation; the matching survives as Pois(1)
    return LimitSpec(_const_graphon(0.0, 1.0), _zero_delta(), 1.0)


def _preset_coexistence() -> LimitSpec:
    # clique-on-centers window (W=1), star excess (delta=1), path tail (1)
    return LimitSpec(_const_graphon(1.0, 1.0),
                     StepFunction1D([0.0, 1.0], [1.0]), 1.0)


def _preset_cascade() -> LimitSpec:
    # geometric cascade: block s has length 4^s, ER density 32^-s, excess 16^-s
    # scale s contributes mean 2^-s / 2 from pairs and 4^-s from the excess,
    # so cutting after s drops exactly 0.5 * 2^-s + 4^-s / 3 in the mean
    def dropped_mean(s):
        return 0.5 * 2.0 ** -s + (4.0 ** -s) / 3.0

    scales = []
    s = 0
    while True:
        s += 1
        scales.append(s)
        if dropped_mean(s) < 1e-9:
            break
        if s > 60:
            raise RuntimeLimitError("cascade truncation failed to converge")
    breaks = [0.0]
    for s in scales:
        breaks.append(breaks[-1] + 4.0 ** s)
    B = len(scales)
    wv = np.zeros((B, B))
    dv = np.zeros(B)
    for i, s in enumerate(scales):
        wv[i, i] = 32.0 ** -s
        dv[i] = 16.0 ** -s
    return LimitSpec(StepGraphon(np.asarray(breaks), wv),
                     StepFunction1D(np.asarray(breaks), dv),
                     0.0, truncation_tail=dropped_mean(scales[-1]))


def _preset_parity(dense_first: bool) -> LimitSpec:
    # two unit blocks; the star-carrying block sorts first and gets delta=1
    vals = np.diag([0.5, 0.25]) if dense_first else np.diag([0.25, 0.5])
    return LimitSpec(StepGraphon([0.0, 1.0, 2.0], vals),
                     StepFunction1D([0.0, 1.0, 2.0], [1.0, 0.0]), 0.0)


_PRESETS = {
    "ex2.1-er": _preset_dense_er,
    "ex2.2-cycle": _preset_cycle,
    "ex2.3-spm": _preset_star_plus_matching,
    "ex2.4-stars": _preset_stars,
    "ex2.5": _preset_coexistence,
    "ex2.6": _preset_cascade,
    "ex2.7-odd": lambda: _preset_parity(False),
    "ex2.7-even": lambda: _preset_parity(True),
}

PRESET_IDS = tuple(sorted(_PRESETS))


def preset(preset_id: str) -> LimitSpec:
    if preset_id not in _PRESETS:
        raise ValidationError(
            f"unknown preset {preset_id!r}; available: {', '.join(PRESET_IDS)}")
    return _PRESETS[preset_id]()
