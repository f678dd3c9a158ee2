"""Quadratic forms of sparse nonnegative-integer site variables over a graph.

The statistic is T = sum over edges (u, v) of X_u * X_v with i.i.d. X drawn
from one of five sparse laws. The engine simulates T (optionally truncated to
the low-degree subgraph), enumerates its exact Bernoulli pmf on small
instances, evaluates closed-form moments up to order three, and splits T into
the head/cross/tail components of the degree-window decomposition.

Simulation never touches every edge per replicate: it first draws the active
set {v : X_v >= 1} by scanning geometric gaps, then counts only edges among
active vertices through the adjacency structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InstanceTooLargeError,
    SimulationOverflowError,
    ValidationError,
)
from .graphs import (
    Graph,
    count_subgraph,
    induced_truncation,
    neighbor_degree_sums,
    three_star_count,
)
from .rng import block_streams

EXACT_PMF_MAX_VERTICES = 22

_POPCOUNT16 = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.int64)


# ---------------------------------------------------------------------------
# sparse laws


@dataclass(frozen=True)
class SparseLaw:
    """One of the admissible site-variable laws, addressed by kind + params.

    p1 is P(X = 1) and must be positive; it is the edge-activation scale the
    limit theory is parameterized by. The laws other than bernoulli can take
    values above 1, which is what the universality comparison exercises.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        k, pr = self.kind, self.params
        if k == "bernoulli":
            (p,) = pr
            if not 0.0 < p <= 1.0:
                raise ValidationError("bernoulli needs p in (0, 1]")
        elif k == "poisson":
            (theta,) = pr
            if not theta > 0.0:
                raise ValidationError("poisson needs theta > 0")
        elif k == "binomial":
            m, theta = pr
            if not (isinstance(m, int) and m >= 1 and 0.0 < theta < 1.0):
                raise ValidationError("binomial needs integer m >= 1 and theta in (0, 1)")
        elif k == "negbinomial":
            m, theta = pr
            if not (isinstance(m, int) and m >= 1 and 0.0 < theta < 1.0):
                raise ValidationError("negbinomial needs integer m >= 1 and theta in (0, 1)")
        elif k == "hypergeometric":
            N, K, m = pr
            ok = (isinstance(N, int) and isinstance(K, int) and isinstance(m, int)
                  and 1 <= K and 1 <= m and m + K <= N)
            if not ok:
                raise ValidationError(
                    "hypergeometric needs integers with m, K >= 1 and m + K <= N "
                    "so that both 0 and 1 are supported")
        else:
            raise ValidationError(f"unknown law kind {k!r}")
        if not 0.0 < self.p1 <= 1.0:
            raise ValidationError(f"law has P(X=1) = {self.p1}, outside (0, 1]")

    # constructors

    @staticmethod
    def bernoulli(p: float) -> "SparseLaw":
        return SparseLaw("bernoulli", (float(p),))

    @staticmethod
    def poisson(theta: float) -> "SparseLaw":
        return SparseLaw("poisson", (float(theta),))

    @staticmethod
    def binomial(m: int, theta: float) -> "SparseLaw":
        return SparseLaw("binomial", (int(m), float(theta)))

    @staticmethod
    def negbinomial(m: int, theta: float) -> "SparseLaw":
        return SparseLaw("negbinomial", (int(m), float(theta)))

    @staticmethod
    def hypergeometric(N: int, K: int, m: int) -> "SparseLaw":
        return SparseLaw("hypergeometric", (int(N), int(K), int(m)))

    # scalar distribution facts

    @property
    def p0(self) -> float:
        k, pr = self.kind, self.params
        if k == "bernoulli":
            return 1.0 - pr[0]
        if k == "poisson":
            return math.exp(-pr[0])
        if k == "binomial":
            return math.exp(pr[0] * math.log1p(-pr[1]))
        if k == "negbinomial":
            return math.exp(pr[0] * math.log1p(-pr[1]))
        N, K, m = pr
        return math.exp(_log_comb(N - K, m) - _log_comb(N, m))

    @property
    def p1(self) -> float:
        k, pr = self.kind, self.params
        if k == "bernoulli":
            return pr[0]
        if k == "poisson":
            return pr[0] * math.exp(-pr[0])
        if k == "binomial":
            m, th = pr
            return m * th * math.exp((m - 1) * math.log1p(-th))
        if k == "negbinomial":
            m, th = pr
            return m * th * math.exp(m * math.log1p(-th))
        N, K, m = pr
        return math.exp(math.log(K) + _log_comb(N - K, m - 1) - _log_comb(N, m))

    @property
    def mean(self) -> float:
        k, pr = self.kind, self.params
        if k == "bernoulli":
            return pr[0]
        if k == "poisson":
            return pr[0]
        if k == "binomial":
            return pr[0] * pr[1]
        if k == "negbinomial":
            return pr[0] * pr[1] / (1.0 - pr[1])
        N, K, m = pr
        return m * K / N

    @property
    def prob_active(self) -> float:
        return 1.0 - self.p0

    @property
    def prob_ge2(self) -> float:
        return max(0.0, 1.0 - self.p0 - self.p1)

    def support_max(self) -> int | None:
        """Largest attainable value, or None when unbounded."""
        k, pr = self.kind, self.params
        if k == "bernoulli":
            return 1
        if k == "binomial":
            return pr[0]
        if k == "hypergeometric":
            return min(pr[1], pr[2])
        return None

    def _pmf_ratio(self, k: int) -> float:
        """pmf(k+1) / pmf(k)."""
        kind, pr = self.kind, self.params
        if kind == "poisson":
            return pr[0] / (k + 1)
        if kind == "binomial":
            m, th = pr
            return (m - k) / (k + 1) * th / (1.0 - th)
        if kind == "negbinomial":
            m, th = pr
            return (m + k) / (k + 1) * th
        if kind == "hypergeometric":
            N, K, m = pr
            return (K - k) * (m - k) / ((k + 1) * (N - K - m + k + 1))
        return 0.0  # bernoulli

    def sample_conditional_positive(self, rng: np.random.Generator,
                                    size: int) -> np.ndarray:
        """Draw X | X >= 1 by inverse CDF, walking the pmf recursion upward.

        Probabilities for the walk start from log-space p1 so extreme
        parameters stay finite; the walk itself only multiplies modest ratios.
        """
        out = np.ones(size, dtype=np.int64)
        if self.kind == "bernoulli" or size == 0:
            return out
        u = rng.uniform(size=size)
        target = u * self.prob_active  # inverse CDF target over k >= 1
        pk = self.p1
        cdf = pk
        k = 1
        cap = self.support_max() or 1_000_000
        need = target >= cdf
        while need.any() and k < cap:
            pk *= self._pmf_ratio(k)
            k += 1
            cdf += pk
            out[need] = k
            need = target >= cdf
            if pk == 0.0:
                break
        return out

    def describe(self) -> str:
        return f"{self.kind}{self.params}"


def _log_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def poisson_theta_for_p1(p: float) -> float:
    """The small solution of theta * exp(-theta) = p (requires p < 1/e)."""
    if not 0.0 < p < math.exp(-1.0):
        raise ValidationError("matching a Poisson law needs p in (0, 1/e)")
    theta = p
    for _ in range(100):
        f = theta * math.exp(-theta) - p
        step = f / ((1.0 - theta) * math.exp(-theta))
        theta -= step
        if abs(step) < 1e-15:
            break
    return theta


# ---------------------------------------------------------------------------
# pmf container


@dataclass(frozen=True)
class Pmf:
    """Discrete law on nonnegative integers, plus any mass left unenumerated."""

    probs: dict
    tail_mass: float = 0.0

    def __post_init__(self):
        total = sum(self.probs.values()) + self.tail_mass
        if not (1 - 1e-9 <= total <= 1 + 1e-9):
            raise ValidationError(f"pmf mass {total} is not 1 within 1e-9")
        if any(v < 0 for v in self.probs.values()) or self.tail_mass < -1e-15:
            raise ValidationError("pmf entries must be nonnegative")
        if any((not isinstance(k, (int, np.integer))) or k < 0 for k in self.probs):
            raise ValidationError("pmf support must be nonnegative integers")
        object.__setattr__(self, "probs", {int(k): float(v) for k, v in
                                           sorted(self.probs.items())})

    @staticmethod
    def from_samples(samples: np.ndarray) -> "Pmf":
        vals, counts = np.unique(np.asarray(samples), return_counts=True)
        n = counts.sum()
        return Pmf({int(v): c / n for v, c in zip(vals, counts)})

    def support(self) -> list:
        return list(self.probs.keys())

    def moment(self, a: int) -> float:
        return float(sum((k ** a) * v for k, v in self.probs.items()))

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def variance(self) -> float:
        mu = self.mean
        return self.moment(2) - mu * mu

    def prob(self, k: int) -> float:
        return self.probs.get(int(k), 0.0)

    def to_json_dict(self) -> dict:
        return {"probs": {str(k): v for k, v in self.probs.items()},
                "tail_mass": self.tail_mass}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimConfig:
    samples: int
    seed: int
    law: SparseLaw
    chunks: int = 1
    M: float | None = None
    r_n: float | None = None
    max_value: int = 10 ** 9

    def __post_init__(self):
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if self.chunks < 1:
            raise ValidationError("chunks must be >= 1")
        if not isinstance(self.law, SparseLaw):
            raise ValidationError("cfg.law must be a SparseLaw")
        if self.M is not None:
            if self.M <= 0:
                raise ValidationError("M must be positive when set")
            if self.r_n is None or self.r_n <= 0:
                raise ValidationError("truncation needs a positive r_n")


# ---------------------------------------------------------------------------
# active-set simulation core


def _csr_from_edges(n: int, edges: np.ndarray):
    if len(edges) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    heads = np.concatenate([edges[:, 0], edges[:, 1]])
    tails = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((tails, heads))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(heads, minlength=n), out=indptr[1:])
    return indptr, tails[order]


def _draw_active(rng: np.random.Generator, n: int, q: float, reps: int):
    """Active vertices of `reps` independent i.i.d.-Bernoulli(q) scans of [0, n).

    Returns (rep_ids, verts) flattened row-major, verts ascending per
    replicate. Drawn by cumulative geometric gaps, so cost scales with the
    number of active vertices rather than with n.
    """
    if q >= 1.0:
        verts = np.tile(np.arange(n, dtype=np.int64), reps)
        rep_ids = np.repeat(np.arange(reps, dtype=np.int64), n)
        return rep_ids, verts
    mu = n * q
    buf = int(mu + 8.0 * math.sqrt(mu) + 16.0)
    gaps = rng.geometric(q, size=(reps, buf))
    pos = np.cumsum(gaps, axis=1) - 1
    unfinished = np.nonzero(pos[:, -1] < n)[0]
    if unfinished.size == 0:
        valid = pos < n
        rep_ids = np.repeat(np.arange(reps, dtype=np.int64), valid.sum(axis=1))
        return rep_ids, pos[valid].astype(np.int64)
    # rare continuation path: keep scanning the unfinished rows
    extras = {}
    for row in unfinished:
        cursor = int(pos[row, -1])
        more = []
        while cursor < n:
            step = rng.geometric(q, size=256)
            cont = cursor + np.cumsum(step)
            more.extend(cont[cont < n].tolist())
            cursor = int(cont[-1])
        extras[int(row)] = more
    parts_r, parts_v = [], []
    for row in range(reps):
        row_pos = pos[row][pos[row] < n].tolist() + extras.get(row, [])
        parts_v.extend(row_pos)
        parts_r.extend([row] * len(row_pos))
    return (np.asarray(parts_r, dtype=np.int64), np.asarray(parts_v, dtype=np.int64))


def _count_edge_groups(rep_ids, verts, values, n, group_csrs, reps):
    """Per-replicate sums of X_u * X_v over each edge group's internal edges."""
    keys = rep_ids * n + verts
    sums = [np.zeros(reps, dtype=np.float64) for _ in group_csrs]
    if verts.size == 0:
        return sums
    # cap per-pass expansion to bound memory
    max_expand = 8_000_000
    for gi, (indptr, nbrs) in enumerate(group_csrs):
        deg = indptr[verts + 1] - indptr[verts]
        csum = np.cumsum(deg)
        start = 0
        while start < verts.size:
            prev = int(csum[start - 1]) if start else 0
            stop = int(np.searchsorted(csum, prev + max_expand, side="right"))
            stop = min(max(stop, start + 1), verts.size)
            sl = slice(start, stop)
            d = deg[sl]
            total = int(d.sum())
            if total:
                base = np.repeat(indptr[verts[sl]], d)
                offs = np.arange(total) - np.repeat(np.cumsum(d) - d, d)
                nb_v = nbrs[base + offs]
                nb_rep = np.repeat(rep_ids[sl], d)
                src = np.repeat(np.arange(start, stop), d)
                nb_keys = nb_rep * n + nb_v
                idx = np.searchsorted(keys, nb_keys)
                idx_c = np.minimum(idx, keys.size - 1)
                found = keys[idx_c] == nb_keys
                if found.any():
                    prod = values[src[found]] * values[idx_c[found]]
                    sums[gi] += np.bincount(nb_rep[found], weights=prod,
                                            minlength=reps)
            start = stop
    # every internal edge was seen from both endpoints
    return [s / 2.0 for s in sums]


def _simulate_groups(n: int, edge_groups, cfg: SimConfig) -> list:
    """Sample arrays (one per edge group) for cfg.samples replicates."""
    law = cfg.law
    q = law.prob_active
    csrs = [_csr_from_edges(n, e) for e in edge_groups]
    outs = [np.zeros(cfg.samples, dtype=np.int64) for _ in edge_groups]
    for start, stop, rng in block_streams(cfg.seed, cfg.samples, "simulate"):
        reps = stop - start
        rep_ids, verts = _draw_active(rng, n, q, reps)
        values = law.sample_conditional_positive(rng, verts.size).astype(np.float64)
        sums = _count_edge_groups(rep_ids, verts, values, n, csrs, reps)
        for out, s in zip(outs, sums):
            rounded = np.rint(s)
            if rounded.size and rounded.max() > cfg.max_value:
                raise SimulationOverflowError(
                    f"a replicate reached {int(rounded.max())} > cap {cfg.max_value}; "
                    "the activation scale looks mis-set")
            out[start:stop] = rounded.astype(np.int64)
    return outs


def _truncated_edges(g: Graph, M: float, r_n: float) -> np.ndarray:
    keep = g.degrees <= M * r_n
    if g.m == 0:
        return g.edges
    mask = keep[g.edges[:, 0]] & keep[g.edges[:, 1]]
    return g.edges[mask]


def simulate_samples(g: Graph, cfg: SimConfig) -> np.ndarray:
    """Raw replicate values of T (or its truncation when cfg.M is set)."""
    edges = g.edges if cfg.M is None else _truncated_edges(g, cfg.M, cfg.r_n)
    return _simulate_groups(g.n, [edges], cfg)[0]


def simulate(g: Graph, cfg: SimConfig) -> Pmf:
    """Empirical pmf of T over cfg.samples replicates; no tail mass."""
    return Pmf.from_samples(simulate_samples(g, cfg))


@dataclass(frozen=True)
class DecomposeResult:
    """Joint empirical law of the head/cross/tail split of the truncated T."""

    joint: dict  # (t_head, t_cross, t_tail) -> probability
    head: Pmf
    cross: Pmf
    tail: Pmf
    total: Pmf
    samples: np.ndarray = field(repr=False, default=None)  # (3, n_samples)


def decompose_samples(g: Graph, K: float, M: float, r_n: float,
                      cfg: SimConfig) -> np.ndarray:
    """(3, samples) array of the head/cross/tail components under shared draws."""
    if K <= 0 or M <= 0 or r_n <= 0:
        raise ValidationError("K, M and r_n must be positive")
    cut = math.ceil(K * r_n)
    if cut > g.n:
        raise ValidationError(f"ceil(K * r_n) = {cut} exceeds n = {g.n}")
    cfg = replace(cfg, M=M, r_n=r_n)
    edges = _truncated_edges(g, M, r_n)
    in_head_u = edges[:, 0] < cut
    in_head_v = edges[:, 1] < cut
    head = edges[in_head_u & in_head_v]
    tail = edges[~in_head_u & ~in_head_v]
    crossing = edges[in_head_u ^ in_head_v]
    return np.asarray(_simulate_groups(g.n, [head, crossing, tail], cfg))


def decompose(g: Graph, K: float, M: float, r_n: float,
              cfg: SimConfig) -> DecomposeResult:
    parts = decompose_samples(g, K, M, r_n, cfg)
    n = parts.shape[1]
    triples, counts = np.unique(parts.T, axis=0, return_counts=True)
    joint = {tuple(int(x) for x in t): c / n for t, c in zip(triples, counts)}
    return DecomposeResult(
        joint=joint,
        head=Pmf.from_samples(parts[0]),
        cross=Pmf.from_samples(parts[1]),
        tail=Pmf.from_samples(parts[2]),
        total=Pmf.from_samples(parts.sum(axis=0)),
        samples=parts,
    )


def general_law_mismatch(g: Graph, cfg: SimConfig) -> float:
    """Fraction of replicates where the integer-product statistic differs from
    the plain indicator count of active-active edges."""
    samples = simulate_samples(g, cfg)
    ind_cfg = replace(cfg, law=SparseLaw.bernoulli(cfg.law.prob_active))
    indicator = simulate_samples(g, ind_cfg)
    # shared seed gives shared active sets, so the comparison isolates values
    return float(np.mean(samples != indicator))


# ---------------------------------------------------------------------------
# exact enumeration (Bernoulli only)


def exact_pmf(g: Graph, p: float) -> Pmf:
    """Exact Bernoulli(p) pmf of T by summing over all 2^n on/off patterns."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError("p must be a probability")
    if g.n > EXACT_PMF_MAX_VERTICES:
        raise InstanceTooLargeError(
            f"exact enumeration is limited to {EXACT_PMF_MAX_VERTICES} vertices, "
            f"got {g.n}")
    n, m = g.n, g.m
    table = np.zeros((m + 1, n + 1), dtype=np.float64)
    chunk = 1 << 20
    u_arr = g.edges[:, 0].astype(np.uint64)
    v_arr = g.edges[:, 1].astype(np.uint64)
    for base in range(0, 1 << n, chunk):
        masks = np.arange(base, min(base + chunk, 1 << n), dtype=np.uint64)
        t = np.zeros(masks.size, dtype=np.int64)
        for u, v in zip(u_arr, v_arr):
            t += ((masks >> u) & (masks >> v) & np.uint64(1)).astype(np.int64)
        k = _POPCOUNT16[masks & np.uint64(0xFFFF)] + _POPCOUNT16[(masks >> np.uint64(16)) & np.uint64(0xFFFF)]
        np.add.at(table, (t, k), 1.0)
    kk = np.arange(n + 1, dtype=np.float64)
    if p in (0.0, 1.0):
        weights = np.where(kk == (0 if p == 0.0 else n), 1.0, 0.0)
    else:
        # direct powers: exact for dyadic p, and n is small enough that
        # underflow is not a worry
        weights = (p ** kk) * ((1.0 - p) ** (n - kk))
    pmf_vals = table @ weights
    probs = {t: float(pr) for t, pr in enumerate(pmf_vals) if pr > 0.0}
    return Pmf(probs)


# ---------------------------------------------------------------------------
# closed-form moments


def _motif_profile(g: Graph):
    m = g.m
    s = count_subgraph(g, "two_star")
    t = count_subgraph(g, "triangle")
    k13 = three_star_count(g)
    p4 = count_subgraph(g, "path3")
    d = g.degrees.astype(object)
    sv = neighbor_degree_sums(g).astype(object)
    d2 = int((d * (d - 1) // 2 * d + (d - 1) * sv).sum())
    return m, s, t, k13, p4, d2


def moment(g: Graph, p: float, a: int, M: float | None = None,
           r_n: float | None = None) -> float:
    """E[T^a] for Bernoulli(p) sites, a in {1, 2, 3}, via motif counting.

    Each ordered a-tuple of edges contributes p to the power of the vertex
    count of the union of its edges; tuples are grouped by union shape.
    """
    if a not in (1, 2, 3):
        raise ValidationError("moment order must be 1, 2, or 3")
    if M is not None:
        if r_n is None or r_n <= 0:
            raise ValidationError("truncated moments need a positive r_n")
        g = induced_truncation(g, M, r_n)
    m, s, t, k13, p4, d2 = _motif_profile(g)
    if a == 1:
        return m * p ** 2
    if a == 2:
        return m * p ** 2 + 2 * s * p ** 3 + (m * m - m - 2 * s) * p ** 4
    c5 = s * (m + 2) - d2 + 3 * t
    c6 = m * (m - 1) * (m - 2) // 6 - t - k13 - p4 - c5
    return (m * p ** 2
            + 6 * (s + t) * p ** 3
            + (3 * (m * (m - 1) - 2 * s) + 6 * (k13 + p4)) * p ** 4
            + 6 * c5 * p ** 5
            + 6 * c6 * p ** 6)


def truncated_mean_var(g: Graph, p: float, M: float,
                       r_n: float) -> tuple:
    """Exact mean and variance of the degree-truncated statistic.

    mean = |E_M| p^2 and variance = (1 - p^2) mean + 2 p^3 (1 - p) s_M with
    s_M the two-star count of the truncated graph.
    """
    if M <= 0 or r_n is None or r_n <= 0:
        raise ValidationError("truncation needs positive M and r_n")
    gm = induced_truncation(g, M, r_n)
    m = gm.m
    s = count_subgraph(gm, "two_star")
    mean = m * p ** 2
    var = (1.0 - p ** 2) * mean + 2.0 * p ** 3 * (1.0 - p) * s
    return mean, var
