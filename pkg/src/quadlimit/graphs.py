"""Finite simple graphs with a canonical degree-sorted labeling.

Vertices are relabeled so that degrees are non-increasing, ties broken by
ascending original index. All downstream machinery (empirical graphons,
windowed statistics, truncations, the three-way edge decomposition) assumes
this canonical order. Storage is a sorted edge list plus CSR-style adjacency,
which serves both whole-edge iteration and per-vertex neighbor queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .rng import stream

GRAPH_KINDS = (
    "complete",
    "path",
    "cycle",
    "star",
    "disjoint-stars",
    "bipartite-random",
    "erdos-renyi",
    "sbm",
    "star-plus-matching",
    "coexistence-1",
    "coexistence-2",
    "nonconvergent",
    "edge-list-file",
)

_RANDOM_KINDS = {"bipartite-random", "erdos-renyi", "sbm", "coexistence-2", "nonconvergent"}


@dataclass(frozen=True)
class GraphFamily:
    """A named graph construction plus its parameters and (optional) seed."""

    kind: str
    params: dict
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ValidationError(f"unknown graph kind {self.kind!r}")
        if self.kind in _RANDOM_KINDS and self.seed is None:
            raise ValidationError(f"kind {self.kind!r} is random and needs a seed")
        _validate_params(self.kind, self.params)

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind, "params": dict(self.params)}
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @staticmethod
    def from_json_dict(obj: dict) -> "GraphFamily":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ParseError("graph family JSON must be an object with a 'kind' key")
        return GraphFamily(obj["kind"], dict(obj.get("params", {})), obj.get("seed"))


@dataclass(frozen=True)
class Graph:
    """Canonicalized simple graph.

    edges holds (u, v) rows with u < v in canonical labels, sorted
    lexicographically. label_order[i] is the original label of canonical
    vertex i. parent_positions is set on graphs produced by truncation and
    maps canonical labels back to canonical labels of the parent graph.
    """

    n: int
    edges: np.ndarray  # (m, 2) int64, u < v, canonical labels
    degrees: np.ndarray  # (n,) int64, non-increasing
    label_order: np.ndarray  # (n,) int64
    indptr: np.ndarray = field(repr=False)  # (n+1,) int64 CSR offsets
    neighbors: np.ndarray = field(repr=False)  # (2m,) int64, sorted per vertex
    parent_positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    def max_degree(self) -> int:
        return int(self.degrees[0]) if self.n else 0

    def has_edge(self, u: int, v: int) -> bool:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        i = np.searchsorted(self.neighbors[lo:hi], v)
        return i < hi - lo and self.neighbors[lo + int(i)] == v


def _validate_params(kind: str, params: dict):
    def need(*names):
        for name in names:
            if name not in params:
                raise ValidationError(f"kind {kind!r} needs parameter {name!r}")

    def positive_int(name):
        v = params[name]
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
            raise ValidationError(f"parameter {name!r} must be an integer >= 1, got {v!r}")
        return int(v)

    def probability(name):
        v = params[name]
        if not isinstance(v, (int, float, np.floating)) or not 0.0 <= float(v) <= 1.0:
            raise ValidationError(f"parameter {name!r} must be a probability in [0,1], got {v!r}")
        return float(v)

    if kind in ("complete", "path", "cycle", "star", "disjoint-stars",
                "star-plus-matching", "coexistence-1", "coexistence-2", "nonconvergent"):
        need("n")
        positive_int("n")
    elif kind == "erdos-renyi":
        need("n", "q")
        positive_int("n")
        probability("q")
    elif kind == "bipartite-random":
        need("n1", "n2", "q")
        positive_int("n1")
        positive_int("n2")
        probability("q")
    elif kind == "sbm":
        need("sizes", "probs")
        sizes = params["sizes"]
        probs = params["probs"]
        if not sizes or any(not isinstance(s, (int, np.integer)) or s < 1 for s in sizes):
            raise ValidationError("sbm sizes must be integers >= 1")
        k = len(sizes)
        if len(probs) != k or any(len(row) != k for row in probs):
            raise ValidationError("sbm probs must be a square matrix matching sizes")
        for i in range(k):
            for j in range(k):
                pij = probs[i][j]
                if not 0.0 <= float(pij) <= 1.0:
                    raise ValidationError("sbm probabilities must lie in [0,1]")
                if abs(float(pij) - float(probs[j][i])) > 0:
                    raise ValidationError("sbm probability matrix must be symmetric")
    elif kind == "edge-list-file":
        need("path")


# ---------------------------------------------------------------------------
# construction


def _finish(n: int, edges_orig: np.ndarray, parent_positions=None) -> Graph:
    """Canonicalize an edge list given in original labels."""
    if edges_orig.size:
        u = np.minimum(edges_orig[:, 0], edges_orig[:, 1])
        v = np.maximum(edges_orig[:, 0], edges_orig[:, 1])
        if np.any(u == v):
            raise ValidationError("self-loops are not allowed")
        key = u.astype(np.int64) * n + v
        if np.unique(key).size != key.size:
            raise ValidationError("duplicate edges are not allowed")
        deg_orig = np.bincount(u, minlength=n) + np.bincount(v, minlength=n)
    else:
        u = v = np.zeros(0, dtype=np.int64)
        deg_orig = np.zeros(n, dtype=np.int64)

    # canonical order: degree descending, ties by ascending original index
    order = np.lexsort((np.arange(n), -deg_orig))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    if u.size:
        cu = rank[u]
        cv = rank[v]
        swap = cu > cv
        cu2 = np.where(swap, cv, cu)
        cv2 = np.where(swap, cu, cv)
        edge_key = cu2 * n + cv2
        esort = np.argsort(edge_key, kind="stable")
        edges = np.column_stack([cu2[esort], cv2[esort]]).astype(np.int64)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)

    degrees = deg_orig[order].astype(np.int64)

    # CSR adjacency over canonical labels
    if edges.size:
        heads = np.concatenate([edges[:, 0], edges[:, 1]])
        tails = np.concatenate([edges[:, 1], edges[:, 0]])
        adj_order = np.lexsort((tails, heads))
        neighbors = tails[adj_order]
        counts = np.bincount(heads, minlength=n)
    else:
        neighbors = np.zeros(0, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])

    pp = None
    if parent_positions is not None:
        pp = np.asarray(parent_positions, dtype=np.int64)[order]

    return Graph(
        n=n,
        edges=edges,
        degrees=degrees,
        label_order=order.astype(np.int64),
        indptr=indptr,
        neighbors=neighbors.astype(np.int64),
        parent_positions=pp,
    )


def _er_pairs(n_pairs: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform m-subset of pair indices with m ~ Bin(n_pairs, q).

    Equivalent in law to independent Bernoulli(q) indicators per pair.
    """
    if n_pairs == 0 or q == 0.0:
        return np.zeros(0, dtype=np.int64)
    if q == 1.0:
        return np.arange(n_pairs, dtype=np.int64)
    m = int(rng.binomial(n_pairs, q))
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if m > n_pairs // 2:
        # dense: permute all pair indices
        return np.sort(rng.permutation(n_pairs)[:m]).astype(np.int64)
    chosen = np.unique(rng.integers(0, n_pairs, size=m))
    while chosen.size < m:
        extra = rng.integers(0, n_pairs, size=m - chosen.size)
        chosen = np.unique(np.concatenate([chosen, extra]))
    return chosen.astype(np.int64)


def _decode_triangular(idx: np.ndarray, n: int) -> np.ndarray:
    """Map linear indices of the strict upper triangle of an n x n grid to (u, v)."""
    # row u occupies indices [u*n - u*(u+1)/2 - u, ...); solve by quadratic formula
    idxf = idx.astype(np.float64)
    u = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8 * idxf)) / 2).astype(np.int64)
    # guard against float rounding at row boundaries
    start = u * (2 * n - u - 1) // 2
    u = np.where(idx < start, u - 1, u)
    start = u * (2 * n - u - 1) // 2
    over = idx >= start + (n - 1 - u)
    u = np.where(over, u + 1, u)
    start = u * (2 * n - u - 1) // 2
    v = idx - start + u + 1
    return np.column_stack([u, v])


def _er_edges(n: int, q: float, rng: np.random.Generator, offset: int = 0) -> np.ndarray:
    pairs = n * (n - 1) // 2
    idx = _er_pairs(pairs, q, rng)
    if idx.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return _decode_triangular(idx, n) + offset


def _bipartite_edges(n1: int, n2: int, q: float, rng: np.random.Generator,
                     off1: int = 0, off2: int | None = None) -> np.ndarray:
    if off2 is None:
        off2 = off1 + n1
    idx = _er_pairs(n1 * n2, q, rng)
    if idx.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    u = idx // n2 + off1
    v = idx % n2 + off2
    return np.column_stack([u, v])


def _stars_block(n_stars: int, leaves_per_star: int, center_offset: int,
                 leaf_offset: int) -> np.ndarray:
    """Edges of n_stars disjoint stars; centers and leaves in separate label ranges."""
    centers = np.repeat(np.arange(n_stars, dtype=np.int64) + center_offset, leaves_per_star)
    leaves = np.arange(n_stars * leaves_per_star, dtype=np.int64) + leaf_offset
    return np.column_stack([centers, leaves])


def build(family: GraphFamily) -> Graph:
    """Construct and canonicalize a graph for the given family."""
    kind = family.kind
    p = family.params

    if kind == "complete":
        n = int(p["n"])
        iu = np.triu_indices(n, k=1)
        edges = np.column_stack(iu).astype(np.int64)
        return _finish(n, edges)

    if kind == "path":
        n = int(p["n"])
        a = np.arange(n - 1, dtype=np.int64)
        return _finish(n, np.column_stack([a, a + 1]))

    if kind == "cycle":
        n = int(p["n"])
        if n < 3:
            raise ValidationError("cycle needs n >= 3")
        a = np.arange(n, dtype=np.int64)
        return _finish(n, np.column_stack([a, (a + 1) % n]))

    if kind == "star":
        # star with n leaves: n+1 vertices, center labeled 0
        n = int(p["n"])
        leaves = np.arange(1, n + 1, dtype=np.int64)
        return _finish(n + 1, np.column_stack([np.zeros(n, dtype=np.int64), leaves]))

    if kind == "disjoint-stars":
        # n disjoint stars with n leaves each; centers 0..n-1, then leaves
        n = int(p["n"])
        return _finish(n * n + n, _stars_block(n, n, 0, n))

    if kind == "erdos-renyi":
        n = int(p["n"])
        edges = _er_edges(n, float(p["q"]), stream(family.seed, "er", n))
        return _finish(n, edges)

    if kind == "bipartite-random":
        n1, n2 = int(p["n1"]), int(p["n2"])
        edges = _bipartite_edges(n1, n2, float(p["q"]),
                                 stream(family.seed, "bip", n1, n2))
        return _finish(n1 + n2, edges)

    if kind == "sbm":
        sizes = [int(s) for s in p["sizes"]]
        probs = p["probs"]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        parts = []
        for i in range(len(sizes)):
            for j in range(i, len(sizes)):
                rng = stream(family.seed, "sbm", i, j)
                if i == j:
                    parts.append(_er_edges(sizes[i], float(probs[i][i]), rng,
                                           offset=int(offsets[i])))
                else:
                    parts.append(_bipartite_edges(sizes[i], sizes[j], float(probs[i][j]),
                                                  rng, off1=int(offsets[i]),
                                                  off2=int(offsets[j])))
        edges = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
        return _finish(int(offsets[-1]), edges)

    if kind == "star-plus-matching":
        # star with n leaves (center 0, leaves 1..n) plus n disjoint edges
        n = int(p["n"])
        center = np.zeros(n, dtype=np.int64)
        star = np.column_stack([center, np.arange(1, n + 1, dtype=np.int64)])
        a = n + 1 + 2 * np.arange(n, dtype=np.int64)
        matching = np.column_stack([a, a + 1])
        return _finish(3 * n + 1, np.concatenate([star, matching]))

    if kind == "coexistence-1":
        # n disjoint n-stars (centers 0..n-1, leaves n..n^2+n-1), a complete
        # graph on the centers, and a disjoint path on n^2 further vertices
        n = int(p["n"])
        stars = _stars_block(n, n, 0, n)
        iu = np.triu_indices(n, k=1)
        clique = np.column_stack(iu).astype(np.int64)
        base = n * n + n
        a = np.arange(n * n - 1, dtype=np.int64) + base
        path = np.column_stack([a, a + 1])
        return _finish(2 * n * n + n, np.concatenate([stars, clique, path]))

    if kind == "coexistence-2":
        return _build_coexistence_2(int(p["n"]), family.seed)

    if kind == "nonconvergent":
        return _build_nonconvergent(int(p["n"]), family.seed)

    if kind == "edge-list-file":
        n, edges = read_edge_list(str(p["path"]))
        return _finish(n, edges)

    raise ValidationError(f"unknown graph kind {kind!r}")


def _build_coexistence_2(n: int, seed: int) -> Graph:
    """Geometric cascade of star blocks with an ER overlay per scale.

    Scale s in 1..ceil(log4 n) contributes 4^s n stars with floor(n/16^s)
    leaves each, plus G(4^s n, 32^-s) on that scale's centers. Leaves must
    round down: rounding up would give every deep scale (16^s > n) one leaf
    per center, and those scales have so many centers that the spurious
    edges would carry mass that never vanishes. Centers occupy labels
    consecutively by scale; leaves follow all centers, grouped by scale
    then star.
    """
    n_scales = max(1, math.ceil(math.log(n, 4))) if n > 1 else 1
    m_s = [(4 ** s) * n for s in range(1, n_scales + 1)]
    l_s = [n // (16 ** s) for s in range(1, n_scales + 1)]
    center_off = np.concatenate([[0], np.cumsum(m_s)])
    total_centers = int(center_off[-1])
    parts = []
    leaf_off = total_centers
    for s in range(n_scales):
        parts.append(_stars_block(m_s[s], l_s[s], int(center_off[s]), leaf_off))
        leaf_off += m_s[s] * l_s[s]
        c_s = 1.0 / (32 ** (s + 1))
        parts.append(_er_edges(m_s[s], c_s, stream(seed, "coex2", s),
                               offset=int(center_off[s])))
    return _finish(leaf_off, np.concatenate(parts))


def _build_nonconvergent(n: int, seed: int) -> Graph:
    """Two independent ER graphs plus n disjoint n-stars whose centers sit on
    the first ER block when n is odd and on the second when n is even."""
    er1 = _er_edges(n, 0.25, stream(seed, "ncv", 1), offset=0)
    er2 = _er_edges(n, 0.5, stream(seed, "ncv", 2), offset=n)
    center_base = 0 if n % 2 == 1 else n
    centers = np.repeat(np.arange(n, dtype=np.int64) + center_base, n)
    leaves = np.arange(n * n, dtype=np.int64) + 2 * n
    stars = np.column_stack([centers, leaves])
    return _finish(2 * n + n * n, np.concatenate([er1, er2, stars]))


# ---------------------------------------------------------------------------
# edge-list files


def read_edge_list(path: str) -> tuple[int, np.ndarray]:
    """Parse a text edge list: one "u v" pair per line, 0-indexed, '#' comments.

    Returns (n, edges) with n = 1 + max label. Duplicates (in either
    orientation) and self-loops are rejected.
    """
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                parts = text.split()
                if len(parts) != 2:
                    raise ParseError(f"{path}:{lineno}: expected 'u v', got {line.rstrip()!r}")
                try:
                    u, v = int(parts[0]), int(parts[1])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: labels must be integers") from None
                if u < 0 or v < 0:
                    raise ParseError(f"{path}:{lineno}: labels must be >= 0")
                if u == v:
                    raise ParseError(f"{path}:{lineno}: self-loop {u}")
                rows.append((min(u, v), max(u, v)))
    except OSError as exc:
        raise ParseError(f"cannot read edge list {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no edges found")
    edges = np.asarray(rows, dtype=np.int64)
    n = int(edges.max()) + 1
    key = edges[:, 0] * n + edges[:, 1]
    if np.unique(key).size != key.size:
        raise ParseError(f"{path}: duplicate edges are not allowed")
    return n, edges


def write_edge_list(g: Graph, path: str):
    """Write the canonical edge list, one 'u v' per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")


# ---------------------------------------------------------------------------
# motif counting


def count_subgraph(g: Graph, motif: str) -> int:
    """Exact count of copies of a small motif.

    edge: |E|. two_star: sum_v C(d_v, 2). triangle and path3 (the 3-edge
    path) are counted from adjacency; both count subgraph copies, not
    induced ones.
    """
    if motif == "edge":
        return g.m
    if motif == "two_star":
        d = g.degrees
        return int((d * (d - 1) // 2).sum())
    if motif == "triangle":
        return _triangle_count(g)
    if motif == "path3":
        t = _triangle_count(g)
        if g.m == 0:
            return 0
        du = g.degrees[g.edges[:, 0]]
        dv = g.degrees[g.edges[:, 1]]
        return int(((du - 1) * (dv - 1)).sum()) - 3 * t
    raise ValidationError(f"unknown motif {motif!r}")


def _triangle_count(g: Graph) -> int:
    """Sum over edges of the common-neighbor count of u and v, divided by 3."""
    total = 0
    nbr = g.neighbors
    ptr = g.indptr
    for u, v in g.edges:
        a = nbr[ptr[u]:ptr[u + 1]]
        b = nbr[ptr[v]:ptr[v + 1]]
        total += np.intersect1d(a, b, assume_unique=True).size
    return int(total // 3)


def three_star_count(g: Graph) -> int:
    """sum_v C(d_v, 3); needed by third-moment formulas."""
    d = g.degrees
    return int((d * (d - 1) * (d - 2) // 6).sum())


def neighbor_degree_sums(g: Graph) -> np.ndarray:
    """S_v = sum of degrees over the neighbors of v."""
    out = np.zeros(g.n, dtype=np.int64)
    if g.m:
        np.add.at(out, g.edges[:, 0], g.degrees[g.edges[:, 1]])
        np.add.at(out, g.edges[:, 1], g.degrees[g.edges[:, 0]])
    return out


# ---------------------------------------------------------------------------
# truncation and diagnostics


def truncation_kept(g: Graph, M: float, r_n: float) -> np.ndarray:
    """Canonical positions of vertices with degree <= M * r_n."""
    if M <= 0 or r_n <= 0:
        raise ValidationError("M and r_n must be positive")
    return np.nonzero(g.degrees <= M * r_n)[0]


def induced_truncation(g: Graph, M: float, r_n: float) -> Graph:
    """Induced subgraph on the vertices of degree <= M * r_n.

    Degrees are recomputed inside the subgraph and the result is
    re-canonicalized; parent_positions maps back to g's canonical labels.
    """
    kept = truncation_kept(g, M, r_n)
    keep_mask = np.zeros(g.n, dtype=bool)
    keep_mask[kept] = True
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[kept] = np.arange(kept.size)
    if g.m:
        emask = keep_mask[g.edges[:, 0]] & keep_mask[g.edges[:, 1]]
        edges = new_id[g.edges[emask]]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    return _finish(int(kept.size), edges, parent_positions=kept)


def degree_decay_diagnostic(g: Graph, r_n: float, K: float) -> float:
    """d_(ceil(K r_n)) / r_n under the canonical labeling."""
    if r_n <= 0 or K <= 0:
        raise ValidationError("r_n and K must be positive")
    if g.n == 0:
        return 0.0
    idx = math.ceil(K * r_n)
    if idx > g.n:
        raise ValidationError(
            f"index ceil(K*r_n) = {idx} exceeds vertex count {g.n}")
    return float(g.degrees[idx - 1]) / r_n
