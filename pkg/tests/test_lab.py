import math

import numpy as np
import pytest

from quadlimit.errors import ValidationError
from quadlimit.graphs import GraphFamily, build, induced_truncation
from quadlimit.lab import (
    CellResult,
    EXAMPLE_IDS,
    ExperimentReport,
    ScalingRule,
    TvDistance,
    check_conditions,
    default_rule,
    escaped_mass_target,
    reproduce,
    second_moment_check,
    tv_distance,
    _clip_degree_target,
)
from quadlimit.limits import preset
from quadlimit.quadform import Pmf, SimConfig, SparseLaw, exact_pmf, simulate


# ---------------------------------------------------------------------------
# scaling rules


def test_scaling_rule_values():
    assert ScalingRule("c-over-n", 2.0).p(100) == 0.02
    assert ScalingRule("c-over-sqrt-n", 1.0).p(100) == 0.1
    assert ScalingRule("sqrt-c-over-n", 2.0).p(200) == pytest.approx(0.1)
    assert ScalingRule("const", 0.3).p(999) == 0.3
    assert ScalingRule("c-over-n", 1.0).r(50) == 50.0


def test_scaling_rule_validation():
    with pytest.raises(ValidationError):
        ScalingRule("cubed", 1.0)
    with pytest.raises(ValidationError):
        ScalingRule("c-over-n", 0.0)


def test_default_rules():
    assert default_rule("cycle").kind == "sqrt-c-over-n"
    assert default_rule("star-plus-matching").kind == "c-over-sqrt-n"
    assert default_rule("disjoint-stars").kind == "c-over-n"
    assert default_rule("erdos-renyi").kind == "c-over-n"


# ---------------------------------------------------------------------------
# TV distance


def test_tv_identical_is_zero():
    p = Pmf({0: 0.5, 2: 0.5})
    assert tv_distance(p, p).value == 0.0


def test_tv_disjoint_point_masses():
    assert tv_distance(Pmf({0: 1.0}), Pmf({1: 1.0})).value == 1.0


def test_tv_lumps_residual_mass():
    p = Pmf({0: 0.9}, tail_mass=0.1)
    q = Pmf({0: 0.9, 1: 0.06}, tail_mass=0.04)
    d = tv_distance(p, q)
    assert d.value == pytest.approx(0.06)
    assert d.lumped_tail == pytest.approx(0.03)


def test_tv_simulation_against_exact_triangle():
    g = build(GraphFamily("complete", {"n": 3}, seed=1))
    exact = exact_pmf(g, 0.5)
    emp = simulate(g, SimConfig(samples=1_000_000, seed=2,
                                law=SparseLaw.bernoulli(0.5)))
    assert tv_distance(exact, emp).value <= 0.005


def test_tv_validation():
    with pytest.raises(ValidationError):
        TvDistance(1.5)
    with pytest.raises(ValidationError):
        TvDistance(0.2, lumped_tail=-0.1)


# ---------------------------------------------------------------------------
# report plumbing


def test_cell_result_validation():
    with pytest.raises(ValidationError):
        CellResult(n=5, M=1.0, seed=1, r_n=5.0, degree_distance=-0.5)
    with pytest.raises(ValidationError):
        CellResult(n=5, M=1.0, seed=1, r_n=5.0, tv=1.5)


def test_report_serialization():
    cells = (CellResult(n=10, M=2.0, seed=1, r_n=10.0, escaped_mass=0.5,
                        trunc_mean=1.0, trunc_var=0.9),)
    rep = ExperimentReport("demo", (10,), cells, {"escaped_mass": "single-point"})
    js = rep.to_json_dict()
    assert js["family"] == "demo" and js["cells"][0]["n"] == 10
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("family,n,M,seed,r_n")
    assert len(lines) == 2 and lines[1].startswith("demo,10,")


# ---------------------------------------------------------------------------
# check_conditions


def test_stars_degree_distance_formula():
    # truncated degree L1 for the star forest is exactly (K-1)/n
    fam = GraphFamily("disjoint-stars", {"n": 25}, seed=1)
    rep = check_conditions(fam, (25, 50, 100), preset("ex2.4-stars"),
                           K=5.0, M=2.0, samples=0)
    for cell in rep.cells:
        assert cell.degree_distance == pytest.approx(4.0 / cell.n, abs=1e-12)
        assert cell.escaped_mass == 0.0
        assert cell.tv is None
    assert rep.verdicts["degree_distance"] == "decreasing"
    assert rep.verdicts["escaped_mass"] == "at-target"
    assert rep.verdicts["kernel_distance"] == "decreasing"


def test_er_cells_per_seed_and_exact_window():
    fam = GraphFamily("erdos-renyi", {"n": 8, "q": 0.5}, seed=1)
    rep = check_conditions(fam, (8, 16), preset("ex2.1-er"), K=1.0, M=2.0,
                           samples=0)
    # five seeds per grid size for random families
    assert len(rep.cells) == 10
    assert sorted({c.seed for c in rep.cells}) == [1, 2, 3, 4, 5]
    # windows this small go through the exhaustive cut norm
    assert all(c.kernel_exact for c in rep.cells)


def test_er_alternating_fallback_above_block_limit():
    fam = GraphFamily("erdos-renyi", {"n": 64, "q": 0.5}, seed=1)
    rep = check_conditions(fam, (64,), preset("ex2.1-er"), K=1.0, M=2.0,
                           samples=0, seeds=(3,))
    assert all(c.kernel_exact is False for c in rep.cells)
    assert any("upper bounds" in note for note in rep.notes)


def test_bounded_degree_family_escapes_everything():
    # cycle: kernel target 0, degree target 0, escaped mass near 2
    fam = GraphFamily("cycle", {"n": 500}, seed=1)
    rep = check_conditions(fam, (500, 2000, 8000), preset("ex2.2-cycle"),
                           K=5.0, M=2.0, samples=0)
    escaped = rep.per_n("escaped_mass")
    assert abs(escaped[-1] - 2.0) < 0.1
    assert rep.verdicts["escaped_mass"] in ("decreasing", "decreasing-overall")
    assert rep.verdicts["kernel_distance"] in ("decreasing", "decreasing-overall")
    assert rep.verdicts["degree_distance"] in ("decreasing", "decreasing-overall")
    # truncation keeps every cycle vertex, so the pair in each cell is the
    # full mean |E| p^2 = 2 exactly
    for cell in rep.cells:
        assert cell.trunc_mean == pytest.approx(2.0, abs=1e-9)


def test_check_conditions_validation():
    fam = GraphFamily("cycle", {"n": 100}, seed=1)
    with pytest.raises(ValidationError):
        check_conditions(fam, (100,), preset("ex2.2-cycle"), K=0.0, M=1.0)
    with pytest.raises(ValidationError):
        check_conditions(fam, (100,), preset("ex2.2-cycle"), K=1.0, M=-1.0)


def test_cell_budget_trims_seeds_first(monkeypatch):
    monkeypatch.setenv("QUADLIMIT_MAX_CELLS", "4")
    fam = GraphFamily("erdos-renyi", {"n": 8, "q": 0.5}, seed=1)
    rep = check_conditions(fam, (8, 16), preset("ex2.1-er"), K=1.0, M=2.0,
                           samples=0)
    assert len(rep.cells) == 4
    assert sorted({c.seed for c in rep.cells}) == [1, 2]
    assert any("cell budget" in note for note in rep.notes)


def test_cell_budget_rejects_garbage(monkeypatch):
    monkeypatch.setenv("QUADLIMIT_MAX_CELLS", "lots")
    fam = GraphFamily("cycle", {"n": 100}, seed=1)
    with pytest.raises(ValidationError):
        check_conditions(fam, (100,), preset("ex2.2-cycle"), K=1.0, M=1.0,
                         samples=0)


# ---------------------------------------------------------------------------
# second-moment criterion


def test_second_moment_cycle():
    fam = GraphFamily("cycle", {"n": 1000}, seed=1)
    rep = second_moment_check(fam, (1000, 4000, 16000), (1.0, 2.0, 4.0), 2.0,
                              samples=20_000)
    grid_cells = [c for c in rep.cells if c.M is not None]
    assert len(grid_cells) == 9
    for c in grid_cells:
        assert c.trunc_mean == pytest.approx(2.0, abs=1e-9)
    top = [c for c in grid_cells if c.M == 4.0]
    gaps = [abs(c.trunc_var - 2.0) for c in top]
    assert gaps == sorted(gaps, reverse=True)
    assert rep.verdicts["poisson_limit_predicted"] == "yes"
    tv_cells = [c for c in rep.cells if c.tv is not None]
    assert tv_cells and all(c.tv < 0.05 for c in tv_cells)


def test_second_moment_star_degenerate():
    fam = GraphFamily("star", {"n": 400}, seed=1)
    rep = second_moment_check(fam, (400, 1600), (1.0,), 0.0, samples=2_000)
    for c in rep.cells:
        if c.M is not None:
            assert c.trunc_mean == 0.0 and c.trunc_var == 0.0


def test_second_moment_star_plus_matching():
    fam = GraphFamily("star-plus-matching", {"n": 400}, seed=1)
    rep = second_moment_check(fam, (400, 1600, 6400), (1.0, 2.0), 1.0,
                              samples=20_000)
    for c in rep.cells:
        if c.M is not None:
            # matching contributes n p^2 = 1 exactly; the star is cut away
            assert c.trunc_mean == pytest.approx(1.0, abs=1e-9)
            assert c.trunc_var == pytest.approx(1.0 - 1.0 / c.n, abs=1e-9)
    tv_cells = [c for c in rep.cells if c.tv is not None]
    assert all(c.tv < 0.05 for c in tv_cells)


def test_second_moment_mean_matches_truncated_edge_count():
    # closed form against the motif-count path through explicit truncation
    fam = GraphFamily("star-plus-matching", {"n": 100}, seed=1)
    rule = default_rule("star-plus-matching")
    rep = second_moment_check(fam, (100, 400), (1.0, 3.0), 1.0, samples=0)
    for c in rep.cells:
        if c.M is None:
            continue
        g = build(GraphFamily("star-plus-matching", {"n": c.n}, seed=1))
        kept = induced_truncation(g, c.M, rule.r(c.n))
        assert c.trunc_mean == pytest.approx(kept.m * rule.p(c.n) ** 2, rel=1e-12)


def test_second_moment_validation():
    fam = GraphFamily("cycle", {"n": 100}, seed=1)
    with pytest.raises(ValidationError):
        second_moment_check(fam, (100,), (1.0,), -2.0)


# ---------------------------------------------------------------------------
# escaped-mass targets and degree clipping


def test_escaped_mass_target_values():
    assert escaped_mass_target(preset("ex2.4-stars"), 5.0) == 0.0
    assert escaped_mass_target(preset("ex2.2-cycle"), 5.0) == 2.0
    # cascade at window 4: pair mass of scales >= 2 plus their excess mass
    got = escaped_mass_target(preset("ex2.6"), 4.0)
    assert got == pytest.approx(0.25 + 1.0 / 12.0, abs=1e-8)


def test_degree_target_clipping():
    clipped = _clip_degree_target(preset("ex2.6"), 4.0)
    assert np.array_equal(clipped.breakpoints, [0.0, 4.0])
    assert clipped.values[0] == pytest.approx(1 / 16 + 1 / 8)
    stars = _clip_degree_target(preset("ex2.4-stars"), 5.0)
    assert np.array_equal(stars.breakpoints, [0.0, 1.0, 5.0])
    assert np.array_equal(stars.values, [1.0, 0.0])


# ---------------------------------------------------------------------------
# reproduce


def test_reproduce_unknown_id():
    with pytest.raises(ValidationError):
        reproduce("ex9.9")
    assert EXAMPLE_IDS == ("ex2.1-er", "ex2.2-cycle", "ex2.3-spm", "ex2.4-stars",
                           "ex2.5", "ex2.6", "ex2.7-even", "ex2.7-odd")


def test_reproduce_stars_tv_shrinks_along_grid():
    rep = reproduce("ex2.4-stars", samples=50_000)
    tv = rep.per_n("tv")
    assert tv[-1] < tv[0]
    assert rep.verdicts["degree_distance"] == "decreasing"
    assert rep.family_id == "ex2.4-stars"


def test_reproduce_cascade_converges():
    rep = reproduce("ex2.6", samples=4_000)
    escaped = rep.per_n("escaped_mass")
    target = escaped_mass_target(preset("ex2.6"), 4.0)
    assert abs(escaped[-1] - target) < abs(escaped[0] - target)
    tv = rep.per_n("tv")
    assert tv[-1] < tv[0]


def test_reproduce_parity_split():
    rep = reproduce("ex2.7-odd", samples=4_000)
    assert rep.verdicts["second_moment_separation"] == "separated"
    assert any("gap 0.5000" in note for note in rep.notes)
    parities = {c.n % 2 for c in rep.cells if c.M is not None}
    assert parities == {0, 1}
