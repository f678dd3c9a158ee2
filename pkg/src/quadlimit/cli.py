"""Batch front end tying the package together for scripted runs.

One executable, ten subcommands: build graphs, simulate or enumerate the
quadratic form, evaluate and sample the limiting laws, run the Poisson
integral sampler, and sweep the convergence experiments.

Exit codes: 0 on success, 2 when the inputs are bad (including unreadable
files), 3 when a runtime guard trips (instance too large, too many limit
blocks). With --json-errors the failure also lands on stderr as a single
JSON object. stdout always carries a one line summary; full results go to
--out. Identical argv with identical seeds produce byte identical files.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import lab
from .errors import (BlockCountExceededError, InstanceTooLargeError, ParseError,
                     RuntimeLimitError, SimulationOverflowError, ValidationError)
from .graphs import _RANDOM_KINDS, GraphFamily, build, write_edge_list
from .limits import (PRESET_IDS, LimitSpec, PoissonBlockIntegrand,
                     ito_block_integral, ito_expected_value, limit_pmf, preset,
                     sample_limit, univariate_expected_value,
                     univariate_ito_integral)
from .quadform import SimConfig, SparseLaw, exact_pmf, moment, simulate
from .stepfunc import StepFunction1D

_STOCHASTIC = ("gen", "simulate", "limit-sample", "ito", "check-conditions",
               "second-moment", "reproduce")


# ---------------------------------------------------------------------------
# the parsed invocation


@dataclass(frozen=True)
class Command:
    """One parsed invocation: subcommand, its flags, and where output goes.

    fmt is "json" or "csv"; fmt_source records whether a flag, the --out
    extension, or the default picked it (gen writes plain edge list text
    when nothing asked for a format, so the file feeds straight back into
    --graph file:...).
    """

    subcommand: str
    options: dict
    out: str | None
    fmt: str
    fmt_source: str = "default"
    dry_run: bool = False


class _Parser(argparse.ArgumentParser):
    # argparse wants to print usage and die; we want a catchable error so
    # the exit code contract and --json-errors hold for bad flags too
    def error(self, message):
        raise ValidationError(message)


_GRAPH_HELP = ("k:n, cycle:n, stars:n, er:n:q, file:path, a bare edge list "
               "path, any single size kind like star:50, or inline family JSON")


def _build_parser():
    top = _Parser(prog="quadlimit",
                  description="simulate sparse quadratic forms on graphs and "
                              "compare them to their limiting laws")
    sub = top.add_subparsers(dest="subcommand", parser_class=_Parser)

    def sp(name, blurb, seeded=True, seed_needed=True):
        p = sub.add_parser(name, help=blurb, description=blurb)
        fmt = p.add_mutually_exclusive_group()
        fmt.add_argument("--json", dest="fmt_json", action="store_true",
                         help="write --out as JSON")
        fmt.add_argument("--csv", dest="fmt_csv", action="store_true",
                         help="write --out as CSV")
        p.add_argument("--out", metavar="PATH",
                       help="file for the full result; stdout only gets a summary")
        p.add_argument("--dry-run", action="store_true",
                       help="validate the inputs and stop before any computation")
        p.add_argument("--json-errors", action="store_true",
                       help="report failures as one JSON object on stderr")
        if seeded:
            p.add_argument("--seed", type=int, required=seed_needed,
                           help="base seed for every random draw in this run")
        return p

    p = sp("gen", "build a graph and write it out", seed_needed=False)
    p.add_argument("--graph", required=True, help=_GRAPH_HELP)

    p = sp("simulate", "Monte Carlo law of the quadratic form")
    p.add_argument("--graph", required=True, help=_GRAPH_HELP)
    p.add_argument("--p", type=float, help="Bernoulli site probability")
    p.add_argument("--law", help="site law such as poisson:0.05 or binomial:10:0.005")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--chunks", type=int, default=1,
                   help="split the replicates into this many chunks; the "
                        "result does not depend on it")
    p.add_argument("--M", type=float, help="degree truncation level")
    p.add_argument("--r-n", type=float, help="degree scale the truncation is measured in")

    p = sp("exact", "exact pmf by enumeration over active sets", seeded=False)
    p.add_argument("--graph", required=True, help=_GRAPH_HELP)
    p.add_argument("--p", type=float, required=True)

    p = sp("moments", "closed form moments from motif counts", seeded=False)
    p.add_argument("--graph", required=True, help=_GRAPH_HELP)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--a", type=int, default=1, help="moment order (1, 2 or 3)")
    p.add_argument("--M", type=float, help="degree truncation level")
    p.add_argument("--r-n", type=float, help="degree scale for the truncation")

    def limit_source(p):
        grp = p.add_mutually_exclusive_group(required=True)
        grp.add_argument("--preset", choices=list(PRESET_IDS),
                         help="one of the built in worked examples")
        grp.add_argument("--limit-file", metavar="PATH",
                         help="JSON file with the limit description "
                              "(block kernel, linear part, scalar rate)")

    p = sp("limit-sample", "draw from the limiting law")
    limit_source(p)
    p.add_argument("--samples", type=int, required=True)

    p = sp("limit-pmf", "enumerate the limiting pmf to a mass tolerance", seeded=False)
    limit_source(p)
    p.add_argument("--eps", type=float, default=1e-6,
                   help="unenumerated mass allowed, at most 1e-2")

    p = sp("ito", "sample a Poisson block integral against its expected value")
    p.add_argument("--integrand", required=True, metavar="PATH",
                   help="JSON with 'breakpoints' and 'values' (matrix, or "
                        "vector with --univariate)")
    p.add_argument("--univariate", action="store_true",
                   help="treat the integrand as a one variable step function")
    p.add_argument("--samples", type=int, required=True)

    p = sp("check-conditions", "sweep sizes and test the convergence conditions")
    p.add_argument("--family", required=True,
                   help="parametric family, same syntax as --graph; its size "
                        "is overridden by each --grid entry")
    p.add_argument("--grid", required=True, help="comma separated sizes, e.g. 25,50,100")
    limit_source(p)
    p.add_argument("--K", type=float, required=True, help="degree window for the kernel comparison")
    p.add_argument("--M", type=float, required=True, help="degree truncation level")
    p.add_argument("--rule", help="scaling rule kind:c, e.g. c-over-n:2 (default per family)")
    p.add_argument("--samples", type=int, default=20_000,
                   help="simulation replicates per cell; 0 skips the distance check")

    p = sp("second-moment", "truncated mean and variance over an (n, M) grid")
    p.add_argument("--family", required=True,
                   help="parametric family, same syntax as --graph")
    p.add_argument("--grid", required=True, help="comma separated sizes")
    p.add_argument("--m-grid", required=True, help="comma separated truncation levels")
    p.add_argument("--lam", type=float, required=True,
                   help="mean of the Poisson law the variance should approach")
    p.add_argument("--rule", help="scaling rule kind:c (default per family)")
    p.add_argument("--samples", type=int, default=20_000)

    p = sp("reproduce", "run one worked example end to end")
    p.add_argument("example", help="example id, or any unambiguous prefix; "
                                   "one of " + ", ".join(lab.EXAMPLE_IDS))
    p.add_argument("--samples", type=int, default=20_000)

    return top


def parse_command(argv) -> Command:
    ns = _build_parser().parse_args(list(argv))
    opts = vars(ns).copy()
    subcommand = opts.pop("subcommand", None)
    if subcommand is None:
        raise ValidationError("a subcommand is required; see quadlimit --help")
    fmt_json = opts.pop("fmt_json", False)
    fmt_csv = opts.pop("fmt_csv", False)
    out = opts.pop("out", None)
    dry_run = opts.pop("dry_run", False)
    opts.pop("json_errors", None)
    if fmt_json:
        fmt, fmt_source = "json", "flag"
    elif fmt_csv:
        fmt, fmt_source = "csv", "flag"
    elif out and out.lower().endswith(".json"):
        fmt, fmt_source = "json", "extension"
    elif out and out.lower().endswith(".csv"):
        fmt, fmt_source = "csv", "extension"
    else:
        fmt, fmt_source = "json", "default"
    return Command(subcommand, opts, out, fmt, fmt_source, dry_run)


# ---------------------------------------------------------------------------
# small parsers for the flag value languages


_SHORTHAND = {"k": "complete", "stars": "disjoint-stars", "er": "erdos-renyi"}
_SIZE_KINDS = ("complete", "path", "cycle", "star", "disjoint-stars",
               "star-plus-matching", "coexistence-1", "coexistence-2",
               "nonconvergent")


def _as_int(token, where):
    try:
        return int(token)
    except ValueError:
        raise ValidationError(f"expected an integer in {where!r}, got {token!r}") from None


def _as_float(token, where):
    try:
        return float(token)
    except ValueError:
        raise ValidationError(f"expected a number in {where!r}, got {token!r}") from None


def parse_family(text: str, seed: int | None = None) -> GraphFamily:
    """Turn a --graph value into a family.

    Accepts the colon shorthands, file:path, a bare path (read as an edge
    list), and inline JSON. A random family picks up `seed` unless the JSON
    already carries one.
    """
    text = text.strip()
    if not text:
        raise ValidationError("empty graph description")
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"inline graph JSON does not parse: {exc}") from None
        if seed is not None and isinstance(obj, dict) and "seed" not in obj:
            obj = {**obj, "seed": seed}
        return GraphFamily.from_json_dict(obj)
    head, sep, rest = text.partition(":")
    if not sep:
        return GraphFamily("edge-list-file", {"path": text})
    if head == "file":
        return GraphFamily("edge-list-file", {"path": rest})
    kind = _SHORTHAND.get(head, head)
    if kind == "erdos-renyi":
        bits = rest.split(":")
        if len(bits) != 2:
            raise ValidationError(f"the er shorthand is er:n:q, got {text!r}")
        n = _as_int(bits[0], text)
        q = _as_float(bits[1], text)
        return GraphFamily(kind, {"n": n, "q": q}, seed=seed)
    if kind in _SIZE_KINDS:
        n = _as_int(rest, text)
        return GraphFamily(kind, {"n": n},
                           seed=seed if kind in _RANDOM_KINDS else None)
    raise ValidationError(
        f"unknown graph shorthand {text!r}; try k:n, cycle:n, stars:n, "
        f"er:n:q, file:path, or inline family JSON")


def parse_law(text: str) -> SparseLaw:
    """kind:params shorthand, e.g. bernoulli:0.3 or hypergeometric:50:5:4."""
    parts = text.strip().split(":")
    kind, raw = parts[0], parts[1:]
    if not raw:
        raise ValidationError(f"law {text!r} has no parameters")

    def num(tok):
        try:
            return int(tok)
        except ValueError:
            return _as_float(tok, text)

    return SparseLaw(kind, tuple(num(t) for t in raw))


def parse_rule(text):
    if text is None:
        return None
    head, sep, rest = text.partition(":")
    c = _as_float(rest, text) if sep else 1.0
    return lab.ScalingRule(head, c)


def _parse_grid(text, where, cast):
    toks = [t.strip() for t in text.split(",") if t.strip()]
    if not toks:
        raise ValidationError(f"empty grid in {where}")
    return tuple(cast(t, text) for t in toks)


def _load_json_file(path, what):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} {path} is not valid JSON: {exc}") from None


def _limit_source(opts):
    """Resolve --preset / --limit-file to (label, LimitSpec)."""
    pid = opts.get("preset")
    if pid is not None:
        return pid, preset(pid)
    path = opts["limit_file"]
    obj = _load_json_file(path, "limit description")
    return os.path.basename(path), LimitSpec.from_json_dict(obj)


def _resolve_example(text):
    if text in lab.EXAMPLE_IDS:
        return text
    hits = [e for e in lab.EXAMPLE_IDS if e.startswith(text)]
    if len(hits) == 1:
        return hits[0]
    if hits:
        raise ValidationError(
            f"ambiguous example id {text!r}: matches {', '.join(hits)}")
    raise ValidationError(
        f"unknown example id {text!r}; available: {', '.join(lab.EXAMPLE_IDS)}")


def _family_template(text, seed):
    fam = parse_family(text, seed=seed)
    if fam.kind == "edge-list-file":
        raise ValidationError(
            "experiments need a parametric family whose size can be swept, "
            "not a fixed edge list")
    return fam


def _seed_ladder(fam, seed):
    # random families get a replicate ladder, deterministic ones one stream
    if fam.kind in _RANDOM_KINDS:
        return tuple(seed + i for i in range(len(lab.DEFAULT_SEEDS)))
    return (seed,)


# ---------------------------------------------------------------------------
# output plumbing


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dest(cmd):
    return f" -> {cmd.out}" if cmd.out else ""


def _pmf_csv(pmf):
    lines = ["value,prob"]
    lines += [f"{k},{v!r}" for k, v in pmf.probs.items()]
    if pmf.tail_mass > 0:
        lines.append(f"tail,{pmf.tail_mass!r}")
    return "\n".join(lines) + "\n"


def _emit_pmf(cmd, pmf):
    if not cmd.out:
        return
    if cmd.fmt == "csv":
        _write(cmd.out, _pmf_csv(pmf))
    else:
        _write(cmd.out, json.dumps(pmf.to_json_dict()) + "\n")


def _emit_report(cmd, report):
    if not cmd.out:
        return
    if cmd.fmt == "csv":
        _write(cmd.out, report.to_csv())
    else:
        _write(cmd.out, json.dumps(report.to_json_dict()) + "\n")


def _emit_record(cmd, record):
    """A flat one row record: JSON object, or a two line CSV."""
    if not cmd.out:
        return
    if cmd.fmt == "csv":
        head = ",".join(record)
        row = ",".join("" if v is None else f"{v!r}" if isinstance(v, float)
                       else str(v) for v in record.values())
        _write(cmd.out, head + "\n" + row + "\n")
    else:
        _write(cmd.out, json.dumps(record) + "\n")


def _dry_checks(cmd, families=()):
    for fam in families:
        if fam.kind == "edge-list-file":
            path = str(fam.params["path"])
            if not os.path.isfile(path):
                raise ParseError(f"cannot read edge list {path}: not a file")
    if cmd.out:
        parent = os.path.dirname(os.path.abspath(cmd.out))
        if not os.path.isdir(parent):
            raise ValidationError(f"output directory does not exist: {parent}")


def _verdict_text(report):
    return " ".join(f"{k}={v}" for k, v in report.verdicts.items())


# ---------------------------------------------------------------------------
# subcommands


_RUNNERS = {}


def _runner(name):
    def keep(fn):
        _RUNNERS[name] = fn
        return fn
    return keep


@_runner("gen")
def _run_gen(cmd):
    opts = cmd.options
    fam = parse_family(opts["graph"], seed=opts.get("seed"))
    if cmd.dry_run:
        _dry_checks(cmd, [fam])
        return f"dry-run ok: gen {fam.kind}"
    g = build(fam)
    note = ""
    if cmd.out:
        if cmd.fmt_source == "default":
            write_edge_list(g, cmd.out)
            note = " (edge list)"
        elif cmd.fmt == "json":
            payload = {"kind": fam.kind, "n": g.n, "edges": g.edges.tolist()}
            _write(cmd.out, json.dumps(payload) + "\n")
            note = " (json)"
        else:
            _write(cmd.out, "u,v\n"
                   + "".join(f"{u},{v}\n" for u, v in g.edges))
            note = " (csv)"
    return f"gen: kind={fam.kind} n={g.n} edges={g.m}{_dest(cmd)}{note}"


def _site_law(opts):
    p, law_text = opts.get("p"), opts.get("law")
    if (p is None) == (law_text is None):
        raise ValidationError("provide exactly one of --p or --law")
    if p is not None:
        return SparseLaw.bernoulli(p)
    return parse_law(law_text)


@_runner("simulate")
def _run_simulate(cmd):
    opts = cmd.options
    fam = parse_family(opts["graph"], seed=opts["seed"])
    law = _site_law(opts)
    cfg = SimConfig(samples=opts["samples"], seed=opts["seed"], law=law,
                    chunks=opts["chunks"], M=opts.get("M"), r_n=opts.get("r_n"))
    if cmd.dry_run:
        _dry_checks(cmd, [fam])
        return (f"dry-run ok: simulate {fam.kind} with {law.describe()} "
                f"at {cfg.samples} samples")
    g = build(fam)
    pmf = simulate(g, cfg)
    _emit_pmf(cmd, pmf)
    return (f"simulate: n={g.n} edges={g.m} samples={cfg.samples} "
            f"mean={pmf.mean:.6g} variance={pmf.variance:.6g}{_dest(cmd)}")


@_runner("exact")
def _run_exact(cmd):
    opts = cmd.options
    fam = parse_family(opts["graph"])
    p = opts["p"]
    if cmd.dry_run:
        _dry_checks(cmd, [fam])
        return f"dry-run ok: exact {fam.kind} at p={p:g}"
    g = build(fam)
    pmf = exact_pmf(g, p)
    _emit_pmf(cmd, pmf)
    return (f"exact: n={g.n} edges={g.m} p={p:g} support={len(pmf.probs)} "
            f"mean={pmf.mean:.10g}{_dest(cmd)}")


@_runner("moments")
def _run_moments(cmd):
    opts = cmd.options
    fam = parse_family(opts["graph"])
    p, a, M, r_n = opts["p"], opts["a"], opts.get("M"), opts.get("r_n")
    if cmd.dry_run:
        _dry_checks(cmd, [fam])
        return f"dry-run ok: moments a={a} for {fam.kind}"
    g = build(fam)
    value = moment(g, p, a, M, r_n)
    _emit_record(cmd, {"a": a, "p": p, "M": M, "r_n": r_n, "value": value})
    return f"moments: a={a} p={p:g} value={value!r}{_dest(cmd)}"


@_runner("limit-sample")
def _run_limit_sample(cmd):
    opts = cmd.options
    label, limit = _limit_source(opts)
    if cmd.dry_run:
        _dry_checks(cmd)
        return f"dry-run ok: limit-sample {label}"
    pmf = sample_limit(limit, opts["samples"], opts["seed"])
    _emit_pmf(cmd, pmf)
    return (f"limit-sample: source={label} samples={opts['samples']} "
            f"mean={pmf.mean:.6g} tail={pmf.tail_mass:.3g}{_dest(cmd)}")


@_runner("limit-pmf")
def _run_limit_pmf(cmd):
    opts = cmd.options
    label, limit = _limit_source(opts)
    if cmd.dry_run:
        _dry_checks(cmd)
        return f"dry-run ok: limit-pmf {label} at eps={opts['eps']:g}"
    pmf = limit_pmf(limit, opts["eps"])
    _emit_pmf(cmd, pmf)
    return (f"limit-pmf: source={label} eps={opts['eps']:g} "
            f"support={len(pmf.probs)} mean={pmf.mean:.6g} "
            f"tail={pmf.tail_mass:.3g}{_dest(cmd)}")


@_runner("ito")
def _run_ito(cmd):
    opts = cmd.options
    obj = _load_json_file(opts["integrand"], "integrand")
    try:
        bp = np.asarray(obj["breakpoints"], dtype=float)
        vals = np.asarray(obj["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"integrand {opts['integrand']} needs numeric "
                         f"'breakpoints' and 'values': {exc}") from None
    univariate = opts["univariate"]
    f = StepFunction1D(bp, vals) if univariate else PoissonBlockIntegrand(bp, vals)
    if cmd.dry_run:
        _dry_checks(cmd)
        kind = "univariate" if univariate else "bivariate"
        return f"dry-run ok: ito {kind} on {bp.size - 1} blocks"
    if univariate:
        draws = univariate_ito_integral(f, opts["samples"], opts["seed"])
        expected = univariate_expected_value(f)
    else:
        draws = ito_block_integral(f, opts["samples"], opts["seed"])
        expected = ito_expected_value(f)
    mc_mean = float(draws.mean())
    mc_se = float(draws.std(ddof=1) / math.sqrt(draws.size)) if draws.size > 1 else 0.0
    _emit_record(cmd, {"variant": "univariate" if univariate else "bivariate",
                       "samples": int(draws.size), "expected": float(expected),
                       "mc_mean": mc_mean, "mc_se": mc_se})
    return (f"ito: samples={draws.size} mc_mean={mc_mean:.6g} "
            f"expected={expected:.6g} se={mc_se:.3g}{_dest(cmd)}")


@_runner("check-conditions")
def _run_check_conditions(cmd):
    opts = cmd.options
    fam = _family_template(opts["family"], opts["seed"])
    grid = _parse_grid(opts["grid"], "--grid", _as_int)
    label, target = _limit_source(opts)
    rule = parse_rule(opts.get("rule"))
    if cmd.dry_run:
        _dry_checks(cmd, [fam])
        return (f"dry-run ok: check-conditions {fam.kind} over "
                f"{len(grid)} sizes against {label}")
    report = lab.check_conditions(fam, grid, target, opts["K"], opts["M"],
                                  rule=rule, seeds=_seed_ladder(fam, opts["seed"]),
                                  samples=opts["samples"])
    _emit_report(cmd, report)
    return (f"check-conditions: family={fam.kind} cells={len(report.cells)} "
            f"{_verdict_text(report)}{_dest(cmd)}")


@_runner("second-moment")
def _run_second_moment(cmd):
    opts = cmd.options
    fam = _family_template(opts["family"], opts["seed"])
    grid = _parse_grid(opts["grid"], "--grid", _as_int)
    m_grid = _parse_grid(opts["m_grid"], "--m-grid", _as_float)
    rule = parse_rule(opts.get("rule"))
    if cmd.dry_run:
        _dry_checks(cmd, [fam])
        return (f"dry-run ok: second-moment {fam.kind} over "
                f"{len(grid)}x{len(m_grid)} cells")
    report = lab.second_moment_check(fam, grid, m_grid, opts["lam"], rule=rule,
                                     seeds=_seed_ladder(fam, opts["seed"]),
                                     samples=opts["samples"])
    _emit_report(cmd, report)
    return (f"second-moment: family={fam.kind} cells={len(report.cells)} "
            f"{_verdict_text(report)}{_dest(cmd)}")


@_runner("reproduce")
def _run_reproduce(cmd):
    opts = cmd.options
    example = _resolve_example(opts["example"])
    if cmd.dry_run:
        _dry_checks(cmd)
        return f"dry-run ok: reproduce {example}"
    report = lab.reproduce(example, samples=opts["samples"], seed=opts["seed"])
    _emit_report(cmd, report)
    return (f"reproduce: {example} cells={len(report.cells)} "
            f"{_verdict_text(report)}{_dest(cmd)}")


# ---------------------------------------------------------------------------
# entry points


def _slug(exc):
    for klass, name in ((BlockCountExceededError, "block-count-exceeded"),
                        (InstanceTooLargeError, "instance-too-large"),
                        (SimulationOverflowError, "simulation-overflow"),
                        (ParseError, "parse-error")):
        if isinstance(exc, klass):
            return name
    if isinstance(exc, RuntimeLimitError):
        return "runtime-limit"
    if isinstance(exc, ValidationError):
        return "validation-error"
    return "io-error"


def _fail(exc, code, as_json):
    if as_json:
        payload = {"error": _slug(exc), "exit_code": code, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)


def run(argv=None) -> int:
    """Parse, dispatch, print the one line summary. Returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        cmd = parse_command(argv)
        print(_RUNNERS[cmd.subcommand](cmd))
        return 0
    except SystemExit as exc:  # argparse --help
        return exc.code if isinstance(exc.code, int) else 0
    except RuntimeLimitError as exc:
        _fail(exc, 3, json_errors)
        return 3
    except (ValidationError, OSError) as exc:
        _fail(exc, 2, json_errors)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
