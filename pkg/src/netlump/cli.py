"""Command-line entry point: ``netlump {solve,lump,compare,bins,simulate,count}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field

from .binning import BinSearchConfig, build_dendrogram, choose_bins
from .degree import parse_dist_spec
from .errors import ModelParseError, NumericalError, ResourceLimitError, ValidationError
from .meanfield import ame_equation_count, dbmf_unknowns, pa_unknowns
from .model import format_model, load_model
from .solver import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    DEFAULT_SAMPLES,
    make_system,
    parse_init_spec,
    solve,
    total_error,
    trajectory_csv,
)

log = logging.getLogger("netlump")

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_NUMERICAL = 5
EXIT_RESOURCE = 6


def atomic_write(path, text: str):
    """Write via a temporary file in the target directory, then rename. ``-`` means stdout."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunSummary:
    command: str
    model_digest: str
    dist: str
    method: str
    n_unknowns: int
    rtol: float
    atol: float
    t_max: float
    samples: int
    init: str
    n_bins: int | None = None
    partition: list | None = None
    eps_tot: float | None = None
    speedup: float | None = None
    seeds: dict | None = None
    search: list | None = None
    times: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def model_digest(model) -> str:
    return hashlib.sha256(format_model(model).encode("utf-8")).hexdigest()


def _eps_csv(times, eps) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "eps"])
    for t, e in zip(times, eps):
        w.writerow([repr(float(t)), repr(float(e))])
    return buf.getvalue()


# --------------------------------------------------------------------------
# shared setup


class _Setup:
    def __init__(self, args):
        t0 = time.perf_counter()
        self.model = load_model(args.model)
        self.dist_spec = args.dist
        self.d = parse_dist_spec(args.dist)
        self.init_text = args.init
        self.init = parse_init_spec(args.init, self.model.states)
        self.parse_time = time.perf_counter() - t0

    def summary(self, command, args, method, n_unknowns, **kw):
        s = RunSummary(
            command=command, model_digest=model_digest(self.model), dist=self.dist_spec,
            method=method, n_unknowns=int(n_unknowns), rtol=args.rtol, atol=args.atol,
            t_max=args.tmax, samples=args.samples, init=self.init_text, **kw,
        )
        s.times["parse"] = self.parse_time
        if self.init.seed is not None:
            s.seeds = {"init": self.init.seed}
        return s


def _solve_full(setup, method, args):
    system = make_system(setup.model, setup.d, method)
    y0 = system.initial(setup.init)
    traj = solve(system, y0, args.tmax, rtol=args.rtol, atol=args.atol, samples=args.samples)
    return system, traj


def _select_partition(setup, args, summary_kw):
    t0 = time.perf_counter()
    dendro = build_dendrogram(setup.d, args.alpha)
    summary_kw.setdefault("times", {})["binning"] = time.perf_counter() - t0
    if args.auto:
        cfg = BinSearchConfig(alpha=args.alpha, j_star=args.j_star, j=args.j, delta=args.delta,
                              gamma=args.gamma, t_max=args.tmax, samples=args.samples,
                              rtol=args.rtol, atol=args.atol)
        t0 = time.perf_counter()
        n, res = choose_bins(setup.model, setup.d, args.method, dendro, cfg, setup.init)
        summary_kw["times"]["search"] = time.perf_counter() - t0
        summary_kw["search"] = [asdict(s) for s in res.steps]
    else:
        n = args.bins
    return dendro.partition(n)


def _solve_lumped(setup, args, partition):
    system = make_system(setup.model, setup.d, args.method, partition)
    y0 = system.initial(setup.init)
    traj = solve(system, y0, args.tmax, rtol=args.rtol, atol=args.atol, samples=args.samples)
    return system, traj


def _finish(summary, times, args, text):
    summary.times.update(times)
    atomic_write(args.out, text)
    if args.summary:
        atomic_write(args.summary, summary.to_json())
    if args.partition_out and summary.partition is not None:
        atomic_write(args.partition_out, json.dumps(summary.partition) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_solve(args):
    setup = _Setup(args)
    system, traj = _solve_full(setup, args.method, args)
    summary = setup.summary("solve", args, args.method, system.n_unknowns)
    args.partition_out = None
    _finish(summary, {"solve": traj.solve_time}, args, trajectory_csv(traj))
    return EXIT_OK


def _bins_given(args):
    if args.auto == (args.bins is not None):
        raise ValidationError("give exactly one of --bins N or --auto")


def cmd_lump(args):
    _bins_given(args)
    setup = _Setup(args)
    kw: dict = {}
    part = _select_partition(setup, args, kw)
    system, traj = _solve_lumped(setup, args, part)
    summary = setup.summary("lump", args, args.method, system.n_unknowns, n_bins=len(part),
                            partition=[list(b) for b in part.bins], search=kw.get("search"))
    summary.times.update(kw["times"])
    _finish(summary, {"solve": traj.solve_time}, args, trajectory_csv(traj))
    return EXIT_OK


def cmd_compare(args):
    _bins_given(args)
    setup = _Setup(args)
    kw: dict = {}
    part = _select_partition(setup, args, kw)
    lsys, lumped = _solve_lumped(setup, args, part)
    _, full = _solve_full(setup, args.method, args)
    eps, eps_tot = total_error(full, lumped)
    summary = setup.summary(
        "compare", args, args.method, lsys.n_unknowns, n_bins=len(part),
        partition=[list(b) for b in part.bins], search=kw.get("search"), eps_tot=eps_tot,
        speedup=full.solve_time / lumped.solve_time if lumped.solve_time > 0 else None,
    )
    summary.times.update(kw["times"])
    times = {"solve_full": full.solve_time, "solve_lumped": lumped.solve_time}
    if args.traj_out:
        atomic_write(args.traj_out, trajectory_csv(lumped))
    _finish(summary, times, args, _eps_csv(full.times, eps))
    return EXIT_OK


def cmd_bins(args):
    d = parse_dist_spec(args.dist)
    dendro = build_dendrogram(d, args.alpha)
    out = {"k_min": d.k_min, "k_max": d.k_max, "alpha": args.alpha}
    if args.auto:
        if not (args.model and args.init and args.method and args.tmax):
            raise ValidationError("--auto needs --model, --method, --init and --tmax")
        model = load_model(args.model)
        init = parse_init_spec(args.init, model.states)
        cfg = BinSearchConfig(alpha=args.alpha, j_star=args.j_star, j=args.j, delta=args.delta,
                              gamma=args.gamma, t_max=args.tmax, samples=args.samples,
                              rtol=args.rtol, atol=args.atol)
        n, res = choose_bins(model, d, args.method, dendro, cfg, init)
        out.update(n=n, capped=res.capped, search=[asdict(s) for s in res.steps])
    elif args.bins is not None:
        n = args.bins
        out["n"] = n
    else:
        out["merges"] = [
            {"n": dendro.size - i - 1, "removed_start": int(r), "distance": float(dv)}
            for i, (r, dv) in enumerate(zip(dendro.removed, dendro.distances))
        ]
        atomic_write(args.out, json.dumps(out, indent=2) + "\n")
        return EXIT_OK
    part = dendro.partition(n)
    out["partition"] = [list(b) for b in part.bins]
    atomic_write(args.out, json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def cmd_simulate(args):
    from .sim import SimConfig, simulate

    setup = _Setup(args)
    cfg = SimConfig(n_nodes=args.nodes, runs=args.runs, seed=args.seed, t_max=args.tmax, samples=args.samples)
    t0 = time.perf_counter()
    traj, se, graph = simulate(setup.model, setup.d, cfg, setup.init)
    elapsed = time.perf_counter() - t0
    summary = setup.summary("simulate", args, "sim", graph.n_nodes)
    summary.seeds = dict(summary.seeds or {}, sim=args.seed)
    args.partition_out = None
    _finish(summary, {"simulate": elapsed}, args, trajectory_csv(traj, se))
    return EXIT_OK


def cmd_count(args):
    if args.model:
        n_states = load_model(args.model).n_states
    elif args.states:
        n_states = args.states
    else:
        raise ValidationError("give --states N or --model FILE")
    if n_states < 1 or args.kmax < 1:
        raise ValidationError("state count and k_max must be positive")
    k = args.kmax
    rows = {
        "dbmf": dbmf_unknowns(n_states, k),
        "pa": pa_unknowns(n_states, k),
        "ame": ame_equation_count(k, n_states),
    }
    atomic_write(args.out, json.dumps({"states": n_states, "k_max": k, **rows}) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _positive_float(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _add_solver_flags(p, need_tmax=True):
    p.add_argument("--tmax", type=_positive_float, required=need_tmax, help="integration horizon")
    p.add_argument("--rtol", type=_positive_float, default=DEFAULT_RTOL)
    p.add_argument("--atol", type=_positive_float, default=DEFAULT_ATOL)
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="uniform output samples")


def _add_io_flags(p):
    p.add_argument("--out", default="-", help="CSV output path (default stdout)")
    p.add_argument("--summary", help="write a JSON run summary here")


def _add_search_flags(p):
    cfg = BinSearchConfig()
    p.add_argument("--alpha", type=float, default=cfg.alpha, help="homogeneity weight of the bin distance")
    p.add_argument("--j-star", dest="j_star", type=int, default=cfg.j_star)
    p.add_argument("--j", type=int, default=cfg.j)
    p.add_argument("--delta", type=float, default=cfg.delta)
    p.add_argument("--gamma", type=float, default=cfg.gamma)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netlump", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True, help="model description file")
        p.add_argument("--dist", required=True, help="degree distribution spec, e.g. powerlaw:alpha=2.4,kmax=1000")
        p.add_argument("--init", required=True, help="fractions:S=0.99,I=0.01 or random:seed=N")
        _add_solver_flags(p)
        _add_io_flags(p)
        return p

    p = common("solve", "integrate a full system")
    p.add_argument("--method", required=True, choices=["mf", "dbmf", "pa", "ame"])
    p.set_defaults(func=cmd_solve)

    for name, func, help_ in (("lump", cmd_lump, "integrate a degree-lumped system"),
                              ("compare", cmd_compare, "full vs lumped error and timing")):
        p = common(name, help_)
        p.add_argument("--method", required=True, choices=["dbmf", "pa"])
        p.add_argument("--bins", type=int)
        p.add_argument("--auto", action="store_true", help="choose the bin count automatically")
        p.add_argument("--partition-out", dest="partition_out", help="write the partition JSON here")
        _add_search_flags(p)
        if name == "compare":
            p.add_argument("--traj-out", dest="traj_out", help="also write the lumped trajectory CSV")
        p.set_defaults(func=func)

    p = sub.add_parser("bins", help="dendrogram and partitions")
    p.add_argument("--dist", required=True)
    p.add_argument("--bins", type=int)
    p.add_argument("--auto", action="store_true")
    p.add_argument("--model")
    p.add_argument("--method", choices=["dbmf", "pa"])
    p.add_argument("--init")
    _add_solver_flags(p, need_tmax=False)
    _add_search_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bins)

    p = common("simulate", "stochastic simulation on a configuration-model graph")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("count", help="unknown counts of the full systems")
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--states", type=int)
    p.add_argument("--model")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_count)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="netlump: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ModelParseError as e:
        print(f"netlump: parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, OSError) as e:
        print(f"netlump: invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as e:
        print(f"netlump: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ResourceLimitError as e:
        print(f"netlump: resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
