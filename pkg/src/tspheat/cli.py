"""Command-line harness: ``tspheat generate | solve | bench``.

``solve`` and ``bench`` run the full pipeline (heat map, then search) per
instance and report one CSV row each::

    id,n,provider,length,reference,gap_pct,hm_ms,mcts_ms,restarts,actions

The reference is the brute-force optimum for n <= 12, otherwise a tour
given with ``--reference`` (a tour file, or a directory of ``<id>.tour``)
or the nearest-neighbour tour. With ``--rounds`` the search budget is a
fixed number of rounds and every column except ``hm_ms``/``mcts_ms`` is
reproducible.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .estimators import make_provider
from .heatmap import DEFAULT_EPSILON, DEFAULT_KAPPA, load_heatmap, prune_unpromising
from .instance import (MAX_BRUTE_FORCE_N, Instance, InstanceFormatError, brute_force_optimum,
                       generate_instance, greedy_nearest_neighbor, read_instance, read_tour,
                       tour_length, validate_tour, write_instance, write_tour)
from .mcts import Params, solve
from .sampling import build_global_heatmap, default_m, dump_trace, merge_from_dir

log = logging.getLogger("tspheat")

OUT_ENV = "TSPHEAT_OUT"
CSV_HEADER = ("id", "n", "provider", "length", "reference", "gap_pct", "hm_ms", "mcts_ms",
              "restarts", "actions")
WALL_COLUMNS = ("hm_ms", "mcts_ms")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    provider: str = "surrogate"
    m: int | None = None
    omega: int = 5
    kappa: int = DEFAULT_KAPPA
    epsilon: float = DEFAULT_EPSILON
    alpha: float = 1.0
    beta: float = 10.0
    h_factor: float = 10.0
    t_factor: float = 10.0
    k_max: int = 10
    rounds: int | None = None
    reference: str | None = None
    dump_submaps: str | None = None
    merge_from: str | None = None
    out: str | None = None

    def params(self) -> Params:
        return Params(alpha=self.alpha, beta=self.beta, h_factor=self.h_factor,
                      t_factor=self.t_factor, k_max=self.k_max, epsilon=self.epsilon,
                      max_rounds=self.rounds)

    def validate(self) -> None:
        try:
            self.params()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if self.omega < 1:
            raise UsageError("--omega must be >= 1")
        if self.kappa < 1:
            raise UsageError("--kappa must be >= 1")
        if self.m is not None and self.m < 2:
            raise UsageError("--m must be >= 2")
        kind = self.provider.split(":", 1)[0]
        if kind not in ("surrogate", "uniform", "file") or (kind == "file" and ":" not in self.provider):
            raise UsageError(f"--provider must be surrogate, uniform or file:<path>, got {self.provider!r}")


@dataclass
class BenchRow:
    id: str
    n: int
    provider: str
    length: float
    reference: float
    gap_pct: float
    hm_ms: float
    mcts_ms: float
    restarts: int
    actions: int

    def cells(self) -> list[str]:
        return [self.id, str(self.n), self.provider, _num(self.length), _num(self.reference),
                "nan" if math.isnan(self.gap_pct) else f"{round(self.gap_pct, 4) + 0.0:.4f}",
                f"{self.hm_ms:.1f}", f"{self.mcts_ms:.1f}", str(self.restarts), str(self.actions)]


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.9f}"


def gap_pct(length: float, reference: float) -> float:
    return (length - reference) / reference * 100.0


def _lookup(path: str, ident: str, suffix: str) -> Path:
    p = Path(path)
    return p / f"{ident}{suffix}" if p.is_dir() else p


def _reference_length(inst: Instance, ident: str, cfg: RunConfig) -> float:
    if cfg.reference is not None:
        order, _ = read_tour(_lookup(cfg.reference, ident, ".tour"))
        validate_tour(order, inst.n)
        return tour_length(inst, order)
    if inst.n <= MAX_BRUTE_FORCE_N:
        return brute_force_optimum(inst)[1]
    return tour_length(inst, greedy_nearest_neighbor(inst))


def _heatmap(inst: Instance, ident: str, cfg: RunConfig, rng: np.random.Generator):
    if cfg.merge_from is not None:
        return merge_from_dir(inst, _lookup(cfg.merge_from, ident, ""), cfg.epsilon)
    if cfg.provider.startswith("file:"):
        path = _lookup(cfg.provider[5:], ident, ".heat")
        if not path.is_file():
            raise FileNotFoundError(f"heat-map file {path} not found")
        return prune_unpromising(load_heatmap(path, inst.n), inst.coords, cfg.epsilon)
    m = default_m(inst.n) if cfg.m is None else min(cfg.m, inst.n)
    trace = [] if cfg.dump_submaps is not None else None
    hm = build_global_heatmap(inst, make_provider(cfg.provider, cfg.kappa), m=m, omega=cfg.omega,
                              random_state=rng, epsilon=cfg.epsilon, trace=trace)
    if trace is not None:
        dump_trace(trace, inst, Path(cfg.dump_submaps) / ident, m, cfg.omega)
    return hm


def run_one(inst: Instance, ident: str, cfg: RunConfig, seed: int) -> tuple[BenchRow, list[int]]:
    """Heat map, search and reference for one instance."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    hm = _heatmap(inst, ident, cfg, rng)
    t1 = time.perf_counter()
    result = solve(inst, hm, cfg.params(), random_state=rng)
    t2 = time.perf_counter()
    validate_tour(result.tour, inst.n)
    reference = _reference_length(inst, ident, cfg)
    length = inst.to_original_units(result.length)
    reference = inst.to_original_units(reference)
    row = BenchRow(ident, inst.n, cfg.provider, length, reference, gap_pct(length, reference),
                   (t1 - t0) * 1000.0, (t2 - t1) * 1000.0, result.stats["restarts"],
                   result.stats["actions"])
    return row, result.tour


def _job(args):
    inst, ident, cfg, seed = args
    try:
        row, tour = run_one(inst, ident, cfg, seed)
    except Exception as exc:  # recorded as a failed row; the run continues
        return BenchRow(ident, inst.n, cfg.provider, math.nan, math.nan, math.nan, 0.0, 0.0, 0, 0), None, repr(exc)
    return row, tour, None


def instance_seeds(seed: int, count: int) -> list[int]:
    """Independent per-instance seeds derived from one master seed."""
    return [int(s.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
            for s in np.random.SeedSequence(seed).spawn(count)]


def _collect_instances(ns: argparse.Namespace) -> list[tuple[Instance, str]]:
    if ns.paths:
        out = []
        for p in ns.paths:
            try:
                out.append((read_instance(p), Path(p).stem))
            except FileNotFoundError:
                raise UsageError(f"instance file {p} not found") from None
        return out
    if ns.n is None:
        raise UsageError("give instance files or --n (with --count/--seed) to generate them")
    if ns.n < 3:
        raise UsageError(f"--n must be >= 3, got {ns.n}")
    return [(generate_instance(ns.n, random_state=ns.seed + i), f"n{ns.n}_s{ns.seed + i}")
            for i in range(ns.count)]


def _out_dir(ns: argparse.Namespace) -> Path | None:
    out = ns.out or os.environ.get(OUT_ENV)
    return Path(out) if out else None


def write_csv(rows: list[BenchRow], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.cells())


def summarize(rows: list[BenchRow], wall: float) -> dict:
    ok = [r for r in rows if not math.isnan(r.length)]
    return {
        "instances": len(rows),
        "failed": len(rows) - len(ok),
        "mean_length": float(np.mean([r.length for r in ok])) if ok else math.nan,
        "mean_gap_pct": float(np.mean([r.gap_pct for r in ok])) if ok else math.nan,
        "total_wall_s": wall,
    }


def _run_all(items, cfg: RunConfig, seed: int, jobs: int):
    seeds = instance_seeds(seed, len(items))
    tasks = [(inst, ident, cfg, s) for (inst, ident), s in zip(items, seeds)]
    if jobs <= 1 or len(tasks) <= 1:
        return [_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_job, tasks))


def cmd_generate(ns: argparse.Namespace) -> int:
    if ns.n is None:
        raise UsageError("generate needs --n")
    if ns.n < 3:
        raise UsageError(f"--n must be >= 3, got {ns.n}")
    if ns.count < 1:
        raise UsageError("--count must be >= 1")
    out = _out_dir(ns) or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    for i in range(ns.count):
        path = out / f"n{ns.n}_s{ns.seed + i}.txt"
        write_instance(generate_instance(ns.n, random_state=ns.seed + i), path)
        print(path)
    return 0


def _config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(**{f.name: getattr(ns, f.name) for f in fields(RunConfig) if hasattr(ns, f.name)})
    cfg.validate()
    return cfg


def cmd_solve(ns: argparse.Namespace) -> int:
    cfg = _config(ns)
    items = _collect_instances(ns)
    out = _out_dir(ns)
    results = _run_all(items, cfg, ns.seed, ns.jobs)
    status = 0
    buf = io.StringIO()
    write_csv([r for r, _, _ in results], buf)
    for (inst, ident), (row, tour, err) in zip(items, results):
        if err is not None:
            log.error("%s: %s", ident, err)
            status = 1
        elif out is not None:
            out.mkdir(parents=True, exist_ok=True)
            write_tour(tour, row.length, out / f"{ident}.tour")
    sys.stdout.write(buf.getvalue())
    return status


def cmd_bench(ns: argparse.Namespace) -> int:
    cfg = _config(ns)
    items = _collect_instances(ns)
    if not items:
        raise UsageError("empty instance list")
    start = time.perf_counter()
    results = _run_all(items, cfg, ns.seed, ns.jobs)
    wall = time.perf_counter() - start
    rows = [r for r, _, _ in results]
    for (_, ident), (_, _, err) in zip(items, results):
        if err is not None:
            log.error("%s: %s", ident, err)
    summary = summarize(rows, wall)
    buf = io.StringIO()
    write_csv(rows, buf)
    out = _out_dir(ns)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(buf.getvalue())
        (out / "summary.txt").write_text("".join(f"{k},{v}\n" for k, v in summary.items()))
        for (_, ident), (row, tour, err) in zip(items, results):
            if err is None:
                write_tour(tour, row.length, out / f"{ident}.tour")
    sys.stdout.write(buf.getvalue())
    sys.stderr.write(f"instances={summary['instances']} failed={summary['failed']} "
                     f"mean_length={summary['mean_length']:.6f} mean_gap_pct={summary['mean_gap_pct']:.4f} "
                     f"total_wall_s={wall:.2f}\n")
    return 0 if summary["failed"] == 0 else 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("paths", nargs="*", help="instance files (native or TSPLIB EUC_2D)")
    p.add_argument("--n", type=int, help="generate instances with this many vertices")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, help="sub-graph size")
    p.add_argument("--omega", type=int, default=5)
    p.add_argument("--kappa", type=int, default=DEFAULT_KAPPA)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--h-factor", dest="h_factor", type=float, default=10.0)
    p.add_argument("--t-factor", dest="t_factor", type=float, default=10.0,
                   help="search time in ms per vertex")
    p.add_argument("--k-max", dest="k_max", type=int, default=10)
    p.add_argument("--provider", default="surrogate", help="surrogate | uniform | file:<path>")
    p.add_argument("--reference", help="reference tour file or directory of <id>.tour")
    p.add_argument("--rounds", type=int, help="deterministic budget: number of search rounds")
    p.add_argument("--dump-submaps", dest="dump_submaps", help="write sub-instances and sub heat maps here")
    p.add_argument("--merge-from", dest="merge_from", help="merge sub heat maps from this directory")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tspheat", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="write random unit-square instances")
    g.add_argument("--n", type=int)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or .)")
    g.set_defaults(func=cmd_generate)
    s = sub.add_parser("solve", help="solve instances, write tours and one CSV row each")
    _add_common(s)
    s.set_defaults(func=cmd_solve)
    b = sub.add_parser("bench", help="solve a set of instances and summarise")
    _add_common(b)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        return ns.func(ns)
    except UsageError as exc:
        parser.error(str(exc))
    except (InstanceFormatError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
