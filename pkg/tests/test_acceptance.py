"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import io
import math
import random
import resource
import time
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from tspheat.cli import main
from tspheat.heatmap import SurrogateProvider, UniformProvider, complete_heatmap
from tspheat.instance import (brute_force_optimum, generate_instance, greedy_nearest_neighbor,
                              tour_length)
from tspheat.mcts import (Params, SearchState, _CompiledEngine, apply_action, enumerate_2opt,
                          sample_action, solve)
from tspheat.sampling import (CoverageCounters, build_global_heatmap, convert_subgraph,
                              extract_subgraph)


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def test_c1_oracle_optimality_n9(capsys):
    start = time.perf_counter()
    exact, worst = 0, 0.0
    for seed in range(100):
        inst = generate_instance(9, random_state=seed)
        hm = build_global_heatmap(inst, SurrogateProvider(), m=6, omega=5, random_state=seed)
        # about one second of search per instance on the reference machine
        r = solve(inst, hm, Params(max_rounds=1000), random_state=seed)
        opt = brute_force_optimum(inst)[1]
        exact += abs(r.length - opt) <= 1e-9
        worst = max(worst, (r.length - opt) / opt * 100)
    elapsed = time.perf_counter() - start
    ok = exact >= 95 and worst <= 2.0 and elapsed <= 300
    report(capsys, 1, ok, f"{exact}/100 exact, worst gap {worst:.4f}%, {elapsed:.1f}s")


def test_c2_delta_consistency(capsys):
    worst, count = 0.0, 0
    for n, per in ((20, 3400), (200, 3400), (1000, 3400)):
        inst = generate_instance(n, random_state=n)
        hm = build_global_heatmap(inst, SurrogateProvider(), random_state=n)
        rng = random.Random(n)
        state = SearchState(inst, hm)
        order = list(range(n))
        rng.shuffle(order)
        state.set_tour(order)
        done = 0
        while done < per:
            action = sample_action(state, rng)
            if action is None:
                continue
            new = apply_action(state.tour, action)
            exact = tour_length(inst, new.to_list())
            worst = max(worst, abs(exact - (state.length + action.delta)) / state.length)
            state.tour, state.length = new, exact
            done += 1
        count += done
    ok = count >= 10_000 and worst <= 1e-9
    report(capsys, 2, ok, f"{count} applied actions, max relative error {worst:.3e}")


def test_c3_merge_replay(capsys):
    inst = generate_instance(50, random_state=0)
    trace = []
    counters = CoverageCounters(50)
    eps = 1e-4
    hm = build_global_heatmap(inst, SurrogateProvider(), m=20, omega=5, random_state=0,
                              epsilon=eps, trace=trace, counters=counters)
    sums, seen = {}, {}
    for rec in trace:
        members = rec.sample.members.tolist()
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                key = tuple(sorted((members[a], members[b])))
                seen[key] = seen.get(key, 0) + rec.weight
        for i, j, p in rec.submap.items():
            key = tuple(sorted((members[i], members[j])))
            sums[key] = sums.get(key, 0.0) + p * rec.weight
    replay = {k: s / seen[k] for k, s in sums.items()}
    err = 0.0
    for k, p in replay.items():
        if p >= eps:
            err = max(err, abs(hm.get(*k) - p))
    stray = [k for k in hm.entries if replay.get(k, 0.0) < eps and hm.get(*k) != eps]
    ok = err <= 1e-12 and not stray and counters.vertex.min() >= 5
    report(capsys, 3, ok, f"max |P - replay| {err:.1e} over {len(replay)} edges, "
                          f"{len(stray)} unexplained entries, min O_i {counters.vertex.min()}")


def test_c4_conversion(capsys):
    rng = np.random.default_rng(0)
    bad_range = bad_span = bad_rank = 0
    for t in range(1000):
        n = int(rng.integers(10, 300))
        inst = generate_instance(n, random_state=t)
        m = int(rng.integers(2, min(n, 60) + 1))
        counters = CoverageCounters(n)
        counters.vertex[:] = rng.integers(0, 3, n)
        sample = extract_subgraph(inst, counters, m, rng)
        out = convert_subgraph(inst, sample)
        bad_range += not (out.min() >= 0.0 and out.max() <= 1.0)
        bad_span += not any(out[:, a].min() == 0.0 and out[:, a].max() == 1.0 for a in (0, 1))
        orig = inst.coords[sample.members]
        for i in range(m):
            d_orig = np.hypot(*(orig - orig[i]).T)
            d_new = np.hypot(*(out - out[i]).T)
            ranked = np.argsort(d_orig, kind="stable")
            steps = np.diff(d_new[ranked])
            if np.any(steps < -1e-12 * max(1.0, d_new.max())):
                bad_rank += 1
                break
    ok = bad_range == bad_span == bad_rank == 0
    report(capsys, 4, ok, f"1000 samples: {bad_range} out of range, {bad_span} without a full axis, "
                          f"{bad_rank} with changed neighbour ranking")


def _best_2opt_delta(inst, order):
    n = len(order)
    c = inst.coords[order]
    d = lambda i, j: math.hypot(*(c[i] - c[j]))
    best = 0.0
    for i in range(n - 1):
        for j in range(i + 2, n if i else n - 1):
            delta = d(i, j) + d(i + 1, (j + 1) % n) - d(i, i + 1) - d(j, (j + 1) % n)
            best = min(best, delta)
    return best


@pytest.mark.parametrize("engine", ["python", "compiled"])
def test_c5_two_opt_fixed_point(capsys, engine):
    worst = 0.0
    for seed in range(20):
        inst = generate_instance(50, random_state=seed)
        hm = complete_heatmap(50)
        order = np.random.default_rng(seed).permutation(50).tolist()
        if engine == "python":
            state = SearchState(inst, hm)
            state.set_tour(order)
            enumerate_2opt(state)
            final = state.tour.to_list()
        else:
            eng = _CompiledEngine(inst, hm, Params(), 0)
            eng.order[:] = order
            eng.pos[eng.order] = np.arange(50)
            eng.local_search(lambda: False)
            final = eng.order.tolist()
        worst = min(worst, _best_2opt_delta(inst, final))
    report(capsys, 5, worst >= -1e-9, f"[{engine}] 20 instances, most negative remaining 2-opt delta {worst:.3e}")


def test_c6_ablation(capsys):
    n = 200
    # budget of 10n rounds, the round-count analogue of the 10n ms time budget
    params = Params(max_rounds=10 * n)
    surrogate, uniform = [], []
    for s in range(20):
        inst = generate_instance(n, random_state=1000 + s)
        for provider, out in ((SurrogateProvider(), surrogate), (UniformProvider(), uniform)):
            hm = build_global_heatmap(inst, provider, m=50, omega=5, random_state=s)
            out.append(solve(inst, hm, params, random_state=s).length)
    surrogate, uniform = np.array(surrogate), np.array(uniform)
    wins = int((surrogate < uniform).sum())
    ok = surrogate.mean() < uniform.mean() and wins >= 16
    report(capsys, 6, ok, f"mean surrogate {surrogate.mean():.4f} vs uniform {uniform.mean():.4f}, "
                          f"surrogate shorter on {wins}/20")


@pytest.mark.parametrize("engine", ["python", "compiled"])
def test_c7_bookkeeping(capsys, engine):
    problems = []
    for seed, n in ((0, 30), (1, 120)):
        inst = generate_instance(n, random_state=seed)
        hm = build_global_heatmap(inst, SurrogateProvider(), random_state=seed)
        log = []
        r = solve(inst, hm, Params(max_rounds=40), random_state=seed, log=log, keep_state=True,
                  engine=engine)
        st = r.state
        if st.M != len(log) or st.M != r.stats["actions"]:
            problems.append(f"n={n}: M={st.M} but {len(log)} examined")
        if st.q_total() != sum(a.k for a in log):
            problems.append(f"n={n}: sum Q={st.q_total()} but sum k={sum(a.k for a in log)}")
        for i in range(n):
            if any(st.w[j].get(i) != w for j, w in st.w[i].items()):
                problems.append(f"n={n}: W asymmetric at {i}")
            if any(st.q[j].get(i) != q for j, q in st.q[i].items()):
                problems.append(f"n={n}: Q asymmetric at {i}")
    report(capsys, 7, not problems, f"[{engine}] " + ("; ".join(problems) or "M, sum Q and symmetry exact"))


def test_c8_monotone_and_scale(capsys):
    for seed in range(5):
        inst = generate_instance(300, random_state=seed)
        hm = build_global_heatmap(inst, SurrogateProvider(), random_state=seed)
        hist = solve(inst, hm, Params(max_rounds=200), random_state=seed).stats["best_history"]
        if any(b > a for a, b in zip(hist, hist[1:])):
            report(capsys, 8, False, f"best length increased on seed {seed}")

    inst = generate_instance(10_000, random_state=0)
    t0 = time.perf_counter()
    hm = build_global_heatmap(inst, SurrogateProvider(), random_state=0)
    t1 = time.perf_counter()
    r = solve(inst, hm, Params(time_limit=60.0), random_state=0)
    t2 = time.perf_counter()
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    valid = sorted(r.tour) == list(range(inst.n))
    hist = r.stats["best_history"]
    monotone = all(b <= a for a, b in zip(hist, hist[1:]))
    greedy = tour_length(inst, greedy_nearest_neighbor(inst))
    ok = valid and monotone and peak_mb <= 2048 and r.length <= greedy
    report(capsys, 8, ok, f"n=10000 heat map {t1 - t0:.1f}s + search {t2 - t1:.1f}s, peak RSS {peak_mb:.0f} MB, "
                          f"valid={valid}, monotone={monotone}, length {r.length:.4f} vs greedy {greedy:.4f} "
                          f"(improvement {(greedy - r.length) / greedy * 100:.2f}%)")


def _bench(tmp_path, tag):
    out = tmp_path / tag
    with redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
        status = main(["bench", "--n", "40", "--count", "3", "--seed", "11", "--rounds", "50",
                       "--jobs", "2", "--out", str(out)])
    return status, out


def test_c9_determinism(capsys, tmp_path):
    s1, a = _bench(tmp_path, "a")
    s2, b = _bench(tmp_path, "b")
    strip = lambda p: [",".join(c for k, c in enumerate(line.split(",")) if k not in (6, 7))
                       for line in (p / "bench.csv").read_text().splitlines()]
    same_csv = strip(a) == strip(b)
    same_tours = all((a / t.name).read_bytes() == t.read_bytes() for t in b.glob("*.tour"))
    inst = generate_instance(150, random_state=5)
    hm = build_global_heatmap(inst, SurrogateProvider(), random_state=5)
    runs = [solve(inst, hm, Params(max_rounds=60), random_state=5) for _ in range(2)]
    wall = ("elapsed", "time_to_best")
    same_api = (runs[0].tour == runs[1].tour
                and {k: v for k, v in runs[0].stats.items() if k not in wall}
                == {k: v for k, v in runs[1].stats.items() if k not in wall})
    ok = s1 == s2 == 0 and same_csv and same_tours and same_api
    report(capsys, 9, ok, f"bench csv identical={same_csv}, tours identical={same_tours}, "
                          f"solve identical={same_api}")
