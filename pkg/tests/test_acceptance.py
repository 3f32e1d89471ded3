"""Acceptance criteria, each at its stated tolerance.

Every test records one line in ``conftest.ACCEPTANCE``; the lines are printed
in the terminal summary as ``criterion N: PASS|FAIL  detail``.
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from dpotsim import attack as atk
from dpotsim import defenses as dfn
from dpotsim import theory as th
from dpotsim.cli import main
from dpotsim.config import load_config
from dpotsim.engine import run_experiment, setup_environment
from dpotsim.metrics import rounds_csv_text
from dpotsim.nn import backward, init_model, model_from_arrays, one_hot

from .conftest import ACCEPTANCE
from .oracles import fd_gradients_one_hidden, loop_krum_scores, loop_median

DESK = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"


def record(key, passed, detail):
    ACCEPTANCE[key] = (bool(passed), detail)
    assert passed, detail


def _loop_trimmed_sequential(U, k):
    n, d = U.shape
    out = []
    for j in range(d):
        col = sorted(float(U[i, j]) for i in range(n))[k:n - k]
        acc = 0.0
        for v in col:
            acc += v
        out.append(acc / len(col))
    return np.array(out)


# 1 ---------------------------------------------------------------------------

def test_criterion_1_gradients_match_finite_differences():
    t0 = time.perf_counter()
    worst, checked, kinks = 0.0, 0, 0
    for s in range(100):
        r = np.random.default_rng([2024, s])
        model = init_model("mlp-256-64-10", s)
        x = r.uniform(size=(3, 256))
        t = one_hot(r.integers(0, 10, 3), 10)
        kind = ("cross_entropy", "mse_on_output")[s % 2]
        _, g = backward(model, x, t, kind)
        (W1, b1), (W2, b2) = [(l.weight, l.bias) for l in model.layers]
        fd, ok = fd_gradients_one_hidden(W1, b1, W2, b2, x, t, kind, h=1e-5)
        analytic = {"W1": g.param_grads[0][0], "b1": g.param_grads[0][1],
                    "W2": g.param_grads[1][0], "b2": g.param_grads[1][1], "x": g.input_grads}
        for k, a in analytic.items():
            # relative error with a floor at the central-difference noise scale
            err = np.abs(a - fd[k]) / np.maximum(np.maximum(np.abs(a), np.abs(fd[k])), 1e-6)
            worst = max(worst, float(err[ok[k]].max()))
            checked += int(ok[k].sum())
            kinks += int((~ok[k]).sum())
    elapsed = time.perf_counter() - t0
    record("1 gradients", worst <= 1e-4 and elapsed < 120,
           f"worst rel err {worst:.2e} over {checked} entries ({kinks} at ReLU kinks skipped), {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_criterion_2_aggregation_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = []
    krum_worst = 0.0
    for trial in range(50):
        n, d = int(rng.integers(3, 11)), int(rng.integers(1, 21))
        U = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
        if not np.array_equal(dfn.agg_median(U).global_update, loop_median(U)):
            mismatches.append((trial, "median"))
        k = int(np.floor(0.4 * n + 1e-9))
        if not np.array_equal(dfn.agg_trimmed_mean(U, 0.4).global_update, _loop_trimmed_sequential(U, k)):
            mismatches.append((trial, "trimmed-mean"))
        f = 1 if n >= 4 else 0
        got, ref = dfn.krum_scores(U, f), loop_krum_scores(U, f)
        krum_worst = max(krum_worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
        sel = dfn.agg_multi_krum(U, f, m=max(1, n - f - 1)).weights > 0
        ref_sel = np.zeros(n, dtype=bool)
        ref_sel[sorted(range(n), key=lambda i: (ref[i], i))[:max(1, n - f - 1)]] = True
        if not np.array_equal(sel, ref_sel):
            mismatches.append((trial, "multi-krum selection"))
    elapsed = time.perf_counter() - t0
    # krum distances are sums of squares; numpy's pairwise summation may differ from the
    # sequential oracle in the last bits, so scores are held to 1e-12 relative
    record("2 aggregation oracles", not mismatches and krum_worst <= 1e-12 and elapsed < 30,
           f"median/trimmed exact, krum score rel err {krum_worst:.1e}, selections exact; "
           f"mismatches={mismatches} {elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------

def test_criterion_3_rfa():
    rng = np.random.default_rng(11)
    worst_med = 0.0
    for _ in range(50):
        vals = rng.normal(size=2 * int(rng.integers(1, 8)) + 1) * rng.uniform(0.1, 50)
        z = dfn.agg_rfa(vals[:, None]).global_update[0]
        worst_med = max(worst_med, abs(z - float(np.median(vals))))
    increases = 0
    for _ in range(50):
        U = rng.normal(size=(int(rng.integers(2, 11)), int(rng.integers(1, 21))))
        U[0] *= rng.uniform(1, 100)  # one far point keeps the median off the mean
        trace = dfn.agg_rfa(U).info["objective"]
        increases += sum(b > a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))
    record("3 rfa", worst_med <= 1e-3 and increases == 0,
           f"1-D |gm - median| max {worst_med:.1e}; objective increases {increases} over 50 instances")


# 4 ---------------------------------------------------------------------------

def test_criterion_4_embedding_algebra():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(5, 6, 6))
    v = rng.uniform(size=36)
    empty = atk.Trigger(np.array([], dtype=int), np.array([]), 0)
    full = atk.Trigger(np.arange(36), v, 0)
    part = atk.Trigger(rng.choice(36, 9, replace=False), rng.uniform(size=9), 0)
    once = atk.apply_trigger(x, part)
    hand = atk.apply_trigger(np.array([0.1, 0.2, 0.3]), atk.Trigger(np.array([1]), np.array([0.9]), 0))
    checks = {
        "identity": np.array_equal(atk.apply_trigger(x, empty), x),
        "absorption": np.array_equal(atk.apply_trigger(x, full).reshape(5, 36), np.tile(v, (5, 1))),
        "idempotence": np.array_equal(atk.apply_trigger(once, part), once),
        "hand": hand.tolist() == [0.1, 0.9, 0.3],
        "linear-model embed hand": th.embed(np.array([0.1, 0.2, 0.3]),
                                            th.DiagTrigger([0, 1, 0], [0, 0.9, 0])).tolist() == [0.1, 0.9, 0.3],
    }
    record("4 embedding", all(checks.values()), ", ".join(f"{k}={'ok' if c else 'BAD'}" for k, c in checks.items()))


# 5 ---------------------------------------------------------------------------

def test_criterion_5_theory_suite():
    t0 = time.perf_counter()
    rep = th.run_theory_checks(200, seed=0, n=8, m=3, alpha=0.5)
    elapsed = time.perf_counter() - t0
    p = rep.passes
    ok = (p["P1-mechanism"] == 200 and p["P2"] == 200 and p["P3"] == 200
          and p["P1-effect"] >= 190 and elapsed < 300)
    record("5 theory", ok, " ".join(f"{k}={v}/200" for k, v in p.items()) + f" (P1-effect needs >=190) {elapsed:.1f}s")


# 6 ---------------------------------------------------------------------------

def test_criterion_6_value_optimisation_trace(monkeypatch):
    monkeypatch.delenv("DPOT_SEED", raising=False)
    cfg = load_config(DESK)
    env = setup_environment(cfg)
    model = init_model(cfg.arch, cfg.model_seed)
    D = atk.build_trigger_training_set([env.clients[i] for i in env.malicious_ids], cfg.target_label)
    _, trace = atk.optimize_trigger(model, D, cfg.target_label, cfg.tri_size, cfg.n_iter, cfg.gamma0)
    desk_ok = len(trace.losses) == 10 and trace.losses[-1] <= trace.losses[0]

    one = model_from_arrays("linreg-1-1", [[[1.0]]], [[0.5]], ["identity"])
    Dc = atk.Dataset(np.full((1, 1, 1), 0.2), np.zeros(1, dtype=int), 1)
    _, tc = atk.optimize_values([0], one, Dc, 0, n_iter=3, gamma0=5.0, return_trace=True)
    halvings = sum(b < a for a, b in zip(tc.gammas, tc.gammas[1:]))
    record("6 value descent", desk_ok and halvings == 1 and tc.gammas[-1] == 2.5,
           f"desk trace {trace.losses[0]:.5f} -> {trace.losses[-1]:.5f}; constructed case gammas {tc.gammas}")


# 7, 8, 9 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_runs():
    import os
    saved = os.environ.pop("DPOT_SEED", None)
    try:
        base = load_config(DESK)
        runs, t0 = {}, time.perf_counter()
        for defense, attack in [("fedavg", "none"), ("fedavg", "dpot"),
                                ("median", "none"), ("median", "dpot"), ("median", "ft"),
                                ("trimmed-mean", "none"), ("trimmed-mean", "dpot"), ("trimmed-mean", "ft")]:
            runs[defense, attack] = run_experiment(dataclasses.replace(base, defense=defense, attack=attack))
        runs["elapsed"] = time.perf_counter() - t0
    finally:
        if saved is not None:
            os.environ["DPOT_SEED"] = saved
    return runs


def test_criterion_7_desk_end_to_end(desk_runs):
    fa = {k: v.summary.final_asr for k, v in desk_runs.items() if k != "elapsed"}
    ma = {k: v.summary.final_ma for k, v in desk_runs.items() if k != "elapsed"}
    a = all(fa[d, "dpot"] > fa[d, "ft"] for d in ("median", "trimmed-mean"))
    b = fa["fedavg", "dpot"] > 0.5
    c = all(abs(ma[d, "dpot"] - ma[d, "none"]) <= 0.02 for d in ("fedavg", "median", "trimmed-mean"))
    detail = (f"(a) dpot/ft median {fa['median', 'dpot']:.3f}/{fa['median', 'ft']:.3f} "
              f"trimmed {fa['trimmed-mean', 'dpot']:.3f}/{fa['trimmed-mean', 'ft']:.3f}; "
              f"(b) fedavg dpot {fa['fedavg', 'dpot']:.3f}; (c) dMA "
              + " ".join(f"{d}={ma[d, 'dpot'] - ma[d, 'none']:+.3f}" for d in ("fedavg", "median", "trimmed-mean"))
              + f"; {desk_runs['elapsed']:.0f}s")
    record("7 desk end-to-end", a and b and c and desk_runs["elapsed"] < 900, detail)


def test_criterion_8_determinism(desk_runs, tmp_path, monkeypatch):
    monkeypatch.delenv("DPOT_SEED", raising=False)
    outs = []
    for name in ("first", "second"):
        assert main(["run", "--config", str(DESK), "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name / "rounds.csv").read_bytes())
    in_process = rounds_csv_text(desk_runs["median", "dpot"].records).encode()
    record("8 determinism", outs[0] == outs[1] == in_process,
           f"two CLI runs and the in-process run give identical rounds.csv ({len(outs[0])} bytes)")


def test_criterion_9_concealment(desk_runs):
    def last10(log):
        return float(np.mean([r.malicious_cosine for r in log.records[-10:]]))

    dpot, ft = last10(desk_runs["median", "dpot"]), last10(desk_runs["median", "ft"])
    record("9 concealment", dpot > ft, f"median, last 10 rounds: cos(malicious, benign mean) dpot={dpot:.3f} ft={ft:.3f}")
