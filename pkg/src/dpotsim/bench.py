"""Oracle battery for one aggregation rule (``defense-bench``).

Each check compares a rule against a deliberately naive re-implementation
(python loops, full sorts) or a constructed instance with a known answer.
"""

from __future__ import annotations

import numpy as np

from . import defenses as dfn
from .errors import ConfigError


def _loop_mean(U):
    n, d = len(U), len(U[0])
    return np.array([sum(U[i][j] for i in range(n)) / n for j in range(d)])


def _loop_trimmed(U, k):
    n, d = len(U), len(U[0])
    out = []
    for j in range(d):
        col = sorted(U[i][j] for i in range(n))[k:n - k]
        out.append(sum(col) / len(col))
    return np.array(out)


def _loop_median(U):
    n, d = len(U), len(U[0])
    out = []
    for j in range(d):
        col = sorted(U[i][j] for i in range(n))
        out.append(col[n // 2] if n % 2 else 0.5 * (col[n // 2 - 1] + col[n // 2]))
    return np.array(out)


def _loop_krum(U, f):
    n = len(U)
    scores = []
    for i in range(n):
        dists = sorted(float(np.sum((U[i] - U[j]) ** 2)) for j in range(n) if j != i)
        scores.append(sum(dists[:n - f - 2]))
    return np.array(scores)


def _permutation_ok(name, U, rng, **kw):
    perm = rng.permutation(U.shape[0])
    a = dfn.aggregate(name, U, dfn.DefenseState(), kw)
    b = dfn.aggregate(name, U[perm], dfn.DefenseState(), kw)
    return np.allclose(a.global_update, b.global_update, atol=1e-10) and np.allclose(
        a.weights[perm], b.weights, atol=1e-10)


def run_bench(name: str, seed: int = 0, trials: int = 20) -> list[tuple[str, bool]]:
    if name not in dfn.DEFENSES:
        raise ConfigError(f"unknown defense {name!r}; valid: {', '.join(dfn.DEFENSES)}")
    rng = np.random.default_rng(seed)
    mats = [rng.normal(size=(int(rng.integers(5, 11)), int(rng.integers(2, 21)))) for _ in range(trials)]
    checks = []

    if name == "fedavg":
        checks.append(("mean matches loop sum / n",
                       all(np.allclose(dfn.agg_fedavg(U).global_update, _loop_mean(U), rtol=1e-12, atol=1e-14)
                           for U in mats)))
    elif name in ("median", "flcert"):
        checks.append(("median matches full sort",
                       all(np.array_equal(dfn.agg_median(U).global_update, _loop_median(U)) for U in mats)))
        checks.append(("median within column range",
                       all(np.all((dfn.agg_median(U).global_update >= U.min(0)) &
                                  (dfn.agg_median(U).global_update <= U.max(0))) for U in mats)))
        if name == "flcert":
            g1 = dfn.flcert_groups(20, 5, seed)
            g2 = dfn.flcert_groups(20, 5, seed)
            checks.append(("group split is seed-deterministic",
                           all(np.array_equal(a, b) for a, b in zip(g1, g2))))
            checks.append(("vote tie goes to lowest label", dfn.majority_vote([2, 2, 7, 7, 1]) == 2))
    elif name == "trimmed-mean":
        ok = True
        for U in mats:
            k = int(np.floor(0.4 * U.shape[0] + 1e-9))
            ok &= np.allclose(dfn.agg_trimmed_mean(U, 0.4).global_update, _loop_trimmed(U, k), rtol=1e-12,
                              atol=1e-14)
        checks.append(("trimmed mean matches sort-then-slice", bool(ok)))
        checks.append(("{1..5} trimmed 40% each side -> 3",
                       float(dfn.agg_trimmed_mean(np.arange(1.0, 6.0)[:, None], 0.4).global_update[0]) == 3.0))
    elif name == "multi-krum":
        ok = True
        for U in mats:
            f = 1
            ok &= np.allclose(dfn.krum_scores(U, f), _loop_krum(U, f), rtol=1e-12, atol=1e-14)
        checks.append(("scores match pairwise loop", bool(ok)))
        U = mats[0]
        checks.append(("f=0, m=n equals fedavg",
                       np.allclose(dfn.agg_multi_krum(U, 0, U.shape[0]).global_update, U.mean(0))))
    elif name == "robustlr":
        U = np.array([[1.0], [2.0], [-1.0]])
        checks.append(("split vote flips sign", bool(dfn.agg_robustlr(U, 2).global_update[0] < 0)))
        ok = True
        for U in mats:
            a = dfn.agg_robustlr(U).global_update
            b = dfn.agg_robustlr(-U).global_update
            ok &= np.allclose(a, -b)
        checks.append(("negating updates negates result", bool(ok)))
    elif name == "rfa":
        ok_med, ok_mono = True, True
        for _ in range(trials):
            vals = rng.normal(size=2 * int(rng.integers(1, 5)) + 1)
            z, _, trace = dfn.geometric_median(vals[:, None], max_iter=1000, eps=1e-10)
            ok_med &= abs(z[0] - np.median(vals)) <= 1e-3
        for U in mats:
            _, _, trace = dfn.geometric_median(U)
            ok_mono &= all(b <= a + 1e-12 * max(1.0, a) for a, b in zip(trace, trace[1:]))
        checks.append(("1-D geometric median equals median", bool(ok_med)))
        checks.append(("Weiszfeld objective non-increasing", bool(ok_mono)))
    elif name == "flair":
        st = dfn.DefenseState(flair_prev_direction=np.ones(6))
        U = np.abs(rng.normal(size=(5, 6)))
        U[3] = -U[3]
        checks.append(("sign-inverted client excluded", dfn.agg_flair(U, 1, st).excluded == [3]))
        checks.append(("n_malicious=0 equals fedavg",
                       np.allclose(dfn.agg_flair(mats[0], 0, dfn.DefenseState()).global_update, mats[0].mean(0))))
    elif name == "flame":
        honest = 1.0 + 0.01 * rng.normal(size=(9, 12))
        U = np.vstack([honest, 100.0 * honest[0]])
        g = dfn.agg_flame(U).global_update
        checks.append(("x100 outlier bounded by 1.5 x honest median norm",
                       bool(np.linalg.norm(g) <= 1.5 * np.median(np.linalg.norm(honest, axis=1)))))
        same = np.tile(rng.normal(size=7), (4, 1))
        checks.append(("identical updates pass through", np.allclose(dfn.agg_flame(same).global_update, same[0])))
    elif name == "foolsgold":
        st = dfn.DefenseState()
        for _ in range(5):
            U = rng.normal(size=(6, 30))
            U[1] = U[0]
            res = dfn.agg_foolsgold(U, st)
        checks.append(("identical pair weighted below 0.01", bool(res.weights[0] < 0.01 and res.weights[1] < 0.01)))
        eye = np.eye(5, 8)
        checks.append(("orthogonal clients reduce to fedavg",
                       np.allclose(dfn.agg_foolsgold(eye, dfn.DefenseState()).global_update, eye.mean(0), atol=1e-6)))

    checks.append(("permutation equivariant", all(_permutation_ok(name, U, rng) for U in mats[:5])))
    return checks
