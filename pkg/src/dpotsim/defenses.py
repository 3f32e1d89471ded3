"""Server-side aggregation rules over a matrix of client updates.

Every rule takes an ``(n_clients, d)`` array whose rows are flattened model
deltas and returns an :class:`AggregationResult`. Rules with cross-round
memory (FLAIR, FoolsGold) read and update a :class:`DefenseState`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import predict_labels

DEFENSES = (
    "fedavg", "median", "trimmed-mean", "multi-krum", "robustlr",
    "rfa", "flair", "flcert", "flame", "foolsgold",
)


@dataclass
class AggregationResult:
    global_update: np.ndarray
    weights: np.ndarray
    excluded: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


@dataclass
class DefenseState:
    foolsgold_history: np.ndarray | None = None
    flair_prev_direction: np.ndarray | None = None
    round_index: int = 0


def _matrix(U) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[None, :]
    if U.ndim != 2 or U.shape[0] == 0:
        raise ConfigError("need at least one client update")
    return U


def _ids(client_ids, n):
    return list(range(n)) if client_ids is None else list(client_ids)


def _weighted_mean(U, w):
    total = w.sum()
    if total <= 0:
        return np.zeros(U.shape[1])
    return (w @ U) / total


def agg_fedavg(U, client_ids=None) -> AggregationResult:
    U = _matrix(U)
    n = U.shape[0]
    return AggregationResult(U.mean(axis=0), np.full(n, 1.0 / n))


def agg_median(U, client_ids=None) -> AggregationResult:
    U = _matrix(U)
    n = U.shape[0]
    return AggregationResult(np.median(U, axis=0), np.full(n, 1.0 / n))


def agg_trimmed_mean(U, trim_ratio: float = 0.4, client_ids=None) -> AggregationResult:
    """Per coordinate, drop the ``floor(trim_ratio * n)`` largest and smallest values."""
    U = _matrix(U)
    n = U.shape[0]
    k = int(math.floor(trim_ratio * n + 1e-9))
    if trim_ratio < 0 or n - 2 * k < 1:
        raise ConfigError(f"trim ratio {trim_ratio} leaves no values for {n} clients")
    kept = np.sort(U, axis=0)[k:n - k]
    return AggregationResult(kept.mean(axis=0), np.full(n, 1.0 / n))


def krum_scores(U, f: int) -> np.ndarray:
    """Sum of squared distances from each row to its ``n - f - 2`` nearest other rows."""
    U = _matrix(U)
    n = U.shape[0]
    d2 = np.empty((n, n))
    for i in range(n):
        d2[i] = np.sum((U - U[i]) ** 2, axis=1)
    np.fill_diagonal(d2, np.inf)
    n_near = n - f - 2
    return np.sort(d2, axis=1)[:, :n_near].sum(axis=1)


def agg_multi_krum(U, f: int, m: int | None = None, client_ids=None) -> AggregationResult:
    U = _matrix(U)
    n = U.shape[0]
    m = n - f if m is None else m
    if f < 0 or n < f + 3:
        raise ConfigError(f"multi-krum needs n >= f + 3 (n={n}, f={f})")
    if not 1 <= m <= n - f:
        raise ConfigError(f"multi-krum selection m={m} outside [1, {n - f}]")
    scores = krum_scores(U, f)
    ids = _ids(client_ids, n)
    chosen = np.lexsort((np.asarray(ids), scores))[:m]  # ties go to the lower client id
    w = np.zeros(n)
    w[chosen] = 1.0 / m
    excluded = [ids[i] for i in range(n) if w[i] == 0]
    return AggregationResult(w @ U, w, excluded, {"scores": scores})


def agg_robustlr(U, vote_threshold: int | None = None, server_lr: float = 1.0,
                 client_ids=None) -> AggregationResult:
    """Sign-vote learning rate: ``+lr`` where ``|sum sign| >= threshold``, else ``-lr``."""
    U = _matrix(U)
    n = U.shape[0]
    if vote_threshold is None:
        vote_threshold = math.ceil(n / 2)
    if vote_threshold < 1:
        raise ConfigError("vote_threshold must be >= 1")
    votes = np.sign(U).sum(axis=0)
    lr = np.where(np.abs(votes) >= vote_threshold, server_lr, -server_lr)
    return AggregationResult(lr * U.mean(axis=0), np.full(n, 1.0 / n),
                             info={"flipped": int(np.sum(lr < 0))})


def geometric_median(U, max_iter: int = 100, eps: float = 1e-6, nu: float = 1e-6):
    """Smoothed Weiszfeld iteration from the coordinate-wise mean.

    Returns ``(z, weights, objective_trace)`` where the trace starts with the
    objective at the mean.
    """
    U = _matrix(U)
    z = U.mean(axis=0)
    trace = [float(np.linalg.norm(U - z, axis=1).sum())]
    w = np.ones(U.shape[0])
    for _ in range(max_iter):
        w = 1.0 / np.maximum(nu, np.linalg.norm(U - z, axis=1))
        z_new = (w @ U) / w.sum()
        trace.append(float(np.linalg.norm(U - z_new, axis=1).sum()))
        step = np.linalg.norm(z_new - z)
        z = z_new
        if step <= eps:
            break
    return z, w, trace


def agg_rfa(U, max_iter: int = 100, eps: float = 1e-6, nu: float = 1e-6,
            client_ids=None) -> AggregationResult:
    z, w, trace = geometric_median(U, max_iter, eps, nu)
    return AggregationResult(z, w / w.sum(), info={"objective": trace})


def agg_flair(U, n_malicious: int, state: DefenseState, client_ids=None) -> AggregationResult:
    """Drop the ``n_malicious`` clients whose signs disagree most with last round's direction."""
    U = _matrix(U)
    n, d = U.shape
    if not 0 <= n_malicious < n:
        raise ConfigError(f"n_malicious={n_malicious} must be in [0, {n})")
    prev = state.flair_prev_direction
    if prev is None:
        prev = np.zeros(d)
    flip = np.mean(np.sign(U) != prev[None, :], axis=1)
    ids = _ids(client_ids, n)
    # highest flip score first; equal scores resolved by client id
    order = np.lexsort((np.asarray(ids), -flip))
    w = np.ones(n)
    w[order[:n_malicious]] = 0.0
    g = _weighted_mean(U, w)
    state.flair_prev_direction = np.sign(g)
    state.round_index += 1
    return AggregationResult(g, w / w.sum(), [ids[i] for i in range(n) if w[i] == 0],
                             {"flip_scores": flip})


def flcert_groups(n: int, n_groups: int, group_seed) -> list[np.ndarray]:
    if n < n_groups or n_groups < 1:
        raise ConfigError(f"flcert needs n_clients >= n_groups ({n} < {n_groups})")
    perm = np.random.default_rng(group_seed).permutation(n)
    return [np.sort(g) for g in np.array_split(perm, n_groups)]


def agg_flcert(U, n_groups: int = 5, group_seed=0, client_ids=None) -> list[AggregationResult]:
    """Median update per random client group."""
    U = _matrix(U)
    out = []
    for g in flcert_groups(U.shape[0], n_groups, group_seed):
        res = agg_median(U[g])
        w = np.zeros(U.shape[0])
        w[g] = 1.0 / len(g)
        out.append(AggregationResult(res.global_update, w, info={"members": g}))
    return out


def majority_vote(labels) -> int:
    """Most frequent label; ties go to the lowest label."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels)
    return int(np.argmax(counts))


def flcert_predict(group_models, x) -> np.ndarray:
    """Majority vote of the group models' argmax labels for each row of ``x``."""
    votes = np.stack([predict_labels(m, x) for m in group_models])  # (G, B)
    n_labels = group_models[0].n_outputs
    counts = np.zeros((n_labels, votes.shape[1]), dtype=np.int64)
    for row in votes:
        counts[row, np.arange(votes.shape[1])] += 1
    return np.argmax(counts, axis=0)


def cosine_matrix(X) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    Xn = X / safe[:, None]
    cs = Xn @ Xn.T
    cs[norms == 0, :] = 0.0
    cs[:, norms == 0] = 0.0
    return np.clip(cs, -1.0, 1.0)


def agg_flame(U, state: DefenseState | None = None, noise_sigma: float = 0.0,
              noise_seed=0, client_ids=None) -> AggregationResult:
    """Cosine-distance admission, median-norm clipping, mean (plus optional noise).

    Admission keeps clients whose median cosine distance to the others is at
    most the median of those medians, padded to a strict majority.
    """
    U = _matrix(U)
    n = U.shape[0]
    if n < 3:
        raise ConfigError("flame needs at least 3 clients")
    dist = 1.0 - cosine_matrix(U)
    off = ~np.eye(n, dtype=bool)
    med = np.array([np.median(dist[i, off[i]]) for i in range(n)])
    admitted = med <= np.median(med)
    need = n // 2 + 1
    if admitted.sum() < need:
        for i in np.argsort(med, kind="stable"):
            admitted[i] = True
            if admitted.sum() >= need:
                break
    idx = np.flatnonzero(admitted)
    norms = np.linalg.norm(U[idx], axis=1)
    clip_to = np.median(norms)
    scale = np.where(norms > clip_to, clip_to / np.where(norms > 0, norms, 1.0), 1.0)
    g = (U[idx] * scale[:, None]).mean(axis=0)
    if noise_sigma > 0:
        g = g + np.random.default_rng(noise_seed).normal(0.0, noise_sigma * clip_to, size=g.shape)
    w = np.zeros(n)
    w[idx] = 1.0 / idx.size
    ids = _ids(client_ids, n)
    return AggregationResult(g, w, [ids[i] for i in range(n) if not admitted[i]],
                             {"clip_norm": float(clip_to)})


def foolsgold_weights(history, eps: float = 1e-5, kappa: float = 1.0) -> np.ndarray:
    """FoolsGold client weights from cumulative update histories."""
    n = history.shape[0]
    if n == 1:
        return np.ones(1)
    cs = cosine_matrix(history)
    np.fill_diagonal(cs, -np.inf)
    v = cs.max(axis=1)
    # pardon honest clients that merely resemble a more suspicious one
    for i in range(n):
        for j in range(n):
            if i != j and v[j] > v[i] > 0:
                cs[i, j] *= v[i] / v[j]
    alpha = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    if alpha.max() > 0:
        alpha = alpha / alpha.max()
    alpha = np.clip(alpha, eps, 1.0 - eps)
    alpha = kappa * (np.log(alpha / (1.0 - alpha)) + 0.5)
    return np.clip(alpha, 0.0, 1.0)


def agg_foolsgold(U, state: DefenseState, client_ids=None) -> AggregationResult:
    U = _matrix(U)
    if state.foolsgold_history is None or state.foolsgold_history.shape != U.shape:
        state.foolsgold_history = np.zeros_like(U)
    state.foolsgold_history = state.foolsgold_history + U
    state.round_index += 1
    w = foolsgold_weights(state.foolsgold_history)
    ids = _ids(client_ids, U.shape[0])
    norm_w = w / w.sum() if w.sum() > 0 else w
    return AggregationResult(_weighted_mean(U, w), norm_w, [ids[i] for i in range(len(w)) if w[i] == 0])


def scale_update(u, factor: float) -> np.ndarray:
    return np.asarray(u, dtype=np.float64) * factor


def aggregate(name: str, U, state: DefenseState | None = None, params: dict | None = None,
              client_ids=None, n_malicious: int = 0, round_seed=0) -> AggregationResult:
    """Dispatch to a rule by name with its rule-specific ``params``.

    FLCert's global step is the plain median over all clients; its group
    models are built by the round engine.
    """
    p = dict(params or {})
    state = state if state is not None else DefenseState()
    U = _matrix(U)
    n = U.shape[0]
    if name == "fedavg":
        return agg_fedavg(U)
    if name in ("median", "flcert"):
        return agg_median(U)
    if name == "trimmed-mean":
        return agg_trimmed_mean(U, float(p.get("trim_ratio", 0.4)))
    if name == "multi-krum":
        f = int(p.get("f", n_malicious))
        m = int(p["m"]) if "m" in p else None
        return agg_multi_krum(U, f, m, client_ids)
    if name == "robustlr":
        thr = p.get("vote_threshold")
        return agg_robustlr(U, None if thr is None else int(thr), float(p.get("server_lr", 1.0)))
    if name == "rfa":
        return agg_rfa(U, int(p.get("max_iter", 100)), float(p.get("eps", 1e-6)), float(p.get("nu", 1e-6)))
    if name == "flair":
        return agg_flair(U, int(p.get("n_malicious", n_malicious)), state, client_ids)
    if name == "flame":
        return agg_flame(U, state, float(p.get("noise_sigma", 0.0)), round_seed, client_ids)
    if name == "foolsgold":
        return agg_foolsgold(U, state, client_ids)
    raise ConfigError(f"unknown defense {name!r}; valid: {', '.join(DEFENSES)}")
