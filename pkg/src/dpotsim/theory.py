"""Numerical checks of the linear-regression backdoor analysis.

Model: ``y = x @ beta`` with ``x`` a length-``n`` row in [0, 1] and ``beta``
of shape ``(n, m)``. A trigger is a 0/1 mask over the ``n`` entries plus a
value vector; embedding gives ``x_t = x * (1 - mask) + values * mask``.

The four checks run per random instance:

* ``P1-mechanism``: optimising the values on a mask strictly lowers the
  backdoor residual ``||x_t beta - y_t||`` and the gradient bound
  ``||g_bd|| <= 2 ||e|| ||x_t beta - y_t||`` holds.
* ``P1-effect``: the mixed (benign + backdoor) gradient is at least as
  cosine-aligned with the benign gradient as it is with random values.
* ``P2``: the optimal values beat every one of ``n_random`` random draws.
* ``P3``: the best ``k``-subset trigger does no worse than a fixed
  top-left trigger with values 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .errors import ConfigError, ShapeError, UndefinedSimilarityError

PROPS = ("P1-mechanism", "P1-effect", "P2", "P3")
MAX_SUBSETS = 10**6


@dataclass(frozen=True)
class LinRegInstance:
    x: np.ndarray  # (n,)
    beta: np.ndarray  # (n, m)
    y_hat: np.ndarray  # (m,)
    y_t: np.ndarray  # (m,)
    alpha: float = 0.5

    def __post_init__(self):
        for name in ("x", "beta", "y_hat", "y_t"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n, m = self.beta.shape
        if self.x.shape != (n,) or self.y_hat.shape != (m,) or self.y_t.shape != (m,):
            raise ShapeError("instance dimensions disagree")
        if np.array_equal(self.y_t, self.y_hat):
            raise ConfigError("backdoor target must differ from the benign target")

    @property
    def n(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class DiagTrigger:
    mask: np.ndarray  # (n,) of 0/1
    values: np.ndarray  # (n,), only masked entries matter

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=np.float64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.mask.shape != self.values.shape:
            raise ShapeError("mask and values differ in length")

    @property
    def k(self) -> int:
        return int(self.mask.sum())


def embed(x, trig: DiagTrigger) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != trig.mask.shape:
        raise ShapeError("trigger length does not match x")
    return x * (1.0 - trig.mask) + trig.values * trig.mask


def benign_loss(inst: LinRegInstance) -> float:
    r = inst.x @ inst.beta - inst.y_hat
    return float(r @ r)


def backdoor_loss(inst: LinRegInstance, trig: DiagTrigger) -> float:
    r = embed(inst.x, trig) @ inst.beta - inst.y_t
    return float(r @ r)


def grad_benign(inst: LinRegInstance) -> np.ndarray:
    return 2.0 * np.outer(inst.x, inst.x @ inst.beta - inst.y_hat)


def grad_backdoor(inst: LinRegInstance, trig: DiagTrigger) -> np.ndarray:
    xt = embed(inst.x, trig)
    return 2.0 * np.outer(xt, xt @ inst.beta - inst.y_t)


def mixed_gradient(inst: LinRegInstance, trig: DiagTrigger) -> np.ndarray:
    a = inst.alpha
    return (1.0 - a) * grad_benign(inst) + a * grad_backdoor(inst, trig)


def cos_sim(A, B) -> float:
    a = np.asarray(A, dtype=np.float64).ravel()
    b = np.asarray(B, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine similarity of a zero matrix")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _masked_system(inst: LinRegInstance, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (inst.n,):
        raise ShapeError("mask length does not match instance")
    idx = np.flatnonzero(mask)
    r0 = np.where(mask, 0.0, inst.x) @ inst.beta - inst.y_t
    # loss(v) = || r0 + v @ beta[idx] ||^2 = || beta[idx].T v + r0 ||^2
    return idx, inst.beta[idx].T, r0


def least_squares_values(inst: LinRegInstance, mask) -> np.ndarray:
    """Unconstrained minimum-norm minimiser over the masked entries (length k)."""
    idx, A, r0 = _masked_system(inst, mask)
    if idx.size == 0:
        return np.zeros(0)
    return np.linalg.lstsq(A, -r0, rcond=None)[0]


def optimal_values(inst: LinRegInstance, mask) -> tuple[np.ndarray, float]:
    """Best trigger values in [0, 1] for a fixed mask, and the loss they reach.

    The objective is a convex quadratic in the masked entries, so the box
    constrained least-squares solution is the global optimum. Unmasked
    entries of the returned vector copy ``x``.
    """
    idx, A, r0 = _masked_system(inst, mask)
    values = inst.x.copy()
    if idx.size:
        res = lsq_linear(A, -r0, bounds=(0.0, 1.0), method="bvls", tol=1e-12)
        v = np.clip(res.x, 0.0, 1.0)
        # an in-box interior least-squares solution is exact; prefer it when feasible
        v_ls = least_squares_values(inst, mask)
        if np.all((v_ls >= 0.0) & (v_ls <= 1.0)):
            v = v_ls if _sq(A @ v_ls + r0) <= _sq(A @ v + r0) else v
        values[idx] = v
    trig = DiagTrigger(np.asarray(mask, dtype=np.float64), values)
    return values, backdoor_loss(inst, trig)


def _sq(r) -> float:
    return float(r @ r)


@dataclass
class SubsetResult:
    mask: np.ndarray
    values: np.ndarray
    loss: float


def brute_force_best_subset(inst: LinRegInstance, k: int) -> SubsetResult:
    """Exhaustive search over every k-subset, each with optimal values."""
    n = inst.n
    if not 0 <= k <= n:
        raise ConfigError(f"k={k} outside [0, {n}]")
    if math.comb(n, k) > MAX_SUBSETS:
        raise ConfigError(f"C({n},{k}) subsets exceed the {MAX_SUBSETS} guard")
    best = None
    for subset in itertools.combinations(range(n), k):
        mask = np.zeros(n)
        mask[list(subset)] = 1.0
        values, loss = optimal_values(inst, mask)
        if best is None or loss < best.loss:
            best = SubsetResult(mask, values, loss)
    return best


def fixed_corner_trigger(n: int, k: int) -> DiagTrigger:
    mask = np.zeros(n)
    mask[:k] = 1.0
    return DiagTrigger(mask, np.ones(n))


def random_instance(rng, n: int = 8, m: int = 3, alpha: float = 0.5,
                    label_noise: float = 0.01) -> LinRegInstance:
    x = rng.uniform(0.0, 1.0, n)
    beta = rng.normal(size=(n, m)) / np.sqrt(n)
    y_hat = x @ beta + label_noise * rng.normal(size=m)
    offset = rng.normal(size=m)
    y_t = y_hat + offset / np.linalg.norm(offset)
    return LinRegInstance(x, beta, y_hat, y_t, alpha)


def random_mask(rng, n: int, k: int) -> np.ndarray:
    mask = np.zeros(n)
    mask[rng.choice(n, size=k, replace=False)] = 1.0
    return mask


def check_instance(inst: LinRegInstance, mask, random_values, draws, k_subset: int) -> dict:
    """Run the four checks on one instance with caller-supplied randomness.

    ``random_values`` is one length-n draw for the P1-effect comparison;
    ``draws`` is an ``(n_random, n)`` array of competitors for P2.
    """
    mask = np.asarray(mask, dtype=np.float64)
    n = inst.n
    plain = DiagTrigger(mask, inst.x.copy())
    values, opt_loss = optimal_values(inst, mask)
    opt = DiagTrigger(mask, values)

    r_before = math.sqrt(backdoor_loss(inst, plain))
    r_after = math.sqrt(opt_loss)
    g_bd = np.linalg.norm(grad_backdoor(inst, opt))
    bound = 2.0 * math.sqrt(n) * r_after
    mechanism = r_after < r_before and g_bd <= bound * (1 + 1e-12)

    g_bn = grad_benign(inst)
    cos_opt = cos_sim(g_bn, mixed_gradient(inst, opt))
    cos_rand = cos_sim(g_bn, mixed_gradient(inst, DiagTrigger(mask, random_values)))
    effect = cos_opt >= cos_rand

    tol = 1e-12 * max(1.0, opt_loss)
    p2 = all(opt_loss <= backdoor_loss(inst, DiagTrigger(mask, d)) + tol for d in draws)

    best = brute_force_best_subset(inst, k_subset)
    fixed_loss = backdoor_loss(inst, fixed_corner_trigger(n, k_subset))
    p3 = best.loss <= fixed_loss + 1e-12 * max(1.0, fixed_loss)

    return {
        "P1-mechanism": mechanism,
        "P1-effect": effect,
        "P2": p2,
        "P3": p3,
        "residual_before": r_before,
        "residual_after": r_after,
        "cos_opt": cos_opt,
        "cos_random": cos_rand,
    }


@dataclass
class TheoryReport:
    trials: int
    passes: dict
    flags: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (trial, prop)

    def format(self) -> str:
        lines = [f"{'prop':<14}{'trials':>8}{'passes':>8}"]
        for p in PROPS:
            lines.append(f"{p:<14}{self.trials:>8}{self.passes[p]:>8}")
        for f in self.flags:
            lines.append(f"note: {f}")
        return "\n".join(lines)

    def csv_rows(self) -> list[tuple]:
        return [(p, self.trials, self.passes[p]) for p in PROPS]


def run_theory_checks(n_trials: int, seed: int, n: int = 8, m: int = 3, alpha: float = 0.5,
                       k: int = 4, k_subset: int = 2, n_random: int = 100) -> TheoryReport:
    """Seeded batch of :func:`check_instance` runs; counts passes per check."""
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    passes = {p: 0 for p in PROPS}
    report = TheoryReport(n_trials, passes)
    if alpha >= 0.99:
        report.flags.append(f"alpha={alpha}: mixed gradient is dominated by the backdoor term, "
                            "P1-effect compares near-backdoor gradients")
    for t in range(n_trials):
        rng = np.random.default_rng([seed, t])
        inst = random_instance(rng, n, m, alpha)
        mask = random_mask(rng, n, k)
        rand_vals = rng.uniform(0.0, 1.0, n)
        draws = rng.uniform(0.0, 1.0, (n_random, n))
        res = check_instance(inst, mask, rand_vals, draws, k_subset)
        for p in PROPS:
            if res[p]:
                passes[p] += 1
            else:
                report.failures.append((t, p))
    return report
