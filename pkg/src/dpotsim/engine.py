"""Federated rounds: distribute, train locally, aggregate, evaluate.

Malicious clients run exactly the same :func:`local_train` as everybody else;
the attack only changes the data they feed it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import attack as atk
from .data import Dataset, PartitionSpec, generate_synthetic, load_idx, partition_noniid, train_test_split
from .defenses import DEFENSES, DefenseState, agg_flcert, aggregate, flcert_predict
from .errors import ConfigError
from .nn import Model, backward, flatten_params, init_model, one_hot, predict_labels, sgd_step, unflatten_params

ATTACKS = ("none", "dpot", "ft", "dft")


@dataclass
class FLConfig:
    n_clients: int = 20
    mcr: float = 0.05
    rounds: int = 30
    local_epochs: int = 5
    batch_size: int = 32
    local_lr: float = 0.01
    poison_rate: float = 0.5
    tri_size: int = 16
    target_label: int = 0
    defense: str = "fedavg"
    rule_params: dict = field(default_factory=dict)  # defense name -> {param: value}
    attack: str = "dpot"
    scaling_factor: float = 1.0
    n_iter: int = 10
    gamma0: float = 5.0
    dft_parts: int = 4
    arch: str = "mlp-256-64-10"
    dataset: str = "synth"
    n_classes: int = 10
    per_class: int = 1000
    image_size: int = 16
    noise_sigma: float = 1.7
    template_density: float = 0.2
    test_fraction: float = 0.2
    noniid_bias: float = 0.5
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    data_seed: int = 0
    model_seed: int = 0
    round_seed: int = 0

    def validate(self) -> "FLConfig":
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not 0.0 <= self.mcr <= 1.0:
            raise ConfigError("mcr must be in [0, 1]")
        if self.rounds < 1 or self.local_epochs < 0:
            raise ConfigError("rounds must be >= 1 and local_epochs >= 0")
        if self.batch_size < 1 or self.local_lr <= 0:
            raise ConfigError("batch_size and local_lr must be positive")
        if not 0.0 <= self.poison_rate <= 1.0:
            raise ConfigError("poison_rate must be in [0, 1]")
        if self.defense not in DEFENSES:
            raise ConfigError(f"unknown defense {self.defense!r}; valid: {', '.join(DEFENSES)}")
        if self.attack not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack!r}; valid: {', '.join(ATTACKS)}")
        if self.dataset not in ("synth", "idx"):
            raise ConfigError("dataset must be 'synth' or 'idx'")
        if not 0 <= self.target_label < self.n_classes:
            raise ConfigError("target_label outside [0, n_classes)")
        return self

    @property
    def defense_params(self) -> dict:
        return dict(self.rule_params.get(self.defense, {}))

    @property
    def n_malicious(self) -> int:
        return math.ceil(self.mcr * self.n_clients - 1e-9)


@dataclass(frozen=True)
class ModelUpdate:
    client_id: int
    delta: np.ndarray


@dataclass
class RoundRecord:
    round: int
    ma: float
    asr: float
    defense: str
    excluded_ids: list = field(default_factory=list)
    weights: np.ndarray | None = None
    trigger: atk.Trigger | None = None
    malicious_cosine: float = float("nan")


@dataclass
class Environment:
    """Everything fixed before round 1: client data, test set, attacker ids."""

    clients: list
    test: Dataset
    malicious_ids: list
    image_shape: tuple


@dataclass
class ExperimentLog:
    config: FLConfig
    records: list
    malicious_ids: list
    final_model: Model
    summary: object = None


# ---------------------------------------------------------------------------
# evaluation


def _labels(predictor, X) -> np.ndarray:
    if isinstance(predictor, Model):
        return predict_labels(predictor, X)
    return np.asarray(predictor(X))


def evaluate_ma(model, test: Dataset) -> float:
    """Clean accuracy; ``model`` is a Model or a callable returning labels."""
    if len(test) == 0:
        raise ConfigError("empty test set")
    return float(np.mean(_labels(model, test.flat_images) == test.labels))


def evaluate_asr(model, test: Dataset, trigger: atk.Trigger) -> float:
    """Share of triggered non-target test images classified as the target."""
    if len(test) == 0:
        raise ConfigError("empty test set")
    keep = test.labels != trigger.target_label
    if not keep.any():
        raise ConfigError("no test images outside the target class")
    poisoned = atk.apply_trigger(test.images[keep], trigger)
    pred = _labels(model, poisoned.reshape(poisoned.shape[0], -1))
    return float(np.mean(pred == trigger.target_label))


# ---------------------------------------------------------------------------
# training


def local_train(global_model: Model, data: Dataset, epochs: int, lr: float,
                batch_size: int, seed, client_id: int = -1) -> ModelUpdate:
    """Seeded mini-batch SGD with cross-entropy; returns local minus global."""
    if len(data) == 0:
        raise ConfigError(f"client {client_id} has no data")
    rng = np.random.default_rng(seed)
    X = data.flat_images
    T = one_hot(data.labels, global_model.n_outputs)
    model = global_model
    for _ in range(epochs):
        perm = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            idx = perm[start:start + batch_size]
            _, grads = backward(model, X[idx], T[idx], "cross_entropy")
            model = sgd_step(model, grads, lr)
    return ModelUpdate(client_id, flatten_params(model) - flatten_params(global_model))


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    return float(a @ b / (na * nb))


def setup_environment(config: FLConfig) -> Environment:
    config.validate()
    if config.dataset == "synth":
        shape = (config.image_size, config.image_size)
        full = generate_synthetic(config.n_classes, config.per_class, shape, config.noise_sigma,
                                  config.data_seed, config.template_density)
        train, test = train_test_split(full, config.test_fraction, config.data_seed)
    else:
        train = load_idx(config.idx_train_images, config.idx_train_labels, config.n_classes)
        test = load_idx(config.idx_test_images, config.idx_test_labels, config.n_classes)
    clients = partition_noniid(train, PartitionSpec(config.n_clients, config.noniid_bias, config.data_seed))
    rng = np.random.default_rng([config.data_seed, 7])
    malicious = sorted(int(i) for i in rng.permutation(config.n_clients)[:config.n_malicious])
    return Environment(clients, test, malicious, train.image_shape)


def reference_trigger(config: FLConfig, image_shape) -> atk.Trigger:
    return atk.make_fixed_trigger(image_shape, config.target_label, config.tri_size)


def run_round(global_model: Model, env: Environment, config: FLConfig, round_index: int,
              state: DefenseState) -> tuple[Model, RoundRecord]:
    """One FL round; the record's ASR tests this round's trigger on the new global model."""
    malicious = set(env.malicious_ids)
    client_data = list(env.clients)
    trigger = reference_trigger(config, env.image_shape)
    if config.attack == "dpot" and malicious:
        D = atk.build_trigger_training_set([env.clients[i] for i in sorted(malicious)], config.target_label)
        trigger, _ = atk.optimize_trigger(global_model, D, config.target_label, config.tri_size,
                                          config.n_iter, config.gamma0)
    if config.attack != "none":
        parts = [trigger]
        if config.attack == "dft":
            parts = atk.split_distributed_trigger(trigger, min(config.dft_parts, trigger.tri_size))
        for k, cid in enumerate(sorted(malicious)):
            client_data[cid] = atk.poison_dataset(env.clients[cid], parts[k % len(parts)], config.poison_rate,
                                                  [config.round_seed, round_index, cid, 1])

    updates = []
    for cid, data in enumerate(client_data):
        up = local_train(global_model, data, config.local_epochs, config.local_lr, config.batch_size,
                         [config.round_seed, round_index, cid], client_id=cid)
        delta = up.delta
        if cid in malicious and config.attack != "none":
            delta = delta * config.scaling_factor
        updates.append(delta)
    U = np.stack(updates)

    result = aggregate(config.defense, U, state, config.defense_params, list(range(len(updates))),
                       n_malicious=len(malicious), round_seed=[config.round_seed, round_index])
    base = flatten_params(global_model)
    new_global = unflatten_params(global_model, base + result.global_update)

    predictor = new_global
    if config.defense == "flcert":
        groups = agg_flcert(U, int(config.defense_params.get("n_groups", 5)),
                            [config.round_seed, round_index, 99])
        group_models = [unflatten_params(global_model, base + g.global_update) for g in groups]
        predictor = lambda X: flcert_predict(group_models, X)  # noqa: E731

    benign = [i for i in range(len(updates)) if i not in malicious]
    mal_cos = float("nan")
    if malicious and benign:
        ref = U[benign].mean(axis=0)
        mal_cos = float(np.mean([_cos(U[i], ref) for i in sorted(malicious)]))

    record = RoundRecord(
        round=round_index,
        ma=evaluate_ma(predictor, env.test),
        asr=evaluate_asr(predictor, env.test, trigger),
        defense=config.defense,
        excluded_ids=list(result.excluded),
        weights=result.weights,
        trigger=trigger,
        malicious_cosine=mal_cos,
    )
    return new_global, record


def run_experiment(config: FLConfig, baseline: bool = False) -> ExperimentLog:
    """All rounds from a seeded initial model; optionally a no-attack companion run."""
    from .metrics import summarize

    env = setup_environment(config)
    model = init_model(config.arch, config.model_seed)
    if model.n_inputs != env.image_shape[0] * env.image_shape[1]:
        raise ConfigError(f"architecture {config.arch} does not take {env.image_shape} images")
    state = DefenseState()
    records = []
    for r in range(1, config.rounds + 1):
        model, rec = run_round(model, env, config, r, state)
        records.append(rec)
    baseline_ma = None
    if baseline:
        companion = run_experiment(replace(config, attack="none"))
        baseline_ma = companion.summary.final_ma
    log = ExperimentLog(config, records, env.malicious_ids, model)
    log.summary = summarize(records, baseline_ma)
    return log
