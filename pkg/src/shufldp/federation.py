"""Round orchestration for the three training modes.

``fedavg``
    clients clip and normalize their updates, the server averages them.
``cdp``
    as fedavg, plus Laplace noise added by the server to the average.
``dpshuffle``
    every client perturbs its own normalized update with split Laplace noise
    and sends it through the shuffler; the server only ever sees the
    anonymized, reordered stream.

All randomness is derived from ``cfg.seed`` through named sub-streams, so a
run is a pure function of its configuration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import accounting, wire
from .data import TimeSeriesDataset, load_csv, sliding_window, synth_generate, train_test_split, zscore_fit_apply
from .errors import ConfigError, DataError, StoppedError
from .mechanisms import GradientTuple, PrivacyParams, denormalize, epsilon_schedule, laplace_noise, privatize
from .model import Batch, ModelParams, apply_update, forward, model_init, predict, value_and_grad
from .shuffler import Shuffler, negotiate_T

log = logging.getLogger(__name__)

FEDAVG = "fedavg"
CDP = "cdp"
DPSHUFFLE = "dpshuffle"
MODES = (FEDAVG, CDP, DPSHUFFLE)

ROUNDS_EXHAUSTED = "rounds-exhausted"
DELTA_EXCEEDED = "delta-exceeded"

# sub-stream tags for seed derivation
_DATA, _SPLIT, _PARTITION, _MODEL, _SAMPLING, _CLIENT, _SHUFFLER, _SERVER, _PROPOSALS = range(9)


def derive_rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag, *map(int, extra)])


def derive_seed(seed: int, tag: int, *extra: int) -> int:
    return int(np.random.SeedSequence([int(seed), tag, *map(int, extra)]).generate_state(1)[0])


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"  # "synthetic" or a CSV path
    classes: int = 3
    length: int = 64
    channels: int = 1
    per_class: int = 1000
    noise_sigma: float = 0.3
    train_ratio: float = 0.9
    window: Optional[int] = None
    stride: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    N: int
    n: int
    rounds: int
    seed: int
    privacy: PrivacyParams
    epsilon_budget: float = 100.0
    epochs: int = 40
    batch_size: int = 16
    lr_local: float = 0.05
    lr_global: float = 1.0
    t_proposal_low: float = 1.0
    t_proposal_high: float = 10.0
    client_k: Optional[Tuple[float, ...]] = None
    data: DataSpec = field(default_factory=DataSpec)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.N < 1:
            raise ConfigError("N", "must be >= 1")
        if not 1 <= self.n <= self.N:
            raise ConfigError("n", f"must satisfy 1 <= n <= N={self.N}")
        if self.rounds < 0:
            raise ConfigError("rounds", "must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.lr_local < 0 or self.lr_global < 0:
            raise ConfigError("lr_local" if self.lr_local < 0 else "lr_global", "must be >= 0")
        if not self.epsilon_budget > 0:
            raise ConfigError("epsilon", "must be > 0")
        if not 0 < self.t_proposal_low <= self.t_proposal_high:
            raise ConfigError("t_proposal_low", "need 0 < t_proposal_low <= t_proposal_high")
        if self.client_k is not None:
            if len(self.client_k) != self.N:
                raise ConfigError("client_k", f"needs exactly N={self.N} entries")
            if any(not 0 < k < 1 for k in self.client_k):
                raise ConfigError("client_k", "every k must lie strictly inside (0, 1)")

    @property
    def private(self) -> bool:
        return self.mode != FEDAVG


@dataclass
class ClientState:
    id: int
    shard: TimeSeriesDataset
    privacy: PrivacyParams

    def round_rng(self, seed: int, t: int) -> np.random.Generator:
        return derive_rng(seed, _CLIENT, self.id, t)


@dataclass(frozen=True)
class RoundReport:
    round: int
    test_accuracy: float
    train_loss: float
    delta: float
    epsilon_spent_nominal: float
    participating: int


def partition_iid(ds: TimeSeriesDataset, N: int, seed: int) -> List[TimeSeriesDataset]:
    """Random disjoint shards whose sizes differ by at most one."""
    if len(ds) < N:
        raise DataError(f"cannot split {len(ds)} samples across {N} clients")
    order = np.random.default_rng(seed).permutation(len(ds))
    return [ds.subset(idx) for idx in np.array_split(order, N)]


def local_train(
    params: ModelParams, shard: TimeSeriesDataset, epochs: int, batch_size: int, lr: float, rng
) -> ModelParams:
    """Plain mini-batch SGD, reshuffling the shard every epoch."""
    for _ in range(epochs):
        order = rng.permutation(len(shard))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            _, grad = value_and_grad(params, Batch(shard.x[idx], shard.y[idx]))
            params = apply_update(params, grad, lr)
    return params


def pseudo_gradient(initial: ModelParams, final: ModelParams, lr: float) -> GradientTuple:
    if lr == 0:
        return GradientTuple.from_flat(np.zeros(initial.layout.size), initial.layout)
    return GradientTuple.from_flat((initial.flat - final.flat) / lr, initial.layout)


def client_round(client: ClientState, global_params: ModelParams, cfg: ExperimentConfig, t: int) -> GradientTuple:
    """Train locally, then clip, normalize and (dpshuffle only) perturb."""
    if len(client.shard) == 0:
        raise DataError(f"client {client.id} has an empty shard")
    rng = client.round_rng(cfg.seed, t)
    local = local_train(global_params, client.shard, cfg.epochs, cfg.batch_size, cfg.lr_local, rng)
    delta = pseudo_gradient(global_params, local, cfg.lr_local)
    eps_t = epsilon_schedule(client.privacy, t) if cfg.mode == DPSHUFFLE else None
    return privatize(delta, client.privacy, eps_t, rng)


def server_aggregate(
    payloads: Sequence[GradientTuple],
    cfg: ExperimentConfig,
    eps_t: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradientTuple:
    """Mean of normalized updates, mapped back to parameter units.

    In cdp mode the mean is perturbed with Laplace noise of scale
    Δf / (n·ε_t) per coordinate before denormalizing.
    """
    if not payloads:
        raise ValueError("nothing to aggregate")
    layout = payloads[0].layout
    if any(p.layout.digest != layout.digest for p in payloads):
        raise ValueError("payloads disagree on layout")
    mean = np.mean(np.stack([p.flat() for p in payloads]), axis=0)
    if cfg.mode == CDP:
        if eps_t is None or rng is None:
            raise ValueError("cdp aggregation needs eps_t and a generator")
        scale = cfg.privacy.sensitivity / (len(payloads) * eps_t)
        mean = mean + laplace_noise(rng, scale, mean.size)
    return denormalize(GradientTuple.from_flat(mean, layout), cfg.privacy.clip_c)


def accuracy(params: ModelParams, ds: TimeSeriesDataset) -> float:
    return float(np.mean(predict(params, ds.x) == ds.y))


def build_datasets(cfg: ExperimentConfig) -> Tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Load or synthesize, window, split and standardize the data."""
    data_cfg = cfg.data
    if data_cfg.source == "synthetic":
        ds = synth_generate(
            data_cfg.classes,
            data_cfg.length,
            data_cfg.channels,
            data_cfg.per_class,
            data_cfg.noise_sigma,
            derive_seed(cfg.seed, _DATA),
        )
    else:
        ds = load_csv(data_cfg.source, data_cfg.classes, data_cfg.length, data_cfg.channels)
    if data_cfg.window is not None:
        stride = data_cfg.stride or data_cfg.window
        xs, ys = [], []
        for x, y in zip(ds.x, ds.y):
            w = sliding_window(x, data_cfg.window, stride)
            xs.append(w)
            ys.append(np.full(len(w), y))
        ds = TimeSeriesDataset(np.concatenate(xs), np.concatenate(ys), ds.num_classes, ds.name)
    train, test = train_test_split(ds, data_cfg.train_ratio, derive_seed(cfg.seed, _SPLIT))
    train, test, _ = zscore_fit_apply(train, test)
    return train, test


class Federation:
    """Server-side state of one run: global model, clients, shuffler, accountant."""

    def __init__(self, cfg: ExperimentConfig, train: TimeSeriesDataset, test: TimeSeriesDataset):
        self.cfg = cfg
        self.train = train
        self.test = test
        shards = partition_iid(train, cfg.N, derive_seed(cfg.seed, _PARTITION))
        self.clients = [
            ClientState(i, shard, cfg.privacy if cfg.client_k is None else replace(cfg.privacy, k=cfg.client_k[i]))
            for i, shard in enumerate(shards)
        ]
        self.global_params = model_init(train.channels, train.length, train.num_classes, derive_seed(cfg.seed, _MODEL))
        self.accountant = (
            accounting.new_accountant(cfg.epsilon_budget, cfg.privacy.delta_limit) if cfg.private else None
        )
        self.shuffler = None
        if cfg.mode == DPSHUFFLE:
            proposals = derive_rng(cfg.seed, _PROPOSALS).uniform(cfg.t_proposal_low, cfg.t_proposal_high, cfg.N)
            self.shuffler = Shuffler(negotiate_T(proposals), derive_rng(cfg.seed, _SHUFFLER))
        self.clock = 0.0
        self.reports: List[RoundReport] = []
        self.stop_reason: Optional[str] = None

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Federation":
        return cls(cfg, *build_datasets(cfg))

    @property
    def stopped(self) -> bool:
        return self.accountant is not None and accounting.should_stop(self.accountant)

    def sample_clients(self, t: int) -> List[ClientState]:
        ids = derive_rng(self.cfg.seed, _SAMPLING, t).choice(self.cfg.N, size=self.cfg.n, replace=False)
        return [self.clients[i] for i in ids]

    def _collect(self, participants: List[ClientState], t: int) -> List[GradientTuple]:
        updates = [client_round(c, self.global_params, self.cfg, t) for c in participants]
        if self.shuffler is None:
            return updates
        start = self.clock
        for g in updates:
            self.shuffler.submit(wire.serialize(g), now=start)
        self.clock = start + self.shuffler.T
        released = self.shuffler.drain(self.clock)
        return [wire.deserialize(buf, self.global_params.layout) for buf in released]

    def run_round(self, t: int) -> RoundReport:
        if self.stopped:
            raise StoppedError(f"privacy accountant stopped training before round {t}")
        cfg = self.cfg
        participants = self.sample_clients(t)
        payloads = self._collect(participants, t)

        eps_t = epsilon_schedule(cfg.privacy, t) if cfg.private else None
        server_rng = derive_rng(cfg.seed, _SERVER, t) if cfg.mode == CDP else None
        update = server_aggregate(payloads, cfg, eps_t, server_rng)
        self.global_params = apply_update(self.global_params, update, cfg.lr_global * cfg.lr_local)

        delta = eps_spent = 0.0
        if self.accountant is not None:
            self.accountant = accounting.accountant_record(self.accountant, t, eps_t, cfg.n / cfg.N)
            delta = self.accountant.current_delta
            eps_spent = self.accountant.epsilon_spent_nominal

        train_loss, _ = forward(self.global_params, Batch(self.train.x, self.train.y))
        report = RoundReport(
            round=t,
            test_accuracy=accuracy(self.global_params, self.test),
            train_loss=train_loss,
            delta=delta,
            epsilon_spent_nominal=eps_spent,
            participating=len(payloads),
        )
        self.reports.append(report)
        log.debug("round %d: %s", t, report)
        return report

    def run(self, on_round=None) -> List[RoundReport]:
        for t in range(len(self.reports) + 1, self.cfg.rounds + 1):
            if self.stopped:
                self.stop_reason = DELTA_EXCEEDED
                break
            report = self.run_round(t)
            if on_round is not None:
                on_round(report)
        else:
            self.stop_reason = ROUNDS_EXHAUSTED
        return self.reports


def run_experiment(cfg: ExperimentConfig) -> List[RoundReport]:
    return Federation.from_config(cfg).run()
