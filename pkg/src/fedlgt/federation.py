"""Round loop: client sampling, local updates, weighted parameter averaging.

One communication round broadcasts the global parameters, runs independent
local updates on the sampled clients, and averages the results weighted by
client data size (renormalized over the sampled clients). Local updates are
pure functions of (global params, shard, derived seed) and may run in a
thread pool; aggregation is a deterministic barrier in ascending client-id
order.

Training modes:

==================  ============  ===============  =================
mode                label tokens  state source     label embeddings
==================  ============  ===============  =================
fedavg-plain        none          all unknown      none
fedctran            yes           random mask      learnable, aggregated
fedctran+camle      yes           calibrated       learnable, aggregated
fedctran+ule        yes           random mask      frozen, shared
fedlgt              yes           calibrated       frozen, shared
==================  ============  ===============  =================
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import masking as mk
from . import tensor as tc
from .datagen import FederatedDataset, Shard
from .embeddings import EmbeddingMatrix, StateEmbeddings
from .metrics import MetricsReport, evaluate
from .model import ModelConfig, forward, init_params, masked_bce_loss, save_checkpoint
from .tensor import ParameterSet, Tensor

__all__ = [
    "MODES",
    "FederationConfig",
    "LabelSpace",
    "RoundReport",
    "LocalUpdateResult",
    "sample_clients",
    "local_update",
    "aggregate",
    "run_training",
    "evaluate_global",
    "predict_probs",
]

MODES = ("fedavg-plain", "fedctran", "fedctran+camle", "fedctran+ule", "fedlgt")


def mode_uses_label_tokens(mode: str) -> bool:
    return mode != "fedavg-plain"


def mode_uses_calibration(mode: str) -> bool:
    return mode in ("fedctran+camle", "fedlgt")


def mode_uses_frozen_embeddings(mode: str) -> bool:
    return mode in ("fedctran+ule", "fedlgt")


def mode_uses_learnable_embeddings(mode: str) -> bool:
    return mode in ("fedctran", "fedctran+camle")


@dataclass(frozen=True)
class FederationConfig:
    rounds: int
    local_epochs: int
    total_clients: int
    active_fraction: float
    sampling: str = "uniform"  # uniform | data-proportional
    mode: str = "fedlgt"
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 16
    mask_range: tuple[float, float] = (0.0, 1.0)
    calibration: mk.CalibrationConfig = mk.CalibrationConfig()
    calibration_refresh: str = "batch"  # batch | epoch

    def __post_init__(self):
        if self.rounds < 0 or self.local_epochs < 1 or self.total_clients < 1:
            raise ValueError("need rounds >= 0, local_epochs >= 1, total_clients >= 1")
        if not 0.0 < self.active_fraction <= 1.0:
            raise ValueError(f"active_fraction must lie in (0, 1], got {self.active_fraction}")
        if self.sampling not in ("uniform", "data-proportional"):
            raise ValueError(f"unknown sampling strategy {self.sampling!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.calibration_refresh not in ("batch", "epoch"):
            raise ValueError(f"calibration_refresh must be batch or epoch")
        if self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("batch_size must be >= 1 and learning_rate >= 0")
        object.__setattr__(self, "mask_range", tuple(float(v) for v in self.mask_range))

    @property
    def clients_per_round(self) -> int:
        r = math.ceil(self.active_fraction * self.total_clients - 1e-9)
        return max(1, min(self.total_clients, r))


@dataclass(frozen=True)
class LabelSpace:
    """The frozen embedding inputs a mode needs (either part may be absent)."""

    matrix: EmbeddingMatrix | None = None
    states: StateEmbeddings | None = None


class LocalUpdateResult(NamedTuple):
    params: ParameterSet
    steps: int
    final_loss: float


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    client_ids: tuple[int, ...]  # ascending
    client_sizes: tuple[int, ...]
    weights: tuple[float, ...]
    client_losses: tuple[float, ...]
    wall_time: float
    metrics: MetricsReport | None = None

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"aggregation weights sum to {sum(self.weights)!r}, expected 1")

    def to_line(self, include_wall: bool = True) -> str:
        parts = [
            f"round={self.round_index}",
            "clients=" + ",".join(str(i) for i in self.client_ids),
            "sizes=" + ",".join(str(s) for s in self.client_sizes),
            "weights=" + ",".join(f"{w:.12f}" for w in self.weights),
            "losses=" + ",".join(f"{v:.8f}" for v in self.client_losses),
        ]
        if include_wall:
            parts.append(f"wall={self.wall_time:.3f}")
        parts.append(self.metrics.format_row() if self.metrics else "metrics=none")
        return " ".join(parts)

    def metrics_line(self) -> str:
        tail = self.metrics.format_row() if self.metrics else "metrics=none"
        return f"round={self.round_index} {tail}"


def sample_clients(
    client_sizes: Sequence[int],
    num_selected: int,
    strategy: str = "uniform",
    rng: np.random.Generator | int = 0,
) -> list[int]:
    """Select distinct client ids, in draw order.

    data-proportional performs successive weighted draws without replacement,
    each weight proportional to the client's remaining data size.
    """
    sizes = np.asarray(client_sizes, dtype=np.float64)
    total = len(sizes)
    if num_selected > total:
        raise ValueError(f"cannot sample {num_selected} of {total} clients")
    if (sizes <= 0).any():
        raise ValueError("client sizes must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if strategy == "uniform":
        return [int(i) for i in rng.choice(total, size=num_selected, replace=False)]
    if strategy != "data-proportional":
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    available = list(range(total))
    picked: list[int] = []
    for _ in range(num_selected):
        w = sizes[available]
        choice = int(rng.choice(len(available), p=w / w.sum()))
        picked.append(available.pop(choice))
    return picked


def _batch_states(
    mode: str,
    targets: np.ndarray,
    probs: np.ndarray | None,
    mask_range: tuple[float, float],
    calibration: mk.CalibrationConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    if mode == "fedavg-plain":
        return mk.inference_mask(targets.shape[1], batch=targets.shape[0])
    if mode_uses_calibration(mode):
        return mk.calibrate_states(probs, mk.states_from_targets(targets), calibration)
    return np.stack([mk.random_label_mask(row, mask_range, rng) for row in targets])


def predict_probs(
    params: ParameterSet,
    features: np.ndarray,
    model_cfg: ModelConfig,
    mode: str,
    label_space: LabelSpace,
    batch_size: int = 128,
) -> np.ndarray:
    """Global-model probabilities under the all-unknown composition, batched."""
    if not mode_uses_label_tokens(mode):
        rows = None
    elif mode_uses_frozen_embeddings(mode):
        rows = label_space.matrix.rows
    else:
        rows = params["label_embeddings"].data
    chunks = []
    for lo in range(0, features.shape[0], batch_size):
        logits = forward(params, features[lo : lo + batch_size], rows, model_cfg)
        chunks.append(1.0 / (1.0 + np.exp(-logits.data)))
    return np.concatenate(chunks, axis=0)


@dataclass(frozen=True)
class TrainerSetup:
    """Everything a local update needs beyond (global params, shard, seed)."""

    model_cfg: ModelConfig
    mode: str
    label_space: LabelSpace
    learning_rate: float = 1e-4
    batch_size: int = 16
    mask_range: tuple[float, float] = (0.0, 1.0)
    calibration: mk.CalibrationConfig = mk.CalibrationConfig()
    calibration_refresh: str = "batch"

    def __post_init__(self):
        if mode_uses_label_tokens(self.mode):
            if self.label_space.states is None:
                raise ValueError(f"mode {self.mode} needs state embeddings")
            if self.label_space.states.dim != self.model_cfg.embed_dim:
                raise ValueError(
                    f"state width {self.label_space.states.dim} != embed_dim {self.model_cfg.embed_dim}"
                )
        if mode_uses_frozen_embeddings(self.mode):
            m = self.label_space.matrix
            if m is None:
                raise ValueError(f"mode {self.mode} needs a frozen label-embedding matrix")
            if m.num_classes != self.model_cfg.num_classes or m.dim != self.model_cfg.embed_dim:
                raise ValueError(
                    f"embedding matrix is {m.num_classes}x{m.dim}, model wants "
                    f"{self.model_cfg.num_classes}x{self.model_cfg.embed_dim}"
                )
        if mode_uses_learnable_embeddings(self.mode) != self.model_cfg.learnable_label_embeddings:
            raise ValueError(
                f"mode {self.mode} requires learnable_label_embeddings="
                f"{mode_uses_learnable_embeddings(self.mode)}"
            )


def local_update(
    global_params: ParameterSet,
    shard: Shard,
    epochs: int,
    mode: str,
    seed: int,
    setup: TrainerSetup,
) -> LocalUpdateResult:
    """Train a copy of the global parameters on one client shard.

    Runs `epochs` passes over seeded-shuffled batches; each step builds the
    per-sample states for the mode, composes label tokens, and takes one Adam
    step on the masked loss. The global parameter set is never modified.
    """
    if len(shard) == 0:
        raise ValueError("cannot run a local update on an empty client dataset")
    if mode != setup.mode:
        raise ValueError(f"mode argument {mode!r} disagrees with setup mode {setup.mode!r}")
    cfg = setup.model_cfg
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(21,)))
    params = global_params
    adam_state = None
    steps = 0
    final_loss = 0.0
    features, targets = shard.features, shard.labels
    n = len(shard)
    epoch_probs: np.ndarray | None = None

    for _ in range(epochs):
        order = rng.permutation(n)
        if mode_uses_calibration(mode) and setup.calibration_refresh == "epoch":
            epoch_probs = predict_probs(global_params, features, cfg, mode, setup.label_space)
        for lo in range(0, n, setup.batch_size):
            idx = order[lo : lo + setup.batch_size]
            bx, by = features[idx], targets[idx]
            probs = None
            if mode_uses_calibration(mode):
                probs = (
                    epoch_probs[idx]
                    if epoch_probs is not None
                    else predict_probs(global_params, bx, cfg, mode, setup.label_space)
                )
            states = _batch_states(mode, by, probs, setup.mask_range, setup.calibration, rng)

            with tc.Tape() as tape:
                watched = ParameterSet({name: tape.watch(name, params[name]) for name in params.names()})
                if not mode_uses_label_tokens(mode):
                    logits = forward(watched, bx, None, cfg)
                elif mode_uses_frozen_embeddings(mode):
                    tokens = mk.compose_masked_embeddings(
                        setup.label_space.matrix, states, setup.label_space.states
                    )
                    logits = forward(watched, bx, tokens, cfg)
                else:
                    offsets = mk.state_offsets(states, setup.label_space.states)
                    tokens = tc.add(watched["label_embeddings"], Tensor(offsets))
                    logits = forward(watched, bx, tokens, cfg)
                loss, _ = masked_bce_loss(logits, by, states)
            grads = tc.gradients(tape, loss)
            params, adam_state = tc.adam_step(
                params, grads, adam_state, lr=setup.learning_rate
            )
            steps += 1
            final_loss = loss.item()
    return LocalUpdateResult(params=params, steps=steps, final_loss=final_loss)


def aggregate(local_params: Sequence[ParameterSet], sizes: Sequence[int]) -> ParameterSet:
    """Data-size weighted mean of parameter sets, in the given (client-id) order.

    Computed in anchored form out = x0 + sum_k s_k (x_k - x0) / sum(s), which
    returns the common value bit-exactly when all inputs are identical.
    """
    if not local_params:
        raise ValueError("nothing to aggregate")
    if len(local_params) != len(sizes):
        raise ValueError(f"{len(local_params)} parameter sets but {len(sizes)} sizes")
    if any(s <= 0 for s in sizes):
        raise ValueError("client sizes must be positive")
    first = local_params[0]
    names = first.names()
    for i, ps in enumerate(local_params):
        if ps.names() != names:
            raise ValueError(f"parameter set {i} has different tensor names")
    total = float(np.sum(np.asarray(sizes, dtype=np.float64)))
    out: dict[str, Tensor] = {}
    for name in names:
        anchor = first[name].data
        acc = np.zeros_like(anchor)
        for ps, s in zip(local_params, sizes):
            t = ps[name].data
            if t.shape != anchor.shape:
                raise tc.ShapeError(
                    f"aggregate: shape mismatch for {name!r}: {t.shape} vs {anchor.shape}"
                )
            acc += float(s) * (t - anchor)
        out[name] = Tensor(anchor + acc / total)
    return ParameterSet(out)


def _client_seed(base_seed: int, round_index: int, client_id: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(23, round_index, client_id))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def evaluate_global(
    params: ParameterSet,
    dataset: FederatedDataset,
    model_cfg: ModelConfig,
    mode: str,
    label_space: LabelSpace,
) -> MetricsReport:
    """Metrics of the global model on the shared test split (all-unknown mask)."""
    if len(dataset.test) == 0:
        raise ValueError("dataset has no test split to evaluate on")
    probs = predict_probs(params, dataset.test.features, model_cfg, mode, label_space)
    return evaluate(probs, dataset.test.labels)


def run_training(
    fed_cfg: FederationConfig,
    dataset: FederatedDataset,
    model_cfg: ModelConfig,
    label_space: LabelSpace,
    eval_every: int = 1,
    parallel: int = 1,
    log_path=None,
    metrics_log_path=None,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    initial_params: ParameterSet | None = None,
) -> tuple[ParameterSet, list[RoundReport]]:
    """The full communication-round loop; returns final params and reports.

    Deterministic for a fixed config: the sampling stream depends only on
    (seed, round), client update seeds on (seed, round, client id), so
    ablation arms sharing a seed see identical client schedules.
    """
    if fed_cfg.total_clients != dataset.num_clients:
        raise ValueError(
            f"config says {fed_cfg.total_clients} clients, dataset has {dataset.num_clients}"
        )
    if model_cfg.num_classes != dataset.num_classes:
        raise ValueError(
            f"model has {model_cfg.num_classes} classes, dataset has {dataset.num_classes}"
        )
    if model_cfg.feature_dim != dataset.feature_dim:
        raise ValueError(
            f"model expects feature_dim {model_cfg.feature_dim}, dataset has {dataset.feature_dim}"
        )
    setup = TrainerSetup(
        model_cfg=model_cfg,
        mode=fed_cfg.mode,
        label_space=label_space,
        learning_rate=fed_cfg.learning_rate,
        batch_size=fed_cfg.batch_size,
        mask_range=fed_cfg.mask_range,
        calibration=fed_cfg.calibration,
        calibration_refresh=fed_cfg.calibration_refresh,
    )
    global_params = initial_params if initial_params is not None else init_params(model_cfg, fed_cfg.seed)
    sizes = dataset.sizes()
    reports: list[RoundReport] = []

    log_file = open(log_path, "w") if log_path else None
    metrics_file = open(metrics_log_path, "w") if metrics_log_path else None
    try:
        for t in range(1, fed_cfg.rounds + 1):
            started = time.perf_counter()
            srng = np.random.default_rng(np.random.SeedSequence(fed_cfg.seed, spawn_key=(22, t)))
            drawn = sample_clients(sizes, fed_cfg.clients_per_round, fed_cfg.sampling, srng)
            selected = sorted(drawn)

            def run_one(cid: int) -> LocalUpdateResult:
                return local_update(
                    global_params,
                    dataset.shards[cid],
                    fed_cfg.local_epochs,
                    fed_cfg.mode,
                    _client_seed(fed_cfg.seed, t, cid),
                    setup,
                )

            if parallel > 1:
                with ThreadPoolExecutor(max_workers=parallel) as pool:
                    results = list(pool.map(run_one, selected))
            else:
                results = [run_one(cid) for cid in selected]

            sampled_sizes = [sizes[cid] for cid in selected]
            global_params = aggregate([r.params for r in results], sampled_sizes)
            weights = tuple(s / float(np.sum(sampled_sizes)) for s in sampled_sizes)

            metrics = None
            if eval_every > 0 and (t % eval_every == 0 or t == fed_cfg.rounds):
                metrics = evaluate_global(global_params, dataset, model_cfg, fed_cfg.mode, label_space)

            report = RoundReport(
                round_index=t,
                client_ids=tuple(selected),
                client_sizes=tuple(sampled_sizes),
                weights=weights,
                client_losses=tuple(r.final_loss for r in results),
                wall_time=time.perf_counter() - started,
                metrics=metrics,
            )
            reports.append(report)
            if log_file:
                log_file.write(report.to_line() + "\n")
                log_file.flush()
            if metrics_file:
                metrics_file.write(report.metrics_line() + "\n")
                metrics_file.flush()
            if checkpoint_dir and checkpoint_every > 0 and t % checkpoint_every == 0:
                frozen = _frozen_records(label_space)
                save_checkpoint(Path(checkpoint_dir) / f"round_{t:04d}.ckpt", model_cfg, global_params, frozen)
    finally:
        if log_file:
            log_file.close()
        if metrics_file:
            metrics_file.close()
    return global_params, reports


def _frozen_records(label_space: LabelSpace) -> dict[str, np.ndarray]:
    frozen: dict[str, np.ndarray] = {}
    if label_space.matrix is not None:
        frozen["label_embeddings"] = label_space.matrix.rows
    if label_space.states is not None:
        frozen["state_positive"] = label_space.states.positive
        frozen["state_negative"] = label_space.states.negative
    return frozen
