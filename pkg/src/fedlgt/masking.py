"""Per-class state vectors: confidence calibration, random masks, composition.

A state vector assigns every class one of three states. States serialize as
small integers: unknown -1, positive 1, negative 0. Only unknown-state
classes contribute to the training loss; the calibration step forces exactly
the classes the global model is unsure about into the unknown state, so each
client concentrates on what the shared model has not learned yet.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingMatrix, StateEmbeddings

__all__ = [
    "UNKNOWN",
    "POSITIVE",
    "NEGATIVE",
    "CalibrationConfig",
    "states_from_targets",
    "inference_mask",
    "calibrate_states",
    "random_label_mask",
    "state_offsets",
    "compose_masked_embeddings",
]

UNKNOWN = -1
POSITIVE = 1
NEGATIVE = 0

_VALID_STATES = frozenset((UNKNOWN, POSITIVE, NEGATIVE))


def _as_states(states) -> np.ndarray:
    arr = np.asarray(states, dtype=np.int8)
    if not set(np.unique(arr)).issubset(_VALID_STATES):
        raise ValueError(f"state values must be in {sorted(_VALID_STATES)}")
    return arr


@dataclass(frozen=True)
class CalibrationConfig:
    """Threshold and uncertainty margin for confidence calibration."""

    tau: float = 0.5
    epsilon: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 <= self.epsilon < min(self.tau, 1.0 - self.tau):
            raise ValueError(
                f"epsilon must lie in [0, min(tau, 1-tau)), got {self.epsilon} with tau={self.tau}"
            )


def states_from_targets(targets) -> np.ndarray:
    """Known states straight from ground truth: 1 -> positive, 0 -> negative."""
    y = np.asarray(targets)
    if not set(np.unique(y)).issubset({0, 1}):
        raise ValueError("targets must be binary")
    return np.where(y == 1, POSITIVE, NEGATIVE).astype(np.int8)


def inference_mask(num_classes: int, batch: int | None = None) -> np.ndarray:
    """All-unknown states, the composition used at prediction time."""
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    shape = (num_classes,) if batch is None else (batch, num_classes)
    return np.full(shape, UNKNOWN, dtype=np.int8)


def calibrate_states(global_probs, base_states, cfg: CalibrationConfig) -> np.ndarray:
    """Force classes the global model is unsure about into the unknown state.

    A class becomes unknown iff tau - eps <= p_c <= tau + eps (both ends
    inclusive); all other classes keep their base state.
    """
    probs = np.asarray(global_probs, dtype=np.float64)
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    base = _as_states(base_states)
    if probs.shape != base.shape:
        raise ValueError(f"probs shape {probs.shape} != states shape {base.shape}")
    uncertain = (probs >= cfg.tau - cfg.epsilon) & (probs <= cfg.tau + cfg.epsilon)
    return np.where(uncertain, np.int8(UNKNOWN), base)


def random_label_mask(
    targets,
    mask_fraction_range: tuple[float, float],
    rng: np.random.Generator | int,
) -> np.ndarray:
    """Random-mask training states: a seeded fraction of classes goes unknown.

    Draws f uniformly from the range and hides ceil(f * C) uniformly chosen
    classes; the rest mirror the ground-truth targets.
    """
    lo, hi = mask_fraction_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"mask fraction range must satisfy 0 <= lo <= hi <= 1, got {lo}, {hi}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    states = states_from_targets(targets)
    num_classes = states.shape[-1]
    f = lo if lo == hi else rng.uniform(lo, hi)
    n_masked = int(np.ceil(f * num_classes - 1e-12))
    if n_masked > 0:
        hidden = rng.choice(num_classes, size=n_masked, replace=False)
        states[..., hidden] = UNKNOWN
    return states


def state_offsets(states, state_emb: StateEmbeddings) -> np.ndarray:
    """Per-class additive offsets selected by state (unknown rows are zero)."""
    arr = _as_states(states)
    table = np.stack([state_emb.unknown, state_emb.negative, state_emb.positive])
    return table[arr + 1]  # -1/0/1 -> row 0/1/2


def compose_masked_embeddings(
    label_emb: EmbeddingMatrix, states, state_emb: StateEmbeddings
) -> np.ndarray:
    """Masked label embeddings: elementwise sum of label row and state vector.

    `states` may be a single length-C vector or a (batch, C) array; the result
    is (C, d) or (batch, C, d) accordingly. Under the all-unknown mask this is
    exactly the label matrix.
    """
    if label_emb.dim != state_emb.dim:
        raise ValueError(
            f"label width {label_emb.dim} does not match state width {state_emb.dim}"
        )
    arr = _as_states(states)
    if arr.shape[-1] != label_emb.num_classes:
        raise ValueError(
            f"state vector covers {arr.shape[-1]} classes, embeddings have {label_emb.num_classes}"
        )
    return label_emb.rows + state_offsets(arr, state_emb)
