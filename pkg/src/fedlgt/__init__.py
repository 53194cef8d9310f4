"""Desk-scale simulator of federated multi-label image classification.

Clients train a label-guided transformer on private shards; the server
averages parameters weighted by data size. Label tokens come from a fixed,
shared embedding vocabulary, and each client's per-class states are
calibrated from the global model's confidence so local training concentrates
on what the shared model has not learned yet.
"""

from .datagen import DatasetSpec, FederatedDataset, generate, load_dataset, save_dataset
from .embeddings import (
    EmbeddingMatrix,
    StateEmbeddings,
    coarse_from_fine,
    load_embeddings,
    make_state_embeddings,
    synth_embeddings,
    write_embeddings,
)
from .federation import (
    FederationConfig,
    LabelSpace,
    RoundReport,
    aggregate,
    local_update,
    run_training,
    sample_clients,
)
from .masking import (
    CalibrationConfig,
    calibrate_states,
    compose_masked_embeddings,
    inference_mask,
    random_label_mask,
)
from .metrics import MetricsReport, average_precision, confusion_counts, evaluate, prf1
from .model import ModelConfig, forward, init_params, masked_bce_loss, predict
from .tensor import AdamState, ParameterSet, Tape, Tensor, adam_step, gradients

__version__ = "0.1.0"
