"""Experiment configuration: flat key = value sections, strictly validated.

The canonical serialization (``canonical_dumps``) writes sections and keys in
a fixed order and omits anything not applicable to the chosen sources, so a
parsed config re-serializes to a form that re-parses to an equal config.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .datagen import DatasetSpec, FederatedDataset, generate, load_dataset
from .embeddings import (
    EmbeddingMatrix,
    StateEmbeddings,
    load_embeddings,
    coarse_from_fine,
    make_state_embeddings,
    load_state_rows,
    project_embeddings,
    synth_embeddings,
)
from .federation import (
    FederationConfig,
    LabelSpace,
    mode_uses_frozen_embeddings,
    mode_uses_label_tokens,
    mode_uses_learnable_embeddings,
    MODES,
)
from .masking import CalibrationConfig
from .model import BACKBONES, ModelConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "canonical_dumps",
    "parse_mapping",
    "resolve_dataset",
    "build_model_config",
    "build_label_space",
    "build_federation_config",
]

ARM_ORDER = ("fedctran", "fedctran+camle", "fedctran+ule", "fedlgt")
ARM_LABELS = {
    "fedctran": "FedC-Tran",
    "fedctran+camle": "FedC-Tran + CA-MLE",
    "fedctran+ule": "FedC-Tran + ULE",
    "fedlgt": "Ours",
}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class ModelSettings:
    embed_dim: int = 32
    num_feature_tokens: int = 4
    transformer_layers: int = 2
    attention_heads: int = 4
    backbone: str = "identity-features"
    positional_encoding: bool = True

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"model.backbone must be one of {BACKBONES}")


@dataclass(frozen=True)
class FederationSettings:
    rounds: int = 20
    local_epochs: int = 5
    active_fraction: float = 0.5
    sampling: str = "data-proportional"
    mode: str = "fedlgt"
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 16
    mask_low: float = 0.0
    mask_high: float = 1.0
    calibration_refresh: str = "batch"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"federation.mode must be one of {MODES}")


@dataclass(frozen=True)
class EmbeddingSettings:
    source: str = "synthetic"  # synthetic | file | averaged
    seed: int = 0
    path: str = ""
    fine_path: str = ""
    mapping_path: str = ""
    state_source: str = "synthetic"  # synthetic | file
    state_seed: int = 0

    def __post_init__(self):
        if self.source not in ("synthetic", "file", "averaged"):
            raise ConfigError(f"embeddings.source must be synthetic, file or averaged")
        if self.state_source not in ("synthetic", "file"):
            raise ConfigError("embeddings.state_source must be synthetic or file")
        used = {
            "synthetic": {"path": False, "fine_path": False, "mapping_path": False},
            "file": {"path": True, "fine_path": False, "mapping_path": False},
            "averaged": {"path": False, "fine_path": True, "mapping_path": True},
        }[self.source]
        for key, required in used.items():
            value = getattr(self, key)
            if required and not value:
                raise ConfigError(f"embeddings.source={self.source} requires embeddings.{key}")
            if not required and value:
                raise ConfigError(
                    f"embeddings.{key} conflicts with embeddings.source={self.source}; "
                    "exactly one embedding source may be configured"
                )
        if self.state_source == "file" and self.source == "synthetic":
            raise ConfigError("embeddings.state_source=file needs a file or averaged source")


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "runs/experiment"
    eval_every: int = 1
    checkpoint_every: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_source: str  # generate | path
    dataset_spec: DatasetSpec | None
    dataset_path: str
    model: ModelSettings
    federation: FederationSettings
    calibration: CalibrationConfig
    embeddings: EmbeddingSettings
    output: OutputSettings
    ablate_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.dataset_source not in ("generate", "path"):
            raise ConfigError("dataset.source must be generate or path")
        if self.dataset_source == "generate" and self.dataset_spec is None:
            raise ConfigError("dataset.source=generate needs the synthetic spec keys")
        if self.dataset_source == "path" and not self.dataset_path:
            raise ConfigError("dataset.source=path needs dataset.path")
        if len(self.ablate_seeds) < 1:
            raise ConfigError("ablate.seeds must list at least one seed")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_DATASET_KEYS = {
    "source", "path", "clients", "classes", "feature_dim", "cliques", "samples_min",
    "samples_max", "power_law_exponent", "intra_cooccurrence", "background_prob",
    "noise_level", "test_samples", "seed",
}


def _get_typed(section, key, kind, default):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing required key {section.name}.{key}")
        return default
    raw = section[key].strip()
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{section.name}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _check_keys(section, allowed: set[str]) -> None:
    unknown = set(section.keys()) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section.name}]: {sorted(unknown)}")


def _parse_cliques(raw: str) -> tuple[tuple[int, ...], ...]:
    try:
        return tuple(
            tuple(int(c) for c in group.split(",") if c.strip() != "")
            for group in raw.split(";")
            if group.strip() != ""
        )
    except ValueError:
        raise ConfigError(f"dataset.cliques: cannot parse {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    known_sections = {"dataset", "model", "federation", "calibration", "embeddings", "output", "ablate"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    if "dataset" not in parser:
        raise ConfigError("config must have a [dataset] section")

    ds = parser["dataset"]
    _check_keys(ds, _DATASET_KEYS)
    source = _get_typed(ds, "source", str, "generate")
    spec = None
    if source == "generate":
        spec = DatasetSpec(
            clients=_get_typed(ds, "clients", int, None),
            classes=_get_typed(ds, "classes", int, None),
            feature_dim=_get_typed(ds, "feature_dim", int, None),
            cliques=_parse_cliques(_get_typed(ds, "cliques", str, None)),
            samples_min=_get_typed(ds, "samples_min", int, 10),
            samples_max=_get_typed(ds, "samples_max", int, 60),
            power_law_exponent=_get_typed(ds, "power_law_exponent", float, 0.8),
            intra_cooccurrence=_get_typed(ds, "intra_cooccurrence", float, 0.8),
            background_prob=_get_typed(ds, "background_prob", float, 0.05),
            noise_level=_get_typed(ds, "noise_level", float, 0.25),
            test_samples=_get_typed(ds, "test_samples", int, 200),
            seed=_get_typed(ds, "seed", int, 0),
        )
    dataset_path = _get_typed(ds, "path", str, "")
    if source == "path" and not dataset_path:
        raise ConfigError("dataset.source=path requires dataset.path")

    def section(name):
        return parser[name] if name in parser else parser["DEFAULT"]

    mo = section("model")
    if "model" in parser:
        _check_keys(mo, {"embed_dim", "num_feature_tokens", "transformer_layers",
                         "attention_heads", "backbone", "positional_encoding"})
    model = ModelSettings(
        embed_dim=_get_typed(mo, "embed_dim", int, 32),
        num_feature_tokens=_get_typed(mo, "num_feature_tokens", int, 4),
        transformer_layers=_get_typed(mo, "transformer_layers", int, 2),
        attention_heads=_get_typed(mo, "attention_heads", int, 4),
        backbone=_get_typed(mo, "backbone", str, "identity-features"),
        positional_encoding=_get_typed(mo, "positional_encoding", bool, True),
    )

    fe = section("federation")
    if "federation" in parser:
        _check_keys(fe, {"rounds", "local_epochs", "active_fraction", "sampling", "mode",
                         "seed", "learning_rate", "batch_size", "mask_low", "mask_high",
                         "calibration_refresh"})
    federation = FederationSettings(
        rounds=_get_typed(fe, "rounds", int, 20),
        local_epochs=_get_typed(fe, "local_epochs", int, 5),
        active_fraction=_get_typed(fe, "active_fraction", float, 0.5),
        sampling=_get_typed(fe, "sampling", str, "data-proportional"),
        mode=_get_typed(fe, "mode", str, "fedlgt"),
        seed=_get_typed(fe, "seed", int, 0),
        learning_rate=_get_typed(fe, "learning_rate", float, 1e-4),
        batch_size=_get_typed(fe, "batch_size", int, 16),
        mask_low=_get_typed(fe, "mask_low", float, 0.0),
        mask_high=_get_typed(fe, "mask_high", float, 1.0),
        calibration_refresh=_get_typed(fe, "calibration_refresh", str, "batch"),
    )

    ca = section("calibration")
    if "calibration" in parser:
        _check_keys(ca, {"tau", "epsilon"})
    try:
        calibration = CalibrationConfig(
            tau=_get_typed(ca, "tau", float, 0.5),
            epsilon=_get_typed(ca, "epsilon", float, 0.02),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    em = section("embeddings")
    if "embeddings" in parser:
        _check_keys(em, {"source", "seed", "path", "fine_path", "mapping_path",
                         "state_source", "state_seed"})
    embeddings = EmbeddingSettings(
        source=_get_typed(em, "source", str, "synthetic"),
        seed=_get_typed(em, "seed", int, 0),
        path=_get_typed(em, "path", str, ""),
        fine_path=_get_typed(em, "fine_path", str, ""),
        mapping_path=_get_typed(em, "mapping_path", str, ""),
        state_source=_get_typed(em, "state_source", str, "synthetic"),
        state_seed=_get_typed(em, "state_seed", int, 0),
    )

    ou = section("output")
    if "output" in parser:
        _check_keys(ou, {"dir", "eval_every", "checkpoint_every"})
    output = OutputSettings(
        dir=_get_typed(ou, "dir", str, "runs/experiment"),
        eval_every=_get_typed(ou, "eval_every", int, 1),
        checkpoint_every=_get_typed(ou, "checkpoint_every", int, 0),
    )

    ab = section("ablate")
    if "ablate" in parser:
        _check_keys(ab, {"seeds"})
    raw_seeds = _get_typed(ab, "seeds", str, "0,1,2")
    try:
        ablate_seeds = tuple(int(s) for s in raw_seeds.split(",") if s.strip() != "")
    except ValueError:
        raise ConfigError(f"ablate.seeds: cannot parse {raw_seeds!r}") from None

    try:
        return ExperimentConfig(
            dataset_source=source,
            dataset_spec=spec,
            dataset_path=dataset_path,
            model=model,
            federation=federation,
            calibration=calibration,
            embeddings=embeddings,
            output=output,
            ablate_seeds=ablate_seeds,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())


def canonical_dumps(cfg: ExperimentConfig) -> str:
    """Fixed-order serialization that re-parses to an equal config."""
    lines: list[str] = ["[dataset]", f"source = {cfg.dataset_source}"]
    if cfg.dataset_path:
        lines.append(f"path = {cfg.dataset_path}")
    if cfg.dataset_source == "generate":
        s = cfg.dataset_spec
        cliques = ";".join(",".join(str(c) for c in q) for q in s.cliques)
        lines += [
            f"clients = {s.clients}",
            f"classes = {s.classes}",
            f"feature_dim = {s.feature_dim}",
            f"cliques = {cliques}",
            f"samples_min = {s.samples_min}",
            f"samples_max = {s.samples_max}",
            f"power_law_exponent = {s.power_law_exponent!r}",
            f"intra_cooccurrence = {s.intra_cooccurrence!r}",
            f"background_prob = {s.background_prob!r}",
            f"noise_level = {s.noise_level!r}",
            f"test_samples = {s.test_samples}",
            f"seed = {s.seed}",
        ]
    m = cfg.model
    lines += [
        "",
        "[model]",
        f"embed_dim = {m.embed_dim}",
        f"num_feature_tokens = {m.num_feature_tokens}",
        f"transformer_layers = {m.transformer_layers}",
        f"attention_heads = {m.attention_heads}",
        f"backbone = {m.backbone}",
        f"positional_encoding = {str(m.positional_encoding).lower()}",
    ]
    f = cfg.federation
    lines += [
        "",
        "[federation]",
        f"rounds = {f.rounds}",
        f"local_epochs = {f.local_epochs}",
        f"active_fraction = {f.active_fraction!r}",
        f"sampling = {f.sampling}",
        f"mode = {f.mode}",
        f"seed = {f.seed}",
        f"learning_rate = {f.learning_rate!r}",
        f"batch_size = {f.batch_size}",
        f"mask_low = {f.mask_low!r}",
        f"mask_high = {f.mask_high!r}",
        f"calibration_refresh = {f.calibration_refresh}",
    ]
    c = cfg.calibration
    lines += ["", "[calibration]", f"tau = {c.tau!r}", f"epsilon = {c.epsilon!r}"]
    e = cfg.embeddings
    lines += ["", "[embeddings]", f"source = {e.source}"]
    if e.source == "synthetic":
        lines.append(f"seed = {e.seed}")
    elif e.source == "file":
        lines.append(f"path = {e.path}")
    else:
        lines += [f"fine_path = {e.fine_path}", f"mapping_path = {e.mapping_path}"]
    lines.append(f"state_source = {e.state_source}")
    if e.state_source == "synthetic":
        lines.append(f"state_seed = {e.state_seed}")
    o = cfg.output
    lines += [
        "",
        "[output]",
        f"dir = {o.dir}",
        f"eval_every = {o.eval_every}",
        f"checkpoint_every = {o.checkpoint_every}",
        "",
        "[ablate]",
        "seeds = " + ",".join(str(s) for s in cfg.ablate_seeds),
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# turning a config into runnable pieces
# ---------------------------------------------------------------------------


def parse_mapping(path) -> dict[str, list]:
    """Coarse-from-fine mapping file: one `coarse: fine1, fine2, ...` per line."""
    mapping: dict[str, list] = {}
    for i, raw in enumerate(Path(path).read_text().splitlines()):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        coarse, sep, rest = line.partition(":")
        if not sep or not coarse.strip():
            raise ConfigError(f"{path}: line {i + 1}: expected 'coarse: fine, fine, ...'")
        members = [m.strip() for m in rest.split(",") if m.strip()]
        if not members:
            raise ConfigError(f"{path}: line {i + 1}: no fine classes listed")
        coarse = coarse.strip()
        if coarse in mapping:
            raise ConfigError(f"{path}: duplicate coarse class {coarse!r}")
        mapping[coarse] = [int(m) if m.lstrip("-").isdigit() else m for m in members]
    if not mapping:
        raise ConfigError(f"{path}: empty mapping file")
    return mapping


def resolve_dataset(cfg: ExperimentConfig) -> FederatedDataset:
    if cfg.dataset_source == "path":
        return load_dataset(cfg.dataset_path)
    return generate(cfg.dataset_spec)


def build_model_config(cfg: ExperimentConfig, dataset: FederatedDataset, mode: str) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        num_classes=dataset.num_classes,
        feature_dim=dataset.feature_dim,
        embed_dim=m.embed_dim,
        num_feature_tokens=m.num_feature_tokens,
        transformer_layers=m.transformer_layers,
        attention_heads=m.attention_heads,
        backbone=m.backbone,
        learnable_label_embeddings=mode_uses_learnable_embeddings(mode),
        positional_encoding=m.positional_encoding,
    )


def _load_source_matrix(e: EmbeddingSettings, num_classes: int, embed_dim: int) -> EmbeddingMatrix:
    if e.source == "synthetic":
        return synth_embeddings(num_classes, embed_dim, seed=e.seed)
    if e.source == "file":
        return load_embeddings(e.path)
    fine = load_embeddings(e.fine_path)
    return coarse_from_fine(fine, parse_mapping(e.mapping_path))


def build_label_space(cfg: ExperimentConfig, mode: str, model_cfg: ModelConfig) -> LabelSpace:
    """Assemble the frozen embeddings a mode needs, projecting widths if needed."""
    if not mode_uses_label_tokens(mode):
        return LabelSpace()
    e = cfg.embeddings
    matrix = _load_source_matrix(e, model_cfg.num_classes, model_cfg.embed_dim)
    if e.state_source == "file":
        states_path = e.path if e.source == "file" else e.fine_path
        rows = load_state_rows(states_path)
        states = StateEmbeddings(positive=rows["positive"], negative=rows["negative"])
    else:
        states = make_state_embeddings(matrix.dim, "zeros-and-synthetic", seed=e.state_seed)
    matrix, states = project_embeddings(matrix, states, model_cfg.embed_dim, seed=e.seed)
    if mode_uses_frozen_embeddings(mode):
        if matrix.num_classes != model_cfg.num_classes:
            raise ConfigError(
                f"embedding matrix has {matrix.num_classes} classes, dataset has "
                f"{model_cfg.num_classes}"
            )
        return LabelSpace(matrix=matrix, states=states)
    return LabelSpace(matrix=None, states=states)


def build_federation_config(
    cfg: ExperimentConfig,
    dataset: FederatedDataset,
    mode: str | None = None,
    seed: int | None = None,
) -> FederationConfig:
    f = cfg.federation
    return FederationConfig(
        rounds=f.rounds,
        local_epochs=f.local_epochs,
        total_clients=dataset.num_clients,
        active_fraction=f.active_fraction,
        sampling=f.sampling,
        mode=f.mode if mode is None else mode,
        seed=f.seed if seed is None else seed,
        learning_rate=f.learning_rate,
        batch_size=f.batch_size,
        mask_range=(f.mask_low, f.mask_high),
        calibration=cfg.calibration,
        calibration_refresh=f.calibration_refresh,
    )
