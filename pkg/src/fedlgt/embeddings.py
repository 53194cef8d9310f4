"""Fixed label embeddings and the three per-class state embeddings.

Label embeddings act as input tokens identifying each class. When used as a
shared, frozen vocabulary they are never touched by training; the baseline
mode instead keeps a learnable copy inside the model parameters. The three
state embeddings (unknown / positive / negative) are always frozen, and
"unknown" is hard-wired to the zero vector.

File format (``ULE1``, shared with the exporter utility)::

    ULE1 <num_classes> <dim>
    <class-name>,<v1>,...,<vdim>
    ...                            # one line per class
    STATES                         # optional trailing section
    positive,<v1>,...,<vdim>
    negative,<v1>,...,<vdim>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "EmbeddingMatrix",
    "StateEmbeddings",
    "EmbeddingFormatError",
    "load_embeddings",
    "write_embeddings",
    "synth_embeddings",
    "coarse_from_fine",
    "make_state_embeddings",
    "project_embeddings",
]


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files."""


def _frozen(rows) -> np.ndarray:
    arr = np.array(rows, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A frozen C x d matrix of per-class label embeddings."""

    names: tuple[str, ...]
    rows: np.ndarray
    provenance: str  # file | synthetic | averaged

    def __post_init__(self):
        rows = _frozen(self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "names", tuple(self.names))
        if rows.ndim != 2:
            raise EmbeddingFormatError(f"embedding rows must be 2-D, got shape {rows.shape}")
        if len(self.names) != rows.shape[0]:
            raise EmbeddingFormatError(
                f"{len(self.names)} class names but {rows.shape[0]} embedding rows"
            )
        if len(set(self.names)) != len(self.names):
            raise EmbeddingFormatError("duplicate class names")
        bad = np.flatnonzero(~np.isfinite(rows).all(axis=1))
        if bad.size:
            raise EmbeddingFormatError(f"non-finite embedding values in row {int(bad[0])}")

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def tobytes(self) -> bytes:
        return self.rows.tobytes()


@dataclass(frozen=True)
class StateEmbeddings:
    """The unknown / positive / negative state vectors; unknown is all zeros."""

    positive: np.ndarray
    negative: np.ndarray
    unknown: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pos = _frozen(self.positive)
        neg = _frozen(self.negative)
        if pos.ndim != 1 or neg.ndim != 1 or pos.shape != neg.shape:
            raise EmbeddingFormatError(
                f"state embeddings must be equal-length vectors, got {pos.shape} and {neg.shape}"
            )
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negative", neg)
        object.__setattr__(self, "unknown", _frozen(np.zeros(pos.shape[0])))

    @property
    def dim(self) -> int:
        return self.positive.shape[0]


def _parse_vector(line: str, width: int, where: str) -> tuple[str, np.ndarray]:
    parts = line.split(",")
    name = parts[0].strip()
    if not name:
        raise EmbeddingFormatError(f"{where}: empty class name")
    if len(parts) - 1 != width:
        raise EmbeddingFormatError(f"{where}: expected {width} values, found {len(parts) - 1}")
    try:
        values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
    except ValueError:
        raise EmbeddingFormatError(f"{where}: unparsable float value") from None
    if not np.isfinite(values).all():
        raise EmbeddingFormatError(f"{where}: non-finite value")
    return name, values


def _read_ule1(path) -> tuple[list[str], np.ndarray, dict[str, np.ndarray] | None]:
    lines = Path(path).read_text().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise EmbeddingFormatError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "ULE1":
        raise EmbeddingFormatError(f"{path}: malformed header {lines[0]!r}")
    try:
        num_classes, dim = int(header[1]), int(header[2])
    except ValueError:
        raise EmbeddingFormatError(f"{path}: malformed header counts {lines[0]!r}") from None
    if num_classes < 1 or dim < 1:
        raise EmbeddingFormatError(f"{path}: header declares C={num_classes}, d={dim}")

    body = lines[1:]
    states_at = next((i for i, ln in enumerate(body) if ln.strip() == "STATES"), None)
    row_lines = body if states_at is None else body[:states_at]
    state_lines = [] if states_at is None else body[states_at + 1:]

    if len(row_lines) != num_classes:
        raise EmbeddingFormatError(
            f"{path}: header declares {num_classes} classes but file has {len(row_lines)} rows"
        )
    names: list[str] = []
    rows = np.empty((num_classes, dim))
    for i, ln in enumerate(row_lines):
        name, vec = _parse_vector(ln, dim, f"{path}: row {i}")
        if name in names:
            raise EmbeddingFormatError(f"{path}: duplicate class name {name!r} at row {i}")
        names.append(name)
        rows[i] = vec

    states = None
    if states_at is not None:
        if len(state_lines) != 2:
            raise EmbeddingFormatError(f"{path}: STATES section must hold exactly 2 rows")
        states = {}
        for i, ln in enumerate(state_lines):
            name, vec = _parse_vector(ln, dim, f"{path}: state row {i}")
            states[name] = vec
        if set(states) != {"positive", "negative"}:
            raise EmbeddingFormatError(
                f"{path}: STATES rows must be named positive/negative, got {sorted(states)}"
            )
    return names, rows, states


def load_embeddings(path) -> EmbeddingMatrix:
    """Read a ULE1 file; dimensions come from its header."""
    names, rows, _ = _read_ule1(path)
    return EmbeddingMatrix(names=tuple(names), rows=rows, provenance="file")


def load_state_rows(path) -> dict[str, np.ndarray]:
    names, _, states = _read_ule1(path)
    if states is None:
        raise EmbeddingFormatError(f"{path}: file has no STATES section")
    return states


def write_embeddings(path, matrix: EmbeddingMatrix, states: StateEmbeddings | None = None) -> None:
    """Write a ULE1 file; floats use shortest round-trip decimal form."""
    out = [f"ULE1 {matrix.num_classes} {matrix.dim}"]
    for name, row in zip(matrix.names, matrix.rows):
        out.append(name + "," + ",".join(repr(float(v)) for v in row))
    if states is not None:
        if states.dim != matrix.dim:
            raise EmbeddingFormatError(
                f"state width {states.dim} does not match embedding width {matrix.dim}"
            )
        out.append("STATES")
        out.append("positive," + ",".join(repr(float(v)) for v in states.positive))
        out.append("negative," + ",".join(repr(float(v)) for v in states.negative))
    Path(path).write_text("\n".join(out) + "\n")


def synth_embeddings(num_classes: int, dim: int, seed: int) -> EmbeddingMatrix:
    """Deterministic unit-norm rows; mutually orthogonal whenever dim >= C.

    Stands in for text-encoder embeddings so experiments run standalone.
    """
    if num_classes < 1 or dim < 1:
        raise ValueError("num_classes and dim must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))
    rows = rng.standard_normal((num_classes, dim))
    if dim >= num_classes:
        for _ in range(2):  # two Gram-Schmidt sweeps for clean orthogonality
            for i in range(num_classes):
                for j in range(i):
                    rows[i] -= (rows[i] @ rows[j]) * rows[j]
                rows[i] /= math.sqrt(rows[i] @ rows[i])
    else:
        rows /= np.sqrt((rows * rows).sum(axis=1, keepdims=True))
    names = tuple(f"class_{c}" for c in range(num_classes))
    return EmbeddingMatrix(names=names, rows=rows, provenance="synthetic")


def coarse_from_fine(
    fine: EmbeddingMatrix, mapping: Mapping[str, Sequence[int | str]]
) -> EmbeddingMatrix:
    """Average fine-class rows into coarse-class rows.

    Mapping keys are coarse class names (in output order); values list fine
    classes by row index or by name.
    """
    if not mapping:
        raise ValueError("mapping must define at least one coarse class")
    index = {name: i for i, name in enumerate(fine.names)}
    out = np.empty((len(mapping), fine.dim))
    for c, (coarse_name, members) in enumerate(mapping.items()):
        if len(members) == 0:
            raise ValueError(f"coarse class {coarse_name!r} maps to no fine classes")
        ids = []
        for m in members:
            if isinstance(m, str):
                if m not in index:
                    raise KeyError(f"unknown fine class name {m!r}")
                ids.append(index[m])
            else:
                if not 0 <= int(m) < fine.num_classes:
                    raise IndexError(f"fine class id {m} out of range [0, {fine.num_classes})")
                ids.append(int(m))
        out[c] = fine.rows[ids].mean(axis=0)
    return EmbeddingMatrix(names=tuple(mapping), rows=out, provenance="averaged")


def make_state_embeddings(
    dim: int, source: str = "zeros-and-synthetic", *, path=None, seed: int = 0
) -> StateEmbeddings:
    """Build the three state vectors; unknown is always exactly zero."""
    if source == "zeros-and-synthetic":
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(102,)))
        pos = rng.standard_normal(dim)
        neg = rng.standard_normal(dim)
        pos /= math.sqrt(pos @ pos)
        neg /= math.sqrt(neg @ neg)
        return StateEmbeddings(positive=pos, negative=neg)
    if source == "zeros-and-file":
        if path is None:
            raise ValueError("source 'zeros-and-file' requires a path")
        states = load_state_rows(path)
        if states["positive"].shape[0] != dim:
            raise EmbeddingFormatError(
                f"state width {states['positive'].shape[0]} does not match requested dim {dim}"
            )
        return StateEmbeddings(positive=states["positive"], negative=states["negative"])
    raise ValueError(f"unknown state-embedding source {source!r}")


def project_embeddings(
    matrix: EmbeddingMatrix, states: StateEmbeddings, width: int, seed: int = 0
) -> tuple[EmbeddingMatrix, StateEmbeddings]:
    """Map embeddings to the model token width with one fixed seeded projection.

    Applied identically to label and state rows so their sum structure is
    preserved; the zero "unknown" vector stays zero. No-op when widths match.
    """
    if matrix.dim != states.dim:
        raise EmbeddingFormatError(
            f"label width {matrix.dim} does not match state width {states.dim}"
        )
    if matrix.dim == width:
        return matrix, states
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(103, matrix.dim, width)))
    proj = rng.standard_normal((matrix.dim, width)) / math.sqrt(matrix.dim)
    projected = EmbeddingMatrix(
        names=matrix.names, rows=matrix.rows @ proj, provenance=matrix.provenance
    )
    return projected, StateEmbeddings(positive=states.positive @ proj, negative=states.negative @ proj)
