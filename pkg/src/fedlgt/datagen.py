"""Synthetic federated multi-label benchmarks and partitioners.

Heterogeneity enters through labels only: each client owns a clique of
classes whose members co-occur, while the class prototype vectors that
build features are shared by everyone. A good global model therefore
exists, and any degradation under federation is attributable to label
distribution and co-occurrence skew. Quantity skew comes from a Zipf-style
rank rule over client sizes.

On-disk layout: a directory with a ``spec`` echo file plus ``client_<k>``
and ``test`` files, each ``FDS1 <n> <feature_dim> <C>`` followed by one
``f1,...,fd|y1,...,yC`` line per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "DatasetSpec",
    "PartitionSpec",
    "Shard",
    "FederatedDataset",
    "generate",
    "partition_existing",
    "save_dataset",
    "load_dataset",
]


class Shard(NamedTuple):
    features: np.ndarray  # (n, feature_dim) float64
    labels: np.ndarray  # (n, C) int8 in {0, 1}

    def __len__(self) -> int:
        return self.features.shape[0]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _shard(features, labels) -> Shard:
    return Shard(
        _frozen(np.ascontiguousarray(features, dtype=np.float64)),
        _frozen(np.ascontiguousarray(labels, dtype=np.int8)),
    )


@dataclass(frozen=True)
class DatasetSpec:
    clients: int
    classes: int
    feature_dim: int
    cliques: tuple[tuple[int, ...], ...]
    samples_min: int = 10
    samples_max: int = 60
    power_law_exponent: float = 0.8
    intra_cooccurrence: float = 0.8
    background_prob: float = 0.05
    noise_level: float = 0.25
    test_samples: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cliques", tuple(tuple(int(c) for c in q) for q in self.cliques))
        if self.clients < 1 or self.classes < 1 or self.feature_dim < 1:
            raise ValueError("clients, classes and feature_dim must be positive")
        if not self.cliques or any(len(q) == 0 for q in self.cliques):
            raise ValueError("need at least one non-empty clique")
        for q in self.cliques:
            bad = [c for c in q if not 0 <= c < self.classes]
            if bad:
                raise ValueError(f"clique {q} references class {bad[0]} outside [0, {self.classes})")
        if not 1 <= self.samples_min <= self.samples_max:
            raise ValueError("need 1 <= samples_min <= samples_max")
        for name in ("intra_cooccurrence", "background_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_level < 0 or self.power_law_exponent < 0 or self.test_samples < 0:
            raise ValueError("noise_level, power_law_exponent and test_samples must be >= 0")

    def clique_of(self, client: int) -> tuple[int, ...]:
        return self.cliques[client % len(self.cliques)]


@dataclass(frozen=True)
class PartitionSpec:
    clients: int
    skew: str  # iid | label-dirichlet
    alpha: float = 1.0
    test_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.skew not in ("iid", "label-dirichlet"):
            raise ValueError(f"unknown skew {self.skew!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class FederatedDataset:
    shards: tuple[Shard, ...]
    test: Shard
    spec: "DatasetSpec | PartitionSpec"

    def __post_init__(self):
        object.__setattr__(self, "shards", tuple(self.shards))
        if any(len(s) == 0 for s in self.shards):
            raise ValueError("every client shard must be non-empty")
        widths = {s.labels.shape[1] for s in self.shards} | {self.test.labels.shape[1]}
        if len(widths) != 1:
            raise ValueError(f"label width differs across shards: {sorted(widths)}")

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def num_classes(self) -> int:
        return self.test.labels.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.test.features.shape[1]

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shards)

    def equals(self, other: "FederatedDataset") -> bool:
        if self.spec != other.spec or len(self.shards) != len(other.shards):
            return False
        pairs = list(zip(self.shards, other.shards)) + [(self.test, other.test)]
        return all(
            a.features.tobytes() == b.features.tobytes()
            and a.labels.tobytes() == b.labels.tobytes()
            for a, b in pairs
        )


def client_sizes(spec: DatasetSpec) -> list[int]:
    """Zipf-style rank rule; exponent 0 makes every client the same size."""
    sizes = []
    for k in range(spec.clients):
        raw = spec.samples_max * (k + 1) ** (-spec.power_law_exponent)
        sizes.append(int(np.clip(round(raw), spec.samples_min, spec.samples_max)))
    return sizes


def class_prototypes(spec: DatasetSpec) -> np.ndarray:
    """Fixed seeded unit vectors shared across clients; one per class."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(7,)))
    protos = rng.standard_normal((spec.classes, spec.feature_dim))
    protos /= np.sqrt((protos * protos).sum(axis=1, keepdims=True))
    return protos


def _draw_sample(
    rng: np.random.Generator, spec: DatasetSpec, clique: Sequence[int], protos: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    y = np.zeros(spec.classes, dtype=np.int8)
    anchor = int(rng.choice(len(clique)))
    y[clique[anchor]] = 1
    for i, c in enumerate(clique):
        if i != anchor and rng.uniform() < spec.intra_cooccurrence:
            y[c] = 1
    if spec.background_prob > 0.0:
        outside = [c for c in range(spec.classes) if c not in clique]
        for c in outside:
            if rng.uniform() < spec.background_prob:
                y[c] = 1
    x = protos[y == 1].sum(axis=0)
    if spec.noise_level > 0.0:
        x = x + spec.noise_level * rng.standard_normal(spec.feature_dim)
    return x, y


def generate(spec: DatasetSpec) -> FederatedDataset:
    """Deterministic synthetic benchmark with label and quantity skew."""
    protos = class_prototypes(spec)
    sizes = client_sizes(spec)
    shards = []
    for k in range(spec.clients):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(8, k)))
        clique = spec.clique_of(k)
        xs = np.empty((sizes[k], spec.feature_dim))
        ys = np.empty((sizes[k], spec.classes), dtype=np.int8)
        for i in range(sizes[k]):
            xs[i], ys[i] = _draw_sample(rng, spec, clique, protos)
        shards.append(_shard(xs, ys))
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(9,)))
    xt = np.empty((spec.test_samples, spec.feature_dim))
    yt = np.empty((spec.test_samples, spec.classes), dtype=np.int8)
    for i in range(spec.test_samples):
        clique = spec.clique_of(int(rng.integers(spec.clients)))
        xt[i], yt[i] = _draw_sample(rng, spec, clique, protos)
    return FederatedDataset(shards=tuple(shards), test=_shard(xt, yt), spec=spec)


def _split_by_proportions(indices: np.ndarray, proportions: np.ndarray) -> list[np.ndarray]:
    """Largest-remainder split of an index array into len(proportions) parts."""
    n = len(indices)
    quotas = proportions * n
    base = np.floor(quotas).astype(int)
    short = n - base.sum()
    if short > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:short]] += 1
    cuts = np.cumsum(base)[:-1]
    return np.split(indices, cuts)


def partition_existing(
    features,
    labels,
    num_clients: int,
    skew: str = "iid",
    alpha: float = 1.0,
    seed: int = 0,
    test_fraction: float = 0.0,
    max_retries: int = 100,
) -> FederatedDataset:
    """Split a centralized dataset into client shards plus an optional test cut.

    iid shuffles uniformly; label-dirichlet draws per-class client proportions
    from Dirichlet(alpha) and routes each sample by its first positive class.
    Redraws (bounded) until no shard is empty.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int8)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features and labels must be 2-D with matching row counts")
    n = x.shape[0]
    spec = PartitionSpec(
        clients=num_clients, skew=skew, alpha=alpha, test_fraction=test_fraction, seed=seed
    )
    n_test = int(round(test_fraction * n))
    if num_clients > n - n_test:
        raise ValueError(f"cannot fill {num_clients} shards from {n - n_test} training samples")

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    for _ in range(max_retries):
        perm = rng.permutation(n)
        test_idx, train_idx = perm[:n_test], perm[n_test:]
        if skew == "iid":
            parts = np.array_split(train_idx, num_clients)
        else:
            first_class = np.argmax(y[train_idx] == 1, axis=1)
            first_class[(y[train_idx] == 1).sum(axis=1) == 0] = -1
            buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
            classes = y.shape[1]
            for c in list(range(classes)) + [-1]:
                members = train_idx[first_class == c]
                if len(members) == 0:
                    continue
                proportions = (
                    np.full(num_clients, 1.0 / num_clients)
                    if c == -1
                    else rng.dirichlet(np.full(num_clients, alpha))
                )
                for k, chunk in enumerate(_split_by_proportions(members, proportions)):
                    buckets[k].append(chunk)
            parts = [
                np.sort(np.concatenate(b)) if b else np.empty(0, dtype=int) for b in buckets
            ]
        if all(len(p) > 0 for p in parts):
            shards = tuple(_shard(x[p], y[p]) for p in parts)
            return FederatedDataset(shards=shards, test=_shard(x[test_idx], y[test_idx]), spec=spec)
    raise RuntimeError(f"could not produce non-empty shards after {max_retries} draws")


# ---------------------------------------------------------------------------
# directory round-trip
# ---------------------------------------------------------------------------

_SPEC_TYPES = {"synthetic": DatasetSpec, "partition": PartitionSpec}


def _spec_to_lines(spec) -> list[str]:
    kind = "synthetic" if isinstance(spec, DatasetSpec) else "partition"
    lines = [f"kind = {kind}"]
    for f in fields(spec):
        value = getattr(spec, f.name)
        if f.name == "cliques":
            value = ";".join(",".join(str(c) for c in q) for q in value)
        lines.append(f"{f.name} = {value}")
    return lines


def _spec_from_lines(lines: list[str]):
    pairs = {}
    for ln in lines:
        if not ln.strip():
            continue
        key, _, value = ln.partition("=")
        pairs[key.strip()] = value.strip()
    kind = pairs.pop("kind", None)
    if kind not in _SPEC_TYPES:
        raise ValueError(f"dataset spec file has unknown kind {kind!r}")
    cls = _SPEC_TYPES[kind]
    kwargs = {}
    for f in fields(cls):
        raw = pairs[f.name]
        if f.name == "cliques":
            kwargs[f.name] = tuple(
                tuple(int(c) for c in q.split(",")) for q in raw.split(";") if q
            )
        elif f.type == "int":
            kwargs[f.name] = int(raw)
        elif f.type == "float":
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)


def _write_shard(path: Path, shard: Shard, num_classes: int) -> None:
    n, dim = shard.features.shape
    lines = [f"FDS1 {n} {dim} {num_classes}"]
    for i in range(n):
        feat = ",".join(repr(float(v)) for v in shard.features[i])
        lab = ",".join(str(int(v)) for v in shard.labels[i])
        lines.append(f"{feat}|{lab}")
    path.write_text("\n".join(lines) + "\n")


def _read_shard(path: Path) -> tuple[Shard, int]:
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty shard file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "FDS1":
        raise ValueError(f"{path}: unsupported shard header {lines[0]!r}")
    n, dim, classes = (int(v) for v in header[1:])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ValueError(f"{path}: truncated shard, expected {n} samples, found {len(body)}")
    feats = np.empty((n, dim))
    labs = np.empty((n, classes), dtype=np.int8)
    for i, ln in enumerate(body):
        feat_part, _, lab_part = ln.partition("|")
        fvals = feat_part.split(",")
        lvals = lab_part.split(",")
        if len(fvals) != dim or len(lvals) != classes:
            raise ValueError(f"{path}: malformed sample line {i}")
        feats[i] = [float(v) for v in fvals]
        labs[i] = [int(v) for v in lvals]
    if not set(np.unique(labs)).issubset({0, 1}):
        raise ValueError(f"{path}: labels must be 0/1")
    return _shard(feats, labs), classes


def save_dataset(ds: FederatedDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "spec").write_text("\n".join(_spec_to_lines(ds.spec)) + "\n")
    for k, shard in enumerate(ds.shards):
        _write_shard(directory / f"client_{k}", shard, ds.num_classes)
    _write_shard(directory / "test", ds.test, ds.num_classes)


def load_dataset(directory) -> FederatedDataset:
    directory = Path(directory)
    spec_path = directory / "spec"
    if not spec_path.exists():
        raise FileNotFoundError(f"{directory}: not a dataset directory (missing spec file)")
    spec = _spec_from_lines(spec_path.read_text().splitlines())
    shards = []
    k = 0
    while (directory / f"client_{k}").exists():
        shard, _ = _read_shard(directory / f"client_{k}")
        shards.append(shard)
        k += 1
    if not shards:
        raise ValueError(f"{directory}: no client shard files")
    test, _ = _read_shard(directory / "test")
    return FederatedDataset(shards=tuple(shards), test=test, spec=spec)
