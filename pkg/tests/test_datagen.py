import numpy as np
import pytest

from fedlgt import datagen as dg


def small_spec(**overrides):
    base = dict(
        clients=4,
        classes=8,
        feature_dim=16,
        cliques=tuple((2 * k, 2 * k + 1) for k in range(4)),
        samples_min=5,
        samples_max=20,
        power_law_exponent=0.7,
        intra_cooccurrence=0.8,
        background_prob=0.05,
        noise_level=0.2,
        test_samples=30,
        seed=0,
    )
    base.update(overrides)
    return dg.DatasetSpec(**base)


class TestSpecValidation:
    def test_clique_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            small_spec(cliques=((0, 99),))

    def test_empty_clique_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            small_spec(cliques=((0, 1), ()))

    def test_probability_bounds(self):
        with pytest.raises(ValueError, match="intra_cooccurrence"):
            small_spec(intra_cooccurrence=1.5)


class TestGenerate:
    def test_disjoint_cliques_stay_disjoint_without_background(self):
        ds = dg.generate(small_spec(background_prob=0.0))
        for k, shard in enumerate(ds.shards):
            clique = {2 * k, 2 * k + 1}
            present = set(np.flatnonzero(shard.labels.any(axis=0)))
            assert present <= clique

    def test_noise_free_single_label_equals_prototype(self):
        spec = small_spec(
            background_prob=0.0, intra_cooccurrence=0.0, noise_level=0.0, cliques=((3,),)
        )
        ds = dg.generate(spec)
        protos = dg.class_prototypes(spec)
        for shard in ds.shards:
            assert (shard.labels[:, 3] == 1).all()
            assert shard.labels.sum() == len(shard)
            for row in shard.features:
                np.testing.assert_array_equal(row, protos[3])

    def test_zero_exponent_gives_equal_sizes(self):
        sizes = dg.client_sizes(small_spec(power_law_exponent=0.0))
        assert len(set(sizes)) == 1

    def test_sizes_follow_power_law_by_ks_distance(self):
        spec = small_spec(clients=60, cliques=((0, 1),), samples_min=5, samples_max=200)
        sizes = np.sort(dg.client_sizes(spec))
        # direct-sampling oracle of the same rank rule at uniform random ranks
        rng = np.random.default_rng(99)
        ranks = rng.integers(1, spec.clients + 1, size=20000)
        oracle = np.clip(
            np.round(spec.samples_max * ranks.astype(float) ** -spec.power_law_exponent),
            spec.samples_min,
            spec.samples_max,
        )
        grid = np.arange(spec.samples_min, spec.samples_max + 1)
        emp = np.searchsorted(sizes, grid, side="right") / len(sizes)
        orc = np.searchsorted(np.sort(oracle), grid, side="right") / len(oracle)
        assert np.max(np.abs(emp - orc)) < 0.1

    def test_deterministic(self):
        spec = small_spec()
        assert dg.generate(spec).equals(dg.generate(spec))

    def test_every_label_vector_has_a_positive(self):
        ds = dg.generate(small_spec())
        for shard in list(ds.shards) + [ds.test]:
            assert (shard.labels.sum(axis=1) >= 1).all()

    def test_test_split_covers_multiple_cliques(self):
        ds = dg.generate(small_spec(test_samples=200))
        present = set(np.flatnonzero(ds.test.labels.any(axis=0)))
        assert len(present) > 2


class TestPartition:
    @pytest.fixture
    def centralized(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((100, 6))
        y = rng.integers(0, 2, size=(100, 4)).astype(np.int8)
        y[:, 0] |= (y.sum(axis=1) == 0).astype(np.int8)  # ensure a positive per sample
        return x, y

    def test_iid_even_split(self, centralized):
        x, y = centralized
        ds = dg.partition_existing(x, y, 2, skew="iid", seed=1)
        assert ds.sizes() == (50, 50)
        assert len(ds.test) == 0

    def test_union_of_shards_and_test_is_input_multiset(self, centralized):
        x, y = centralized
        ds = dg.partition_existing(x, y, 3, skew="label-dirichlet", alpha=0.5, seed=2,
                                   test_fraction=0.2)
        rows = [r.tobytes() for s in list(ds.shards) + [ds.test] for r in s.features]
        assert sorted(rows) == sorted(r.tobytes() for r in x)

    def test_high_alpha_approaches_uniform_proportions(self):
        rng = np.random.default_rng(7)
        classes, clients, per_class = 5, 4, 2000
        y = np.zeros((classes * per_class, classes), dtype=np.int8)
        for c in range(classes):
            y[c * per_class : (c + 1) * per_class, c] = 1
        x = rng.standard_normal((len(y), 3))
        ds = dg.partition_existing(x, y, clients, skew="label-dirichlet", alpha=1000.0, seed=3)
        for c in range(classes):
            counts = np.array([int((s.labels[:, c] == 1).sum()) for s in ds.shards])
            proportions = counts / counts.sum()
            assert np.max(np.abs(proportions - 1.0 / clients)) < 0.05

    def test_low_alpha_skews_classes(self):
        rng = np.random.default_rng(8)
        y = np.zeros((400, 4), dtype=np.int8)
        y[np.arange(400), rng.integers(0, 4, 400)] = 1
        x = rng.standard_normal((400, 3))
        ds = dg.partition_existing(x, y, 4, skew="label-dirichlet", alpha=0.05, seed=4)
        # at least one class should concentrate heavily on one client
        concentrations = []
        for c in range(4):
            counts = np.array([int((s.labels[:, c] == 1).sum()) for s in ds.shards])
            if counts.sum():
                concentrations.append(counts.max() / counts.sum())
        assert max(concentrations) > 0.6

    def test_too_many_clients_rejected(self, centralized):
        x, y = centralized
        with pytest.raises(ValueError, match="shards"):
            dg.partition_existing(x, y, 101)


class TestRoundTrip:
    def test_save_load_bit_exact(self, tmp_path):
        ds = dg.generate(small_spec())
        dg.save_dataset(ds, tmp_path / "data")
        back = dg.load_dataset(tmp_path / "data")
        assert back.equals(ds)
        assert back.spec == ds.spec

    def test_partition_spec_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 4))
        y = np.ones((30, 2), dtype=np.int8)
        ds = dg.partition_existing(x, y, 3, skew="iid", seed=9, test_fraction=0.1)
        dg.save_dataset(ds, tmp_path / "data")
        back = dg.load_dataset(tmp_path / "data")
        assert back.spec == ds.spec
        assert back.equals(ds)

    def test_load_empty_dir_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="spec"):
            dg.load_dataset(tmp_path)

    def test_version_mismatch_rejected(self, tmp_path):
        ds = dg.generate(small_spec())
        dg.save_dataset(ds, tmp_path / "data")
        client0 = tmp_path / "data" / "client_0"
        client0.write_text("FDS9 1 1 1\n0.0|1\n")
        with pytest.raises(ValueError, match="header"):
            dg.load_dataset(tmp_path / "data")

    def test_truncated_file_rejected(self, tmp_path):
        ds = dg.generate(small_spec())
        dg.save_dataset(ds, tmp_path / "data")
        client0 = tmp_path / "data" / "client_0"
        lines = client0.read_text().splitlines()
        client0.write_text("\n".join(lines[:3]) + "\n")
        with pytest.raises(ValueError, match="truncated"):
            dg.load_dataset(tmp_path / "data")
