"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. Criterion 8 trains
15 federated runs and dominates the suite's runtime (a few minutes).
Criterion 10 exercises the embedding-exporter CLI and needs the frontend
built first (``cd frontend && npm install && npm run build``).
"""

import math
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from fedlgt import datagen as dg
from fedlgt import federation as fed
from fedlgt import masking as mk
from fedlgt import metrics as mt
from fedlgt import model as md
from fedlgt import tensor as tc
from fedlgt.cli import main as cli_main
from fedlgt.embeddings import (
    coarse_from_fine,
    load_embeddings,
    make_state_embeddings,
    synth_embeddings,
)

REPO_ROOT = Path(__file__).resolve().parent.parent


def report(n: int, text: str) -> None:
    print(f"\n[criterion {n:2d}] PASS: {text}")


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    cfg = md.ModelConfig(
        num_classes=4,
        feature_dim=12,
        embed_dim=8,
        num_feature_tokens=3,
        transformer_layers=1,
        attention_heads=2,
        learnable_label_embeddings=True,
    )
    params = md.init_params(cfg, seed=11)
    rng = np.random.default_rng(12)
    feats = rng.uniform(-1, 1, size=(2, cfg.feature_dim))
    targets = rng.integers(0, 2, size=(2, cfg.num_classes))
    states = np.array(
        [
            [mk.UNKNOWN, mk.UNKNOWN, mk.POSITIVE, mk.NEGATIVE],
            [mk.POSITIVE, mk.UNKNOWN, mk.UNKNOWN, mk.UNKNOWN],
        ]
    )
    state_emb = make_state_embeddings(cfg.embed_dim, seed=13)
    offsets = mk.state_offsets(states, state_emb)

    def loss_fn(ps):
        tokens = tc.add(ps["label_embeddings"], tc.Tensor(offsets))
        logits = md.forward(ps, feats, tokens, cfg)
        return md.masked_bce_loss(logits, targets, states)[0]

    with tc.Tape() as tape:
        watched = tc.ParameterSet({n: tape.watch(n, params[n]) for n in params.names()})
        loss = loss_fn(watched)
    grads = tc.gradients(tape, loss)

    worst = ("", 0.0)
    for name in params.names():
        def scalar(v, name=name):
            return loss_fn(params.replace({name: tc.Tensor(v)})).item()

        numeric = tc.finite_difference(scalar, params[name].data, step=1e-5)
        err = tc.relative_error(grads[name].data, numeric)
        if err > worst[1]:
            worst = (name, err)
        assert err < 1e-4, f"{name}: relative error {err}"
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"gradient check took {elapsed:.1f}s"
    n_params = sum(params[n].size for n in params.names())
    report(1, f"all {len(params.names())} tensors ({n_params} scalars) match central "
              f"differences, worst {worst[0]}={worst[1]:.2e}, {elapsed:.1f}s")


# -- 2 ----------------------------------------------------------------------


def test_criterion_2_camle_exactness():
    cfg = mk.CalibrationConfig(tau=0.5, epsilon=0.02)
    rng = np.random.default_rng(20)
    checked = 0
    for _ in range(1000):
        c = int(rng.integers(1, 33))
        probs = np.round(rng.uniform(0, 1, size=c), 4)  # grid hits 0.48/0.52 exactly
        base = mk.states_from_targets(rng.integers(0, 2, size=c))
        out = mk.calibrate_states(probs, base, cfg)
        expected = (probs >= 0.48) & (probs <= 0.52)
        np.testing.assert_array_equal(out == mk.UNKNOWN, expected)
        checked += int(expected.sum())
    report(2, f"1000 random vectors: calibrated-unknown set == [0.48, 0.52] band exactly "
              f"({checked} in-band entries, boundaries inclusive)")


# -- 3 ----------------------------------------------------------------------


def test_criterion_3_masked_loss_scoping():
    rng = np.random.default_rng(30)
    z0 = rng.uniform(-3, 3, size=(4, 6))
    targets = rng.integers(0, 2, size=(4, 6))
    states = rng.choice([mk.UNKNOWN, mk.POSITIVE, mk.NEGATIVE], size=(4, 6)).astype(np.int8)
    states[0, 0] = mk.UNKNOWN  # at least one active sample
    with tc.Tape() as tape:
        z = tape.watch("logits", tc.Tensor(z0))
        loss, _ = md.masked_bce_loss(z, targets, states)
    g = tc.gradients(tape, loss)["logits"].data
    known = states != mk.UNKNOWN
    assert (g[known] == 0.0).all(), "known-state logits must have exactly zero gradient"

    all_unknown = np.full((4, 6), mk.UNKNOWN)
    loss_all, _ = md.masked_bce_loss(tc.Tensor(z0), targets, all_unknown)
    expected = oracles.full_bce(z0.tolist(), targets.tolist())
    assert abs(loss_all.item() - expected) < 1e-12
    report(3, f"known-class gradients exactly 0; all-unknown loss matches full-BCE oracle "
              f"to {abs(loss_all.item() - expected):.1e} (<1e-12)")


# -- 4 ----------------------------------------------------------------------


def test_criterion_4_aggregation():
    def scalars(vals):
        return [tc.ParameterSet({"w": tc.Tensor(float(v))}) for v in vals]

    rng = np.random.default_rng(40)
    value = rng.standard_normal((5, 4))
    identical = [tc.ParameterSet({"w": tc.Tensor(value)}) for _ in range(3)]
    agg = fed.aggregate(identical, [3, 1, 4])
    assert agg["w"].data.tobytes() == value.tobytes()

    assert fed.aggregate(scalars([0.0, 4.0]), [1, 3])["w"].item() == 3.0
    assert fed.aggregate(scalars([1.0, 2.0, 3.0]), [2, 3, 5])["w"].item() == 2.3

    dataset = dg.generate(dg.DatasetSpec(
        clients=5, classes=4, feature_dim=8,
        cliques=((0, 1), (1, 2), (2, 3), (3, 0), (0, 2)),
        samples_min=5, samples_max=12, test_samples=16, seed=41,
    ))
    cfg = fed.FederationConfig(
        rounds=4, local_epochs=1, total_clients=5, active_fraction=0.6,
        sampling="data-proportional", mode="fedlgt", seed=42, learning_rate=1e-3,
        batch_size=8,
    )
    model_cfg = md.ModelConfig(num_classes=4, feature_dim=8, embed_dim=8,
                               num_feature_tokens=2, transformer_layers=1, attention_heads=2)
    space = fed.LabelSpace(matrix=synth_embeddings(4, 8, seed=43),
                           states=make_state_embeddings(8, seed=43))
    _, reports = fed.run_training(cfg, dataset, model_cfg, space, eval_every=0)
    for r in reports:
        assert abs(sum(r.weights) - 1.0) <= 1e-12
    report(4, "identical-locals exact; 3.0 and 2.3 weighted means exact; weights sum to "
              f"1±1e-12 on all {len(reports)} logged rounds")


# -- 5 ----------------------------------------------------------------------


def test_criterion_5_metrics_oracle():
    rng = np.random.default_rng(50)
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 11))
        c = int(rng.integers(1, 6))
        probs = rng.uniform(0, 1, size=(n, c))
        targets = rng.integers(0, 2, size=(n, c))
        if not (targets == 1).any():
            continue
        checked += 1
        mine = mt.prf1(mt.confusion_counts(probs, targets))
        theirs = oracles.prf1(*oracles.counts(probs.tolist(), targets.tolist()))
        assert mine == theirs
        assert mt.average_precision(probs, targets) == oracles.average_precision(
            probs.tolist(), targets.tolist()
        )

    probs = [[0.9, 0.9], [0.1, 0.9], [0.1, 0.9]]
    targets = [[1, 0], [1, 1], [0, 1]]
    c_p, c_r, c_f1, o_p, o_r, o_f1 = mt.prf1(mt.confusion_counts(probs, targets))
    assert round(c_p, 4) == 0.8333
    assert round(o_f1, 4) == 0.75
    report(5, "prf1 and average_precision equal the brute-force oracle exactly on 100 "
              "instances; hand example C-P=0.8333, O-F1=0.75 reproduced")


# -- 6 ----------------------------------------------------------------------


def test_criterion_6_sampling_distribution():
    rng = np.random.default_rng(60)
    hits = np.zeros(3)
    for _ in range(10_000):
        (cid,) = fed.sample_clients([80, 10, 10], 1, "data-proportional", rng)
        hits[cid] += 1
    prop_freq = hits[0] / 10_000
    assert abs(prop_freq - 0.80) < 0.02

    rng = np.random.default_rng(61)
    hits = np.zeros(3)
    for _ in range(10_000):
        (cid,) = fed.sample_clients([80, 10, 10], 1, "uniform", rng)
        hits[cid] += 1
    uni_dev = float(np.max(np.abs(hits / 10_000 - 1.0 / 3.0)))
    assert uni_dev < 0.02
    report(6, f"data-proportional client-0 frequency {prop_freq:.4f} (0.80±0.02); "
              f"uniform max deviation {uni_dev:.4f} (<0.02) over 10,000 draws")


# -- 7 ----------------------------------------------------------------------


def test_criterion_7_ule_frozenness():
    dataset = dg.generate(dg.DatasetSpec(
        clients=4, classes=6, feature_dim=12,
        cliques=((0, 1), (2, 3), (4, 5), (0, 3)),
        samples_min=6, samples_max=14, test_samples=20, seed=70,
    ))

    def run(mode):
        model_cfg = md.ModelConfig(
            num_classes=6, feature_dim=12, embed_dim=8, num_feature_tokens=2,
            transformer_layers=1, attention_heads=2,
            learnable_label_embeddings=fed.mode_uses_learnable_embeddings(mode),
        )
        states = make_state_embeddings(8, seed=71)
        matrix = synth_embeddings(6, 8, seed=71)
        space = (
            fed.LabelSpace(matrix=matrix, states=states)
            if fed.mode_uses_frozen_embeddings(mode)
            else fed.LabelSpace(states=states)
        )
        cfg = fed.FederationConfig(
            rounds=10, local_epochs=1, total_clients=4, active_fraction=1.0,
            mode=mode, seed=72, learning_rate=1e-3, batch_size=8,
        )
        params, _ = fed.run_training(cfg, dataset, model_cfg, space, eval_every=0)
        return params, space

    space_before = synth_embeddings(6, 8, seed=71).tobytes()
    params, space = run("fedlgt")
    assert space.matrix.tobytes() == space_before, "frozen matrix changed during training"

    params_ctran, _ = run("fedctran")
    init_emb = md.init_params(
        md.ModelConfig(num_classes=6, feature_dim=12, embed_dim=8, num_feature_tokens=2,
                       transformer_layers=1, attention_heads=2,
                       learnable_label_embeddings=True),
        seed=72,
    )["label_embeddings"].data
    delta = float(np.abs(params_ctran["label_embeddings"].data - init_emb).max())
    assert delta > 1e-6, "learnable embeddings did not change"
    report(7, f"ULE byte-identical after a 10-round fedlgt run; fedctran embeddings moved "
              f"(max |delta| = {delta:.2e})")


# -- 8 ----------------------------------------------------------------------

TREND_SEEDS = (0, 1, 2, 3, 4)


def trend_dataset(seed: int) -> dg.FederatedDataset:
    return dg.generate(dg.DatasetSpec(
        clients=20,
        classes=16,
        feature_dim=32,
        cliques=tuple((2 * i, 2 * i + 1) for i in range(8)),  # disjoint class pairs
        samples_min=10,
        samples_max=60,
        power_law_exponent=0.4,
        intra_cooccurrence=1.0,
        background_prob=0.0,
        noise_level=0.1,
        test_samples=400,
        seed=seed,
    ))


def trend_arm(dataset: dg.FederatedDataset, mode: str, seed: int) -> float:
    model_cfg = md.ModelConfig(
        num_classes=16, feature_dim=32, embed_dim=16, num_feature_tokens=4,
        transformer_layers=1, attention_heads=4,
        learnable_label_embeddings=fed.mode_uses_learnable_embeddings(mode),
    )
    states = make_state_embeddings(16, seed=777)
    matrix = synth_embeddings(16, 16, seed=777)
    space = (
        fed.LabelSpace(matrix=matrix, states=states)
        if fed.mode_uses_frozen_embeddings(mode)
        else fed.LabelSpace(states=states)
    )
    cfg = fed.FederationConfig(
        rounds=20, local_epochs=5, total_clients=20, active_fraction=0.5,
        sampling="uniform", mode=mode, seed=seed, learning_rate=3e-3, batch_size=16,
        calibration=mk.CalibrationConfig(tau=0.5, epsilon=0.4999),
    )
    params, _ = fed.run_training(cfg, dataset, model_cfg, space, eval_every=0)
    return fed.evaluate_global(params, dataset, model_cfg, mode, space).c_ap


def test_criterion_8_trend_reproduction():
    started = time.perf_counter()
    ule_wins = 0
    lgt_wins = 0
    rows = []
    for seed in TREND_SEEDS:
        dataset = trend_dataset(seed)
        ctran = trend_arm(dataset, "fedctran", seed)
        ule = trend_arm(dataset, "fedctran+ule", seed)
        lgt = trend_arm(dataset, "fedlgt", seed)
        ule_wins += ule > ctran
        lgt_wins += lgt > ctran
        rows.append(f"seed {seed}: ctran={ctran*100:.2f} ule={ule*100:.2f} lgt={lgt*100:.2f}")
    elapsed = time.perf_counter() - started
    detail = "; ".join(rows)
    assert ule_wins >= 4, f"fedctran+ule beat fedctran only {ule_wins}/5: {detail}"
    assert lgt_wins >= 4, f"fedlgt beat fedctran only {lgt_wins}/5: {detail}"
    assert elapsed < 1800.0, f"benchmark took {elapsed:.0f}s (>30 min)"
    report(8, f"C-AP ordering held: ule>ctran {ule_wins}/5, fedlgt>ctran {lgt_wins}/5 "
              f"in {elapsed:.0f}s. {detail}")


# -- 9 ----------------------------------------------------------------------


def test_criterion_9_end_to_end_determinism(tmp_path):
    config_text = f"""
[dataset]
source = generate
clients = 4
classes = 6
feature_dim = 12
cliques = 0,1;2,3;4,5;0,3
samples_min = 6
samples_max = 14
test_samples = 20
seed = 90

[model]
embed_dim = 8
num_feature_tokens = 2
transformer_layers = 1
attention_heads = 2

[federation]
rounds = 4
local_epochs = 2
active_fraction = 0.75
sampling = data-proportional
mode = fedlgt
seed = 91
learning_rate = 0.001
batch_size = 8

[output]
dir = {tmp_path}/run
"""
    cfg_path = tmp_path / "exp.ini"
    cfg_path.write_text(config_text)
    assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
    ckpt_same = (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    logs_same = (tmp_path / "a" / "metrics.log").read_bytes() == (tmp_path / "b" / "metrics.log").read_bytes()
    table_same = (tmp_path / "a" / "final_metrics.txt").read_bytes() == (tmp_path / "b" / "final_metrics.txt").read_bytes()
    assert ckpt_same and logs_same and table_same
    report(9, "two train runs with identical config/seed: byte-identical checkpoint, "
              "metrics log and final metrics table")


# -- 10 (secondary) ----------------------------------------------------------


def node_cli() -> list[str] | None:
    node = shutil.which("node")
    dist = REPO_ROOT / "frontend" / "dist" / "cli.js"
    if node and dist.exists():
        return [node, str(dist)]
    return None


def test_criterion_10_exporter_roundtrip(tmp_path):
    cli = node_cli()
    assert cli is not None, (
        "exporter not built: run `cd frontend && npm install && npm run build` first"
    )
    classes = tmp_path / "classes.txt"
    classes.write_text("cat\ndog\ncar\nbus\n")
    mapping = tmp_path / "map.txt"
    mapping.write_text("animals: cat, dog\nvehicles: car, bus\n")
    vectors = REPO_ROOT / "frontend" / "fixtures" / "mini_glove.txt"
    fine_out = tmp_path / "fine.ule"
    coarse_out = tmp_path / "coarse.ule"

    run = subprocess.run(
        cli + ["export", "--classes", str(classes), "--encoder", "glove",
               "--glove-vectors", str(vectors), "--out", str(fine_out), "--with-states"],
        capture_output=True, text=True,
    )
    assert run.returncode == 0, run.stderr
    fine = load_embeddings(fine_out)
    assert fine.names == ("cat", "dog", "car", "bus")

    run = subprocess.run(
        cli + ["export", "--mapping", str(mapping), "--encoder", "glove",
               "--glove-vectors", str(vectors), "--coarse", "avg", "--out", str(coarse_out)],
        capture_output=True, text=True,
    )
    assert run.returncode == 0, run.stderr
    coarse = load_embeddings(coarse_out)
    expected = coarse_from_fine(fine, {"animals": ["cat", "dog"], "vehicles": ["car", "bus"]})
    assert coarse.names == expected.names
    assert np.max(np.abs(coarse.rows - expected.rows)) < 1e-6

    states = make_state_embeddings(fine.dim, "zeros-and-file", path=fine_out)
    assert states.unknown.tobytes() == np.zeros(fine.dim).tobytes()
    report(10, "exported files load in the primary; avg-mode coarse export matches "
               "coarse_from_fine to 1e-6; STATES section parses")
