"""Acceptance gate: one test per release criterion, in order.

The expensive corpus (900 instances, 1500 samples each, default settings)
is built once per session and shared by the classification, completeness,
and salience criteria. Each test prints a [PASS] line with its measured
numbers once its assertions hold; run with ``pytest -s`` to see them.
"""

import json
import time

import numpy as np
import pytest

import tesage.autodiff as ad
from tesage.autodiff import Tensor, backward
from tesage.causal import discover, prune_indirect
from tesage.config import load_config
from tesage.explain import (
    ExplainConfig,
    NodeScores,
    explain_graph,
    histogram_from_rankings,
    integrated_gradients,
    rank_nodes,
)
from tesage.infodyn import DiscreteSeries, TEConfig, transfer_entropy
from tesage.pipeline import run_discover, run_eval, run_explain, run_generate, run_train
from tesage.sage import (
    ModelConfig,
    SageParams,
    forward_from,
    forward_graph,
    label_index,
    mixing_matrix,
    train,
)
from tesage.waveforms import CHANNEL_NAMES, FaultClass, SynthParams, synth_dataset

from .oracles import transfer_entropy_oracle
from .test_autodiff import assert_grad_close, finite_diff


def ok(line):
    print(f"\n[PASS] {line}", flush=True)


def slow_markov(rng, n, stay=0.9):
    x = np.empty(n, dtype=np.int64)
    x[0] = rng.integers(0, 2)
    flips = rng.random(n) > stay
    for t in range(1, n):
        x[t] = x[t - 1] ^ flips[t]
    return x


@pytest.fixture(scope="session")
def big_run():
    """Default-config corpus at acceptance scale plus its trained model."""
    started = time.monotonic()
    params = SynthParams(sample_count=1500, seed=2024)
    manifest = synth_dataset(params, per_class=100)
    graphs = [discover(inst, TEConfig()) for inst in manifest.instances.values()]
    config = ModelConfig(input_dim=1500, seed=2024)
    checkpoint, history = train(graphs, config)
    return {
        "graphs": graphs,
        "checkpoint": checkpoint,
        "history": history,
        "elapsed": time.monotonic() - started,
    }


class TestCriterion1EstimatorOracle:
    def test_te_matches_exhaustive_oracle(self):
        started = time.monotonic()
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(100):
            src = rng.integers(0, 2, 64)
            dst = rng.integers(0, 2, 64)
            got = transfer_entropy(DiscreteSeries(src, 2), DiscreteSeries(dst, 2))
            want = max(0.0, transfer_entropy_oracle(src.tolist(), dst.tolist()))
            worst = max(worst, abs(got - want))
            assert abs(got - want) <= 1e-12
        elapsed = time.monotonic() - started
        assert elapsed < 5.0
        ok(f"criterion 1: TE matches joint-count oracle on 100 pairs, max |diff| {worst:.2e}, {elapsed:.2f}s")


class TestCriterion2CoupledCoin:
    def test_coupled_and_independent_bounds(self):
        started = time.monotonic()
        rng = np.random.default_rng(202)
        src = rng.integers(0, 2, 10000)
        dst = np.empty_like(src)
        dst[0] = 0
        dst[1:] = src[:-1]
        coupled = transfer_entropy(DiscreteSeries(src, 2), DiscreteSeries(dst, 2))
        assert 0.98 <= coupled <= 1.0
        indep = transfer_entropy(
            DiscreteSeries(rng.integers(0, 2, 10000), 2),
            DiscreteSeries(rng.integers(0, 2, 10000), 2),
        )
        assert indep < 0.01
        elapsed = time.monotonic() - started
        assert elapsed < 5.0
        ok(f"criterion 2: coupled-coin TE {coupled:.4f} bits, independent {indep:.5f} bits, {elapsed:.2f}s")


class TestCriterion3DtePruning:
    def test_chain_removal_and_direct_retention(self):
        started = time.monotonic()
        cfg = TEConfig()
        t = 10000
        removed = 0
        retained_direct = 0
        for trial in range(100):
            rng = np.random.default_rng(3000 + trial)
            x = slow_markov(rng, t).astype(float)
            z = np.empty(t)
            z[0] = 0
            z[1:] = np.logical_xor(x[:-1], rng.random(t - 1) < 0.1)
            y = np.empty(t)
            y[0] = 0
            y[1:] = np.logical_xor(z[:-1], rng.random(t - 1) < 0.1)
            channels = np.vstack([x, z, y])
            adjacency = np.zeros((3, 3), dtype=np.int64)
            adjacency[0, 1] = adjacency[1, 2] = adjacency[0, 2] = 1
            pruned = prune_indirect(adjacency, channels, cfg)
            if pruned[0, 2] == 0:
                removed += 1
            if pruned[0, 1] == 1 and pruned[1, 2] == 1:
                retained_direct += 1
        assert removed >= 95
        assert retained_direct >= 95

        # direct coupling with an independent bystander offered as mediator
        kept_with_bystander = 0
        for trial in range(100):
            rng = np.random.default_rng(4000 + trial)
            x = slow_markov(rng, t).astype(float)
            y = np.empty(t)
            y[0] = 0
            y[1:] = np.logical_xor(x[:-1], rng.random(t - 1) < 0.1)
            bystander = slow_markov(rng, t).astype(float)
            channels = np.vstack([x, bystander, y])
            adjacency = np.zeros((3, 3), dtype=np.int64)
            adjacency[0, 2] = adjacency[0, 1] = adjacency[1, 2] = 1
            if prune_indirect(adjacency, channels, cfg)[0, 2] == 1:
                kept_with_bystander += 1
        assert kept_with_bystander >= 95
        elapsed = time.monotonic() - started
        assert elapsed < 120.0
        ok(
            "criterion 3: spurious chain edge removed "
            f"{removed}/100, chain direct edges kept {retained_direct}/100, "
            f"bystander-mediated direct edge kept {kept_with_bystander}/100, {elapsed:.1f}s"
        )


class TestCriterion4GradientFidelity:
    def test_every_op_and_sage_forward(self):
        started = time.monotonic()
        rng = np.random.default_rng(404)

        def check(build_loss, shape, positive=False):
            low, high = (0.3, 1.7) if positive else (-1.2, 1.2)
            x = rng.uniform(low, high, size=shape)
            # keep away from relu kinks for clean finite differences
            x[np.abs(x) < 0.05] = 0.1
            t = Tensor(x, requires_grad=True)
            loss = build_loss(t)
            backward(loss)
            fd = finite_diff(lambda arr: float(build_loss(Tensor(arr)).values), x)
            assert_grad_close(t.grad, fd, rtol=1e-4)

        other = Tensor(rng.uniform(0.5, 1.5, (3, 4)))
        col = Tensor(rng.uniform(0.5, 1.5, (3, 1)))
        square = Tensor(rng.uniform(0.5, 1.5, (4, 4)))
        check(lambda t: ad.sum_all(ad.add(t, other)), (3, 4))
        check(lambda t: ad.sum_all(ad.mul(ad.sub(t, other), other)), (3, 4))
        check(lambda t: ad.sum_all(ad.mul(t, col)), (3, 4))
        check(lambda t: ad.sum_all(ad.scale(t, -1.7)), (3, 4))
        check(lambda t: ad.sum_all(ad.matmul(t, square)), (3, 4))
        check(lambda t: ad.sum_all(ad.relu(t)), (3, 4))
        check(lambda t: ad.sum_all(ad.sigmoid(t)), (3, 4))
        check(lambda t: ad.sum_all(ad.log(t)), (3, 4), positive=True)
        check(lambda t: ad.sum_all(ad.reciprocal(t)), (3, 4), positive=True)
        row_weights = Tensor(rng.uniform(0.5, 1.5, (1, 4)))
        check(lambda t: ad.sum_all(ad.mul(ad.row_mean(t), row_weights)), (3, 4))
        check(lambda t: ad.sum_all(ad.concat_rows([t, other])), (3, 4))
        check(lambda t: ad.softmax_cross_entropy(t, 1), (1, 5))
        drop_rng_seed = 11

        def dropout_loss(t):
            return ad.sum_all(ad.dropout(t, 0.4, np.random.default_rng(drop_rng_seed), train=True))

        check(dropout_loss, (3, 4))

        # random two-layer aggregation forward: gradient of the loss with
        # respect to every parameter and the input features
        config = ModelConfig(input_dim=9, hidden1=7, hidden2=5, head_dims=(4,), classes=9, seed=0)
        params = SageParams.initialize(config, np.random.default_rng(7))
        adjacency = np.zeros((6, 6), dtype=int)
        adjacency[0, 1] = adjacency[2, 3] = adjacency[4, 0] = 1
        mix_values = mixing_matrix(adjacency)
        features = rng.uniform(-1.0, 1.0, (6, 9))

        def graph_loss(tensors, feats):
            p = SageParams(tensors)
            logits = forward_from(Tensor(feats), Tensor(mix_values), p, config)
            return ad.softmax_cross_entropy(logits, 3)

        loss = graph_loss(params.tensors, features)
        backward(loss)
        for name, tensor in params.tensors.items():
            def value(arr, name=name):
                trial = {
                    k: Tensor(arr if k == name else v.values) for k, v in params.tensors.items()
                }
                return float(graph_loss(trial, features).values)

            fd = finite_diff(value, tensor.values)
            assert_grad_close(tensor.grad, fd, rtol=1e-4)

        feat_tensor = Tensor(features, requires_grad=True)
        logits = forward_from(feat_tensor, Tensor(mix_values), params, config)
        backward(ad.softmax_cross_entropy(logits, 3))
        fd = finite_diff(lambda arr: float(graph_loss(params.tensors, arr).values), features)
        assert_grad_close(feat_tensor.grad, fd, rtol=1e-4)

        elapsed = time.monotonic() - started
        assert elapsed < 30.0
        ok(f"criterion 4: all op and 2-layer forward gradients within 1e-4 of finite differences, {elapsed:.1f}s")


class TestCriterion5EndToEndClassification:
    def test_accuracy_and_f1_on_stratified_split(self, big_run):
        final = big_run["history"][-1].test
        assert final.accuracy >= 0.95, f"test accuracy {final.accuracy:.4f} < 0.95"
        assert final.f1 >= 0.95, f"macro F1 {final.f1:.4f} < 0.95"
        assert big_run["elapsed"] < 900.0
        ok(
            f"criterion 5: per_class=100, T=1500 -> test accuracy {final.accuracy:.4f}, "
            f"macro F1 {final.f1:.4f} in {big_run['elapsed']:.0f}s"
        )


class TestCriterion6Determinism:
    def test_two_pipeline_runs_byte_identical(self, tmp_path):
        doc = {
            "seed": 99,
            "dataset": {"per_class": 4, "sample_count": 200},
            "model": {"hidden1": 16, "hidden2": 8, "head_dims": [6], "epochs": 3, "lr": 0.001},
            "explain": {"ig_steps": 6, "mask_epochs": 6},
        }
        outputs = []
        for run in ("a", "b"):
            run_dir = tmp_path / run
            run_dir.mkdir()
            config_path = run_dir / "config.json"
            config_path.write_text(json.dumps(doc))
            cfg = load_config(config_path)
            run_generate(cfg)
            run_discover(cfg)
            run_train(cfg)
            run_eval(cfg)
            run_explain(cfg)
            blobs = {}
            for path in sorted(cfg.paths.graphs_dir.glob("*.graph.json")):
                blobs[f"graphs/{path.name}"] = path.read_bytes()
            for name in ("metrics_history.csv", "explanations.jsonl"):
                blobs[name] = (cfg.paths.reports_dir / name).read_bytes()
            for label in FaultClass:
                name = f"rank_hist_{label.value}.csv"
                blobs[name] = (cfg.paths.reports_dir / name).read_bytes()
            outputs.append(blobs)
        assert outputs[0].keys() == outputs[1].keys()
        mismatched = [k for k in outputs[0] if outputs[0][k] != outputs[1][k]]
        assert not mismatched, f"artifacts differ between runs: {mismatched}"
        ok(
            f"criterion 6: two pipeline runs produced {len(outputs[0])} byte-identical "
            "graph, metric, explanation, and histogram files"
        )


class TestCriterion7IgCompleteness:
    def test_completeness_on_trained_model(self, big_run):
        checkpoint = big_run["checkpoint"]
        graphs = big_run["graphs"][::45][:20]
        assert len(graphs) == 20
        worst = 0.0
        for graph in graphs:
            mix = Tensor(mixing_matrix(graph.adjacency))
            logits = forward_from(Tensor(graph.node_features), mix, checkpoint.params, checkpoint.config)
            target = int(np.argmax(logits.values.ravel()))
            onehot = np.zeros((1, checkpoint.config.classes))
            onehot[0, target] = 1.0

            def forward(x):
                out = forward_from(x, mix, checkpoint.params, checkpoint.config)
                return ad.sum_all(ad.mul(out, Tensor(onehot)))

            baseline = np.zeros_like(graph.node_features)
            attribution = integrated_gradients(forward, graph.node_features, baseline, 200)
            f_x = float(forward(Tensor(graph.node_features)).values)
            f_0 = float(forward(Tensor(baseline)).values)
            gap = abs(attribution.sum() - (f_x - f_0))
            rel = gap / abs(f_x - f_0)
            worst = max(worst, rel)
            assert gap <= 0.01 * abs(f_x - f_0)
        ok(f"criterion 7: IG completeness within 1% on 20 trained-model explanations (worst {worst:.2%})")


class TestCriterion8FusionIntegrity:
    def test_combined_range_column_sums_and_tie_rule(self, tmp_path):
        doc = {
            "seed": 15,
            "dataset": {"per_class": 3, "sample_count": 160},
            "model": {"hidden1": 12, "hidden2": 8, "head_dims": [6], "epochs": 2, "lr": 0.001, "test_split": 0.34},
            "explain": {"ig_steps": 4, "mask_epochs": 4},
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(doc))
        cfg = load_config(config_path)
        run_generate(cfg)
        run_discover(cfg)
        run_train(cfg)
        run_explain(cfg)

        records = [
            json.loads(line)
            for line in (cfg.paths.reports_dir / "explanations.jsonl").read_text().splitlines()
        ]
        assert len(records) == 27
        for record in records:
            combined = np.array(record["combined"])
            assert combined.min() >= 0.0 and combined.max() <= 1.0
            assert sorted(record["ranking"]) == list(range(6))

        by_label = {}
        for record in records:
            by_label.setdefault(record["label"], []).append(record["ranking"])
        for label, rankings in by_label.items():
            hist = histogram_from_rankings(rankings, FaultClass.parse(label))
            np.testing.assert_array_equal(hist.counts.sum(axis=0), np.full(6, len(rankings)))

        # tie rule on constructed vectors
        assert rank_nodes(NodeScores(np.full(6, 0.5), SOURCE_COMBINED)) == [0, 1, 2, 3, 4, 5]
        assert rank_nodes(
            NodeScores(np.array([0.9, 0.1, 0.5, 0.5, 0.2, 0.95]), SOURCE_COMBINED)
        ) == [5, 0, 2, 3, 4, 1]
        assert rank_nodes(
            NodeScores(np.array([0.3, 0.7, 0.7, 0.3, 0.7, 0.1]), SOURCE_COMBINED)
        ) == [1, 2, 4, 0, 3, 5]
        ok(
            "criterion 8: combined scores in [0,1] for all 27 explained graphs, "
            "histogram columns sum to class counts, tie rule verified"
        )


class TestCriterion9FaultedPhaseSalience:
    def test_ag_instances_rank_phase_a_in_top2(self, big_run):
        checkpoint = big_run["checkpoint"]
        ag_graphs = [g for g in big_run["graphs"] if g.label is FaultClass.AG]
        assert len(ag_graphs) == 100
        cfg = ExplainConfig()
        v_a, i_a = CHANNEL_NAMES.index("V_A"), CHANNEL_NAMES.index("I_A")
        hits = 0
        for graph in ag_graphs:
            record = explain_graph(graph, checkpoint, cfg)
            if v_a in record.ranking[:2] or i_a in record.ranking[:2]:
                hits += 1
        assert hits >= 70, f"V_A or I_A in top-2 for only {hits}/100 AG instances"
        ok(f"criterion 9: V_A or I_A in top-2 combined ranks for {hits}/100 AG instances")


class TestCriterion10PermutationInvariance:
    def test_forward_logits_invariant_under_node_permutation(self):
        rng = np.random.default_rng(1010)
        config = ModelConfig(input_dim=20, hidden1=12, hidden2=8, head_dims=(6,), classes=9, seed=0)
        params = SageParams.initialize(config, np.random.default_rng(5))
        worst = 0.0
        for trial in range(20):
            adjacency = (rng.random((6, 6)) < 0.3).astype(np.int64)
            np.fill_diagonal(adjacency, 0)
            adjacency[adjacency.T == 1] = 0  # keep direction dominance
            features = rng.standard_normal((6, 20))
            from tesage.causal import CausalGraphInstance

            graph = CausalGraphInstance(features, adjacency, FaultClass.AB, f"perm-{trial}")
            base = forward_graph(graph, params, config).values
            perm = rng.permutation(6)
            permuted = CausalGraphInstance(
                features[perm], adjacency[np.ix_(perm, perm)], FaultClass.AB, "permuted"
            )
            out = forward_graph(permuted, params, config).values
            worst = max(worst, float(np.abs(out - base).max()))
            np.testing.assert_allclose(out, base, atol=1e-12)
        ok(f"criterion 10: logits invariant under 20 random node permutations (max |diff| {worst:.2e})")
