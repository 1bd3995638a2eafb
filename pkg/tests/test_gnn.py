import json
import math

import numpy as np
import pytest

from nctma.encoding import EncodedGraph, encode
from nctma.experiments import label_network, train_sample
from nctma.gnn import (
    GraphBatch,
    ModelParams,
    ShapeMismatch,
    TrainConfig,
    TrainSample,
    forward,
    forward_batch,
    forward_with_iterations,
    gradients,
    load_model,
    loss,
    loss_and_gradients,
    model_to_dict,
    save_model,
    train_epochs,
)
from nctma.network import generate_dataset


def permute_graph(g: EncodedGraph, perm: np.ndarray) -> EncodedGraph:
    """Node i of ``g`` becomes node perm[i]."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return EncodedGraph(g.node_type[inv], g.features[inv], perm[g.edges],
                        {key: int(perm[v]) for key, v in g.cut_index.items()},
                        dict(g.flow_path_len), g.network_id)


@pytest.fixture(scope="module")
def small_nets():
    return [label_network(n) for n in generate_dataset(12, 5, servers=(2, 5), flows=(1, 6))]


@pytest.fixture(scope="module")
def graph(small_nets):
    return next(encode(n) for n in small_nets if len(encode(n).cut_index) >= 3)


class TestForward:
    def test_zero_weights_give_one_half(self, graph):
        for attention in (True, False):
            probs = forward(ModelParams.zeros(8, 4, attention), graph)
            assert probs and all(p == 0.5 for p in probs.values())

    def test_zero_iterations_same_for_every_cut(self, graph):
        params = ModelParams.initialize(16, 0, seed=3)
        values = set(forward(params, graph).values())
        assert len(values) == 1

    def test_probabilities_strictly_inside(self, graph):
        probs = np.array(list(forward(ModelParams.initialize(16, 4, seed=1), graph).values()))
        assert np.all((probs > 0) & (probs < 1))

    @pytest.mark.parametrize("attention", [True, False])
    def test_node_permutation_equivariance(self, graph, attention):
        params = ModelParams.initialize(16, 5, attention, seed=2)
        perm = np.random.default_rng(0).permutation(graph.num_nodes)
        a = forward(params, graph)
        b = forward(params, permute_graph(graph, perm))
        assert a.keys() == b.keys()
        for key in a:
            assert b[key] == pytest.approx(a[key], abs=1e-12)

    def test_batch_equals_single(self, small_nets):
        params = ModelParams.initialize(16, 4, seed=5)
        graphs = [encode(n) for n in small_nets]
        batch = GraphBatch.build(graphs)
        joint = batch.cut_probabilities(forward_batch(params, batch))
        for g, probs in zip(graphs, joint):
            single = forward(params, g)
            for key in single:
                assert probs[key] == pytest.approx(single[key], abs=1e-12)

    def test_iteration_limit(self, graph):
        params = ModelParams.initialize(16, 4, seed=5)
        assert forward_with_iterations(params, graph, 4) == forward(params, graph)
        assert forward_with_iterations(params, graph, 1) != forward(params, graph)
        assert all(p == 0.5 for p in
                   forward_with_iterations(ModelParams.zeros(16, 4), graph, 0).values())
        for bad in (-1, 5):
            with pytest.raises(ValueError):
                forward_with_iterations(params, graph, bad)

    def test_shape_mismatch(self, graph):
        params = ModelParams.initialize(8, 2)
        params.tensors["msg_w"] = np.zeros((8, 7))
        with pytest.raises(ShapeMismatch, match="msg_w"):
            params.check()


class TestLoss:
    def test_examples(self):
        assert loss({0: 0.5, 1: 0.5}, {0: 1, 1: 0}) == pytest.approx(math.log(2), abs=1e-12)
        assert loss({3: 0.9}, {3: 0}) == pytest.approx(2.3025851, abs=1e-7)
        assert loss({3: 1.0}, {3: 1}) == pytest.approx(0.0, abs=1e-11)

    def test_clamped_at_zero_probability(self):
        assert loss({0: 0.0}, {0: 1}) == pytest.approx(-math.log(1e-12))

    def test_key_mismatch(self):
        with pytest.raises(KeyError):
            loss({0: 0.5}, {1: 0})


def finite_difference_check(params, sample, probes, rng, h=1e-5):
    _, grads = loss_and_gradients(params, [sample])
    worst = 0.0
    names = sorted(params.tensors)
    for _ in range(probes):
        name = names[rng.integers(len(names))]
        arr = params.tensors[name]
        idx = tuple(int(rng.integers(d)) for d in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        up = loss_and_gradients(params, [sample])[0]
        arr[idx] = old - h
        down = loss_and_gradients(params, [sample])[0]
        arr[idx] = old
        numeric = (up - down) / (2 * h)
        analytic = grads[name][idx]
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    return worst


class TestGradients:
    @pytest.mark.parametrize("attention", [True, False])
    def test_finite_differences(self, small_nets, attention):
        net = next(n for n in small_nets if len(encode(n).cut_index) >= 3)
        sample = train_sample(net)
        params = ModelParams.initialize(16, 3, attention, seed=11)
        # random biases so that no gradient is trivially zero
        rng = np.random.default_rng(4)
        for name, arr in params.tensors.items():
            arr += rng.normal(0, 0.1, arr.shape)
        assert finite_difference_check(params, sample, 25, np.random.default_rng(9)) <= 1e-4

    def test_saturated_fit_has_zero_gradient(self, graph):
        params = ModelParams.initialize(8, 2, seed=0)
        params.tensors["out_w2"][:] = 0.0
        params.tensors["out_b2"][:] = 100.0
        sample = TrainSample(graph, {v: 1 for v in graph.cut_index.values()})
        for g in gradients(params, sample).values():
            assert not np.any(g)

    def test_deterministic(self, graph):
        params = ModelParams.initialize(8, 2, seed=0)
        sample = TrainSample(graph, {v: v % 2 for v in graph.cut_index.values()})
        a, b = gradients(params, sample), gradients(params, sample)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_unlabelled_cut_nodes_do_not_contribute(self, graph):
        params = ModelParams.initialize(8, 2, seed=0)
        ids = sorted(graph.cut_index.values())
        full = {v: 1 for v in ids}
        partial = {v: 1 for v in ids[:1]}
        value, _ = loss_and_gradients(params, [TrainSample(graph, partial)])
        p = forward(params, graph)
        first = next(k for k, v in graph.cut_index.items() if v == ids[0])
        assert value == pytest.approx(-math.log(p[first]), abs=1e-12)
        assert loss_and_gradients(params, [TrainSample(graph, full)])[0] != value


class TestTraining:
    def test_overfit_ten_graphs(self, small_nets):
        data = [train_sample(n) for n in small_nets[:10]]
        assert sum(len(s.labels) for s in data) > 0
        cfg = TrainConfig(learning_rate=1e-2, epochs=500, batch_size=10, seed=0, hidden=16,
                          iterations=3)
        _, history = train_epochs(data, cfg)
        assert min(history) < 0.1

    def test_first_epoch_near_ln2(self, small_nets):
        graphs = [encode(n) for n in small_nets[:10]]
        rng = np.random.default_rng(0)
        data = [TrainSample(g, {v: int(rng.integers(2)) for v in g.cut_index.values()})
                for g in graphs]
        cfg = TrainConfig(learning_rate=1e-4, epochs=1, batch_size=16, hidden=32, iterations=3)
        _, history = train_epochs(data, cfg)
        assert history[0] == pytest.approx(math.log(2), abs=0.1)

    def test_same_seed_same_weights(self, small_nets):
        data = [train_sample(n) for n in small_nets[:6]]
        cfg = TrainConfig(learning_rate=3e-3, epochs=3, batch_size=4, seed=7, hidden=8, iterations=2)
        a, ha = train_epochs(data, cfg)
        b, hb = train_epochs(data, cfg)
        assert ha == hb
        for k in a.tensors:
            np.testing.assert_array_equal(a.tensors[k], b.tensors[k])

    def test_empty_data(self):
        with pytest.raises(ValueError):
            train_epochs([], TrainConfig())


class TestCheckpoint:
    def test_round_trip_is_bit_identical(self, tmp_path, graph):
        params = ModelParams.initialize(16, 4, attention=False, seed=8)
        save_model(params, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert (back.hidden, back.iterations, back.attention) == (16, 4, False)
        assert forward(back, graph) == forward(params, graph)

    def test_layout(self):
        obj = model_to_dict(ModelParams.initialize(4, 1))
        assert set(obj) == {"hidden", "iterations", "attention", "tensors"}
        assert obj["tensors"]["msg_w"]["shape"] == [4, 4]
        assert len(obj["tensors"]["msg_w"]["data"]) == 16

    def test_corrupted_shape_names_tensor(self, tmp_path):
        obj = model_to_dict(ModelParams.initialize(4, 1))
        obj["tensors"]["gru_wz"]["shape"] = [4, 4]
        obj["tensors"]["gru_wz"]["data"] = obj["tensors"]["gru_wz"]["data"][:16]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(obj))
        with pytest.raises(ShapeMismatch, match="gru_wz"):
            load_model(path)

    def test_missing_tensor(self, tmp_path):
        obj = model_to_dict(ModelParams.initialize(4, 1))
        del obj["tensors"]["out_b1"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(obj))
        with pytest.raises(ShapeMismatch, match="out_b1"):
            load_model(path)
