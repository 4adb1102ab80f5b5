import json

import numpy as np
import pytest

from symnet.gradcheck import REDUCED_ARCHITECTURE, gradient_check, relative_error
from symnet.kernels import SymmetryClass, T2BMode, satisfies_symmetry
from symnet.network import (
    ALL_CONDITIONS,
    CONDITION_NAMES,
    Architecture,
    CheckpointError,
    Condition,
    Network,
    count_network_parameters,
    cross_entropy,
    load_checkpoint,
    save_checkpoint,
    softmax,
)

SMALL = REDUCED_ARCHITECTURE


def rand_batch(arch, n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, arch.input_size, arch.input_size)), rng.integers(0, arch.classes, size=n)


class TestCondition:
    def test_fourteen_names(self):
        assert len(CONDITION_NAMES) == len(set(CONDITION_NAMES)) == 14
        assert CONDITION_NAMES[0] == "L-R-R" and CONDITION_NAMES[7] == "F-R-R"

    def test_parse_short_form(self):
        c = Condition.parse("t1-r")
        assert c.name == "L-T1-R" and c.learn_conv

    def test_invalid_lists_all(self):
        with pytest.raises(ValueError) as info:
            Condition.parse("L-T3-R")
        for name in CONDITION_NAMES:
            assert name in str(info.value)


class TestParameterCounts:
    @pytest.mark.parametrize(
        "name,features",
        [("L-R-R", 1375), ("L-T1-T1", 330), ("L-T2A-T2A", 715), ("L-T2B-T2B", 660),
         ("L-T1-R", 1280), ("L-T2A-R", 1315), ("L-T2B-R", 1310), ("F-T2B-T2B", 660)],
    )
    def test_features(self, name, features):
        assert count_network_parameters(name) == (features, 126110)

    @pytest.mark.parametrize("cond", ALL_CONDITIONS, ids=str)
    def test_matches_initialized_arrays(self, cond):
        net = Network(cond)
        assert net.params["conv1"].size + net.params["conv2"].size == count_network_parameters(cond)[0]
        dense = sum(net.params[k].size for k in ("dense1.w", "dense1.b", "dense2.w", "dense2.b"))
        assert dense == 126110


class TestForward:
    def test_shapes(self):
        net = Network("L-T1-R")
        x, _ = rand_batch(net.arch, 3)
        probs, cache = net.forward(x)
        assert cache.z1.shape == (3, 5, 169)
        assert cache.z2.shape == (3, 50, 25)
        assert cache.a2.shape == (3, 1250)
        assert cache.a3.shape == (3, 100)
        assert probs.shape == (3, 10)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_single_image(self):
        net = Network("L-R-R")
        x, _ = rand_batch(net.arch, 1)
        np.testing.assert_allclose(net.forward(x[0])[0], net.forward(x)[0])

    def test_matches_loop_reference(self):
        # Independent per-map loop through the conv stack using the naive correlator.
        from symnet.conv import cross_correlate

        net = Network("L-T2A-T1", seed=4)
        x, _ = rand_batch(net.arch, 1, seed=9)
        k1, k2 = net.kernels()
        a, arch = [], net.arch
        for m in range(arch.conv1_maps):
            a.append(np.maximum(cross_correlate(x[0], k1[m], arch.geometry1), 0))
        feats = []
        for m in range(arch.conv2_maps):
            feats.append(np.maximum(cross_correlate(a[m % arch.conv1_maps], k2[m], arch.geometry2), 0).ravel())
        h = np.maximum(net.params["dense1.w"] @ np.concatenate(feats) + net.params["dense1.b"], 0)
        z = net.params["dense2.w"] @ h + net.params["dense2.b"]
        np.testing.assert_allclose(net.forward(x)[0][0], softmax(z), rtol=1e-10)

    def test_zero_output_layer_is_uniform(self):
        net = Network("L-R-R")
        net.params["dense2.w"][:] = 0
        x, _ = rand_batch(net.arch, 4)
        np.testing.assert_allclose(net.forward(x)[0], 0.1, atol=1e-15)

    def test_wrong_input_size(self):
        with pytest.raises(ValueError):
            Network("L-R-R").forward(np.zeros((1, 28, 28)))

    def test_deterministic_init(self):
        a, b = Network("L-T1-T1", seed=5), Network("L-T1-T1", seed=5)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])
        assert not np.array_equal(Network("L-T1-T1", seed=6).params["conv1"], a.params["conv1"])

    def test_init_scales(self):
        net = Network("L-R-R", seed=0)
        assert net.params["dense1.w"].std() == pytest.approx(1 / np.sqrt(1250), rel=0.02)
        assert not net.params["dense1.b"].any() and not net.params["dense2.b"].any()


class TestBackward:
    @pytest.mark.parametrize("name", ["L-R-R", "L-T1-T1", "L-T2A-T2A", "L-T2B-T2B", "L-T2B-R", "F-T1-R"])
    def test_finite_differences(self, name):
        res = gradient_check(name)
        assert res.passed(1e-5), res

    def test_finite_differences_full_size_sample(self):
        # Spot-check a handful of coordinates on the full-size network.
        net = Network("L-T1-T2A", t2b_mode="consistent", seed=2)
        x, y = rand_batch(net.arch, 2, seed=3)
        grads = net.backward(net.forward(x)[1], y)
        rng = np.random.default_rng(0)
        eps = 1e-6
        for name in ("conv1", "conv2", "dense1.w", "dense2.b"):
            arr = net.params[name]
            for _ in range(4):
                idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
                old = arr[idx]
                arr[idx] = old + eps
                up = net.loss(x, y)
                arr[idx] = old - eps
                down = net.loss(x, y)
                arr[idx] = old
                assert relative_error(grads[name][idx], (up - down) / (2 * eps)) < 1e-5

    def test_zero_delta_zero_grads(self):
        net = Network("L-T2A-R")
        x, _ = rand_batch(net.arch, 2)
        _, cache = net.forward(x)
        grads = net.backward_from_delta(cache, np.zeros((2, 10)))
        for g in grads.values():
            assert not np.any(g)

    def test_softmax_delta(self):
        net = Network("L-R-R")
        x, y = rand_batch(net.arch, 3)
        probs, cache = net.forward(x)
        expected = probs.copy()
        expected[np.arange(3), y] -= 1
        np.testing.assert_allclose(net.output_delta(cache, y), expected / 3)

    def test_backward_without_cache(self):
        with pytest.raises(RuntimeError):
            Network("L-R-R").backward(None, [0])

    def test_frozen_has_no_conv_grads(self):
        net = Network("F-T1-T1")
        x, y = rand_batch(net.arch, 1)
        assert "conv1" not in net.backward(net.forward(x)[1], y)

    @pytest.mark.parametrize("mode", list(T2BMode))
    def test_t2b_fold_against_unconstrained_network(self, mode):
        # An R-R network holding the expanded T2B kernels sees the full kernel gradient G;
        # literal mode keeps G at the positive member, consistent mode G+ - G-.
        net = Network("L-T2B-T2B", t2b_mode=mode, seed=1)
        ref = Network("L-R-R", seed=None)
        k1, k2 = net.kernels()
        ref.params = {k: v.copy() for k, v in net.params.items()}
        ref.params["conv1"] = k1.reshape(5, -1).copy()
        ref.params["conv2"] = k2.reshape(50, -1).copy()
        x, y = rand_batch(net.arch, 2, seed=8)
        g = net.backward(net.forward(x)[1], y)
        full = ref.backward(ref.forward(x)[1], y)
        np.testing.assert_allclose(ref.forward(x)[0], net.forward(x)[0], rtol=1e-12, atol=1e-16)
        for layer, orbit in (("conv1", net.orbit1), ("conv2", net.orbit2)):
            for k, ((i, j, _), (i2, j2, _)) in enumerate(orbit.groups):
                pos = full[layer][:, i * 5 + j]
                neg = full[layer][:, i2 * 5 + j2]
                expected = pos if mode is T2BMode.LITERAL else pos - neg
                np.testing.assert_allclose(g[layer][:, k], expected, rtol=1e-10, atol=1e-14)


class TestUpdates:
    def test_single_step_scaling(self):
        net = Network("L-R-R", seed=0)
        x, y = rand_batch(net.arch, 1)
        grads = net.backward(net.forward(x)[1], y)
        before = {k: v.copy() for k, v in net.params.items()}
        net.sgd_step(grads, 0.001)
        np.testing.assert_allclose(before["conv1"] - net.params["conv1"], 0.0002 * grads["conv1"], rtol=1e-12, atol=1e-16)
        np.testing.assert_allclose(
            before["dense2.w"] - net.params["dense2.w"], 0.0001 * grads["dense2.w"], rtol=1e-12, atol=1e-16
        )
        np.testing.assert_allclose(
            before["dense1.w"] - net.params["dense1.w"], 0.001 / np.sqrt(1250) * grads["dense1.w"], rtol=1e-12, atol=1e-16
        )

    def test_frozen_conv_unchanged_for_100_steps(self):
        net = Network("F-T2A-R", seed=3)
        k0 = (net.params["conv1"].copy(), net.params["conv2"].copy())
        d0 = net.params["dense1.w"].copy()
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.normal(size=(1, 29, 29))
            y = rng.integers(0, 10, size=1)
            net.sgd_step(net.backward(net.forward(x)[1], y), 0.05)
        np.testing.assert_array_equal(net.params["conv1"], k0[0])
        np.testing.assert_array_equal(net.params["conv2"], k0[1])
        assert not np.array_equal(net.params["dense1.w"], d0)

    @pytest.mark.parametrize("name", ["L-T1-T1", "L-T2A-T2A", "L-T2B-T2B"])
    def test_symmetry_survives_training(self, name):
        net = Network(name, seed=0)
        rng = np.random.default_rng(1)
        c = net.condition
        for step in range(1000):
            x = rng.normal(size=(1, 29, 29))
            y = rng.integers(0, 10, size=1)
            net.sgd_step(net.backward(net.forward(x)[1], y), 0.01)
        k1, k2 = net.kernels()
        assert all(satisfies_symmetry(c.layer1, k) for k in k1)
        assert all(satisfies_symmetry(c.layer2, k) for k in k2)
        if c.layer2 is SymmetryClass.T2B:
            assert not k2[:, 2, 2].any()

    def test_two_class_loss_descends(self):
        arch = Architecture(hidden=20, classes=2)
        rng = np.random.default_rng(0)
        x = rng.normal(0.0, 0.3, size=(40, 29, 29))
        y = np.arange(40) % 2
        x[y == 0, 10:19, 12:17] += 2.0  # vertical bar
        x[y == 1, 12:17, 10:19] += 2.0  # horizontal bar
        net = Network("L-T1-R", arch, seed=0)
        losses = []
        for _ in range(60):
            probs, cache = net.forward(x)
            losses.append(float(cross_entropy(probs, y).mean()))
            net.sgd_step(net.backward(cache, y), 0.5)
        avg = np.convolve(losses, np.ones(10) / 10, mode="valid")
        assert np.all(np.diff(avg) < 0)
        assert losses[-1] < 0.5 * losses[0]


class TestCheckpoint:
    @pytest.mark.parametrize("name", ["L-R-R", "F-T2B-T2B", "L-T1-R"])
    def test_round_trip(self, tmp_path, name):
        net = Network(name, t2b_mode="consistent", seed=7)
        net.metadata = {"seed": 7, "note": "x"}
        save_checkpoint(net, tmp_path / "c.json")
        back = load_checkpoint(tmp_path / "c.json")
        assert back.condition == net.condition and back.t2b_mode is T2BMode.CONSISTENT
        assert back.metadata == net.metadata
        for k in net.params:
            np.testing.assert_array_equal(back.params[k], net.params[k])
        x, _ = rand_batch(net.arch, 2)
        np.testing.assert_array_equal(back.forward(x)[0], net.forward(x)[0])

    def test_layer_table(self, tmp_path):
        save_checkpoint(Network("L-T2A-R"), tmp_path / "c.json")
        doc = json.loads((tmp_path / "c.json").read_text())
        assert [layer["kind"] for layer in doc["layers"]] == ["conv", "conv", "dense", "dense"]
        assert doc["layers"][0]["symmetry"] == "T2A" and doc["layers"][1]["symmetry"] == "R"

    def test_rejects_wrong_canonical_length(self, tmp_path):
        p = tmp_path / "c.json"
        save_checkpoint(Network("L-T1-R"), p)
        doc = json.loads(p.read_text())
        doc["weights"]["conv1"] = [[(0.0).hex()] * 13 for _ in range(5)]
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(p)
        assert info.value.field == "weights.conv1"

    @pytest.mark.parametrize(
        "mutate,field",
        [
            (lambda d: d.update(version=99), "version"),
            (lambda d: d.update(condition="L-T9-R"), "condition"),
            (lambda d: d["weights"].pop("dense2.b"), "weights.dense2.b"),
            (lambda d: d["weights"].update({"dense1.b": ["zz"] * 100}), "weights.dense1.b"),
        ],
    )
    def test_rejects_corruption(self, tmp_path, mutate, field):
        p = tmp_path / "c.json"
        save_checkpoint(Network("L-R-R"), p)
        doc = json.loads(p.read_text())
        mutate(doc)
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(p)
        assert info.value.field == field

    def test_not_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_copy_is_independent(self):
        net = Network("L-R-R")
        other = net.copy()
        other.params["conv1"] += 1
        assert not np.array_equal(other.params["conv1"], net.params["conv1"])


def test_gradcheck_reduced_arch_is_small():
    assert SMALL.features == 4 * 4 * 4
