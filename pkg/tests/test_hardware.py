import dataclasses

import numpy as np
import pytest

from oxcim.crossbar import SenseChain
from oxcim.device import MlcStateModel, DeviceConfig
from oxcim.errors import ConfigError
from oxcim.hardware import (forward_hardware, map_network_to_tiles,
                            predict_hardware)
from oxcim.network import forward_ideal, lenet
from oxcim.quant import Precision
from test_network import tiny_net


def affine_config(a=9e-6, b=11e-6, d2d=0.0, c2c=0.0, seed=1):
    states = {t: MlcStateModel(f"s{t:+d}", b + a * t, d2d, c2c)
              for t in (-1, 0, 1)}
    return DeviceConfig("HRS", states, v_read=0.2, seed=seed)


class TestMapping:
    def test_lenet_tile_partition(self):
        from oxcim.train import Trainer
        net = Trainer(lenet(Precision.BINARY)).network()
        tiled = map_network_to_tiles(net, affine_config(), max_tile=(64, 64))
        m = tiled.mappings[0]           # conv1: 200 x 6 lowered matrix
        assert m.rows == 200 and m.cols == 6
        assert len(m.placements) == 4   # ceil(200 / 64) row blocks, 1 col block
        assert [p.row_start for p in m.placements] == [0, 64, 128, 192]
        d1 = tiled.mappings[6]          # dense 400 -> 120
        assert d1.rows == 400 and d1.cols == 120
        assert len(d1.placements) == 7 * 2

    def test_small_matrix_single_tile(self):
        net = tiny_net()
        tiled = map_network_to_tiles(net, affine_config())
        assert all(len(m.placements) == 1 for m in tiled.mappings.values())

    def test_same_config_same_cells(self):
        net = tiny_net()
        cfg = dataclasses.replace(affine_config(), states={
            t: MlcStateModel(f"s{t}", 11e-6 + 9e-6 * t, 1e-6, 0.0)
            for t in (-1, 0, 1)})
        t1 = map_network_to_tiles(net, cfg)
        t2 = map_network_to_tiles(net, cfg)
        for a, b in zip(t1.all_cells(), t2.all_cells()):
            np.testing.assert_array_equal(a[1], b[1])

    def test_seed_changes_cells(self):
        net = tiny_net()
        noisy = {t: MlcStateModel(f"s{t}", 11e-6 + 9e-6 * t, 1e-6, 0.0)
                 for t in (-1, 0, 1)}
        c1 = dataclasses.replace(affine_config(), states=noisy, seed=1)
        c2 = dataclasses.replace(affine_config(), states=noisy, seed=2)
        g1 = next(iter(map_network_to_tiles(net, c1).all_cells()))[1]
        g2 = next(iter(map_network_to_tiles(net, c2).all_cells()))[1]
        assert not np.array_equal(g1, g2)

    def test_missing_weights_config_error(self):
        arch = lenet(Precision.BINARY)
        with pytest.raises(ConfigError):
            map_network_to_tiles(arch, affine_config())

    def test_binary_net_on_two_state_config(self):
        cfg = DeviceConfig("HRS", {-1: MlcStateModel("lo", 2e-6),
                                   1: MlcStateModel("hi", 20e-6)})
        net = tiny_net(Precision.BINARY)
        tiled = map_network_to_tiles(net, cfg)
        x = np.random.default_rng(0).choice([-1, 1], size=(1, 4, 4)).astype(np.int8)
        assert 0 <= predict_hardware(tiled, x) <= 9

    def test_ternary_net_needs_zero_state(self):
        cfg = DeviceConfig("HRS", {-1: MlcStateModel("lo", 2e-6),
                                   1: MlcStateModel("hi", 20e-6)})
        with pytest.raises(ConfigError):
            map_network_to_tiles(tiny_net(Precision.TERNARY), cfg)


class TestForwardHardware:
    def test_deterministic_given_seed_and_ordinal(self):
        net = tiny_net()
        tiled = map_network_to_tiles(net, dataclasses.replace(
            affine_config(), states={
                t: MlcStateModel(f"s{t}", 11e-6 + 9e-6 * t, 0.5e-6, 0.5e-6)
                for t in (-1, 0, 1)}))
        x = np.random.default_rng(1).choice([-1, 0, 1], size=(1, 4, 4)) \
            .astype(np.int8)
        a = forward_hardware(tiled, x, image_ordinal=3)
        b = forward_hardware(tiled, x, image_ordinal=3)
        np.testing.assert_array_equal(a, b)
        c = forward_hardware(tiled, x, image_ordinal=4)
        assert not np.array_equal(a, c)

    def test_zero_input_all_neuron_voltages_equal(self):
        net = tiny_net(Precision.TERNARY)
        tiled = map_network_to_tiles(net, affine_config())
        v = forward_hardware(tiled, np.zeros((1, 4, 4), dtype=np.int8))
        # all deltas zero -> every class sees the same neuron voltage,
        # and the argmax tie resolves to class 0
        assert np.all(v == v[0])
        assert predict_hardware(tiled, np.zeros((1, 4, 4), dtype=np.int8)) == 0

    def test_zero_variability_balanced_input_matches_ideal_exactly(self):
        # a dense layer sees the whole input as one patch; balancing the
        # +1/-1 counts cancels the conductance-offset imbalance term, so the
        # zero-noise hardware scores must rank exactly like the ideal ones
        from oxcim.network import Activation, Dense, NetworkDescription
        from oxcim.quant import TernaryTensor
        from oxcim.device import sigmoid_neuron_voltage, SigmoidNeuronModel

        gen = np.random.default_rng(7)
        w = gen.choice([-1, 0, 1], size=(16, 10)).astype(np.int8)
        net = NetworkDescription(
            Precision.TERNARY, (1, 4, 4),
            [Dense(10), Activation("sigmoid_output")],
            [TernaryTensor(w, Precision.TERNARY), None])
        tiled = map_network_to_tiles(net, affine_config())
        from oxcim.quant import popcount_oracle
        scale = net.scale_for(1)
        for k in range(20):
            x = np.array([1] * 6 + [-1] * 6 + [0] * 4, dtype=np.int8)
            gen.shuffle(x)
            x = x.reshape(1, 4, 4)
            v = forward_hardware(tiled, x, k)
            scores = forward_ideal(net, x)
            pcs = np.array([popcount_oracle(x.ravel(), w[:, c])
                            for c in range(10)])
            best = np.flatnonzero(pcs == pcs.max())
            assert int(np.argmax(v)) in best
            assert int(np.argmax(scores)) in best
            # per class, the neuron sits at the ideal scaled popcount
            for c in range(10):
                expect = sigmoid_neuron_voltage(pcs[c] / scale,
                                                SigmoidNeuronModel.measured())
                assert v[c] == pytest.approx(expect, rel=1e-12)

    def test_tiling_invariance_zero_noise(self):
        # splitting into tiny tiles must not change the digital partial sum
        net = tiny_net(Precision.TERNARY, seed=8)
        cfg = affine_config()
        x = np.random.default_rng(9).choice([-1, 0, 1], size=(1, 4, 4)) \
            .astype(np.int8)
        whole = forward_hardware(map_network_to_tiles(net, cfg, (64, 64)), x)
        # smallest legal tile: one data column plus the two reference columns
        split = forward_hardware(map_network_to_tiles(net, cfg, (2, 3)), x)
        np.testing.assert_allclose(whole, split, rtol=0, atol=1e-12)

    def test_comparator_offset_shifts_decisions(self):
        net = tiny_net(Precision.TERNARY, seed=10)
        cfg = affine_config()
        x = np.ones((1, 4, 4), dtype=np.int8)
        base = forward_hardware(map_network_to_tiles(net, cfg), x)
        nudged = forward_hardware(
            map_network_to_tiles(net, cfg,
                                 chain=SenseChain(comparator_offset_uA=0.5)), x)
        assert not np.array_equal(base, nudged)

    def test_raw_mode_keeps_the_imbalance_term(self):
        # without reference columns the single-device offset shows through:
        # delta = v_read * (a*pc + b*(n_pos - n_neg)) feeds the neuron
        from oxcim.network import Activation, Dense, NetworkDescription
        from oxcim.quant import TernaryTensor, popcount_oracle
        from oxcim.device import sigmoid_neuron_voltage

        gen = np.random.default_rng(13)
        w = gen.choice([-1, 0, 1], size=(16, 10)).astype(np.int8)
        net = NetworkDescription(
            Precision.TERNARY, (1, 4, 4),
            [Dense(10), Activation("sigmoid_output")],
            [TernaryTensor(w, Precision.TERNARY), None])
        a, b, v_read = 9e-6, 11e-6, 0.2
        cfg = affine_config(a, b)
        raw = map_network_to_tiles(net, cfg, imbalance_reference=False)
        x = np.array([1] * 10 + [-1] * 2 + [0] * 4, dtype=np.int8)  # s = 8
        gen.shuffle(x)
        v = forward_hardware(raw, x.reshape(1, 4, 4))
        gain = raw.mappings[0].gain_uA
        s = int(x.sum())
        for c in range(10):
            pc = popcount_oracle(x, w[:, c])
            delta = v_read * (a * pc + b * s) * 1e6
            assert v[c] == pytest.approx(
                sigmoid_neuron_voltage(delta / gain), rel=1e-12)

    def test_voltage_range_is_neuron_range(self):
        net = tiny_net()
        tiled = map_network_to_tiles(net, affine_config())
        gen = np.random.default_rng(11)
        for k in range(5):
            x = gen.choice([-1, 0, 1], size=(1, 4, 4)).astype(np.int8)
            v = forward_hardware(tiled, x, k)
            assert np.all(v >= 0.1) and np.all(v <= 0.1 + 1.5156)
