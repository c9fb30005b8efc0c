"""Architecture builders: block plans, variants, parameter counts."""

import json
from pathlib import Path

import numpy as np
import pytest

from repscore.arch import (
    BEST_CONFIG,
    ModelConfig,
    block_plan,
    build_model,
    forward_classify,
)
from repscore.nn import Adam, BatchNorm, Conv2D, Dropout, MaxPool2D

from repscore.pipeline import SensorLayout

GOLDEN_PATH = Path(__file__).parent / "data" / "golden_forward.json"


# -- hand-derived closed-form parameter count --------------------------------

def _pool_dims(h, w):
    ph = 2 if h >= 2 else 1
    pw = 2 if w >= 2 else 1
    return h // ph, w // pw


def expected_parameter_count(variant, blocks, rows, window_len, n_imus,
                             scheme="inc_filters_fixed_kernel", lstm_layers=2,
                             lstm_units=256, dense=(512, 128, 3)):
    """Closed-form trainable parameter count, derived layer by layer."""
    filters = [16, 32, 64][:blocks]
    if scheme == "inc_filters_fixed_kernel":
        kernels = [(5, 5)] * blocks
    else:
        kernels = [(9, 9), (5, 5), (3, 3)][:blocks]
    if variant in ("imu_centric", "channel_centric"):
        kernels = [(1, kw) for _, kw in kernels]

    def branch(band_rows):
        total = 0
        c, h, w = 1, band_rows, window_len
        for f, (kh, kw) in zip(filters, kernels):
            total += kh * kw * c * f + f  # kernels + bias
            h, w = _pool_dims(h, w)
            c = f
        return total, h * w * c

    if variant == "imu_centric":
        per_branch, per_feat = branch(6)
        conv_total = per_branch * n_imus
        feat = per_feat * n_imus
    else:
        conv_total, feat = branch(rows)

    lstm_total = 0
    in_dim = feat
    for _ in range(lstm_layers):
        lstm_total += 4 * (in_dim * lstm_units + lstm_units * lstm_units + lstm_units)
        in_dim = lstm_units

    dense_total = 0
    for units in dense:
        dense_total += in_dim * units + units
        in_dim = units
    return conv_total + lstm_total + dense_total


class TestModelConfig:
    def test_json_round_trip(self):
        config = ModelConfig(variant="channel_centric", cnn_blocks=3,
                             scheme="inc_filters_dec_kernel", regularization="batchnorm",
                             lstm_layers=1, activation="lrelu", batch_size=8, windows=6)
        restored = ModelConfig.from_json(config.to_json())
        assert restored == config

    def test_invalid_enums_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="other")
        with pytest.raises(ValueError):
            ModelConfig(cnn_blocks=4)
        with pytest.raises(ValueError):
            ModelConfig(batch_size=5)
        with pytest.raises(ValueError):
            ModelConfig(activation="gelu")
        with pytest.raises(ValueError):
            ModelConfig(dense_units=(512, 128, 4))

    def test_best_config_fields(self):
        assert BEST_CONFIG.batch_size == 16
        assert BEST_CONFIG.cnn_blocks == 2
        assert BEST_CONFIG.scheme == "inc_filters_fixed_kernel"
        assert BEST_CONFIG.regularization == "dropout_0.2"
        assert BEST_CONFIG.lstm_layers == 2
        assert BEST_CONFIG.activation == "elu"


class TestBlockPlan:
    def test_fixed_scheme(self):
        plan = block_plan(ModelConfig(cnn_blocks=3))
        assert plan == [(16, (5, 5)), (32, (5, 5)), (64, (5, 5))]

    def test_decreasing_scheme_prefix(self):
        plan = block_plan(ModelConfig(cnn_blocks=2, scheme="inc_filters_dec_kernel"))
        assert plan == [(16, (9, 9)), (32, (5, 5))]

    def test_time_only_variants_flatten_kernel_height(self):
        plan = block_plan(ModelConfig(variant="imu_centric", cnn_blocks=2))
        assert plan == [(16, (1, 5)), (32, (1, 5))]
        plan = block_plan(ModelConfig(variant="channel_centric", cnn_blocks=3,
                                      scheme="inc_filters_dec_kernel"))
        assert plan == [(16, (1, 9)), (32, (1, 5)), (64, (1, 3))]


class TestBuildModel:
    def test_best_config_filter_counts_on_17_imus(self):
        layout = SensorLayout(tuple(range(1, 18)))
        net = build_model(BEST_CONFIG, layout, window_len=20, seed=0)
        convs = [l for l in net.branches[0].layers if isinstance(l, Conv2D)]
        assert [c.filters for c in convs] == [16, 32]
        assert all(c.kernel == (5, 5) for c in convs)
        assert layout.rows == 102

    def test_block_composition(self):
        config = ModelConfig(cnn_blocks=2, regularization="dropout_0.2")
        net = build_model(config, SensorLayout((1, 2)), window_len=12, seed=0)
        kinds = [type(l).__name__ for l in net.branches[0].layers]
        assert kinds == ["Conv2D", "MaxPool2D", "Dropout"] * 2
        config = ModelConfig(cnn_blocks=1, regularization="batchnorm")
        net = build_model(config, SensorLayout((1, 2)), window_len=12, seed=0)
        kinds = [type(l).__name__ for l in net.branches[0].layers]
        assert kinds == ["Conv2D", "MaxPool2D", "BatchNorm"]

    def test_channel_centric_mirrors_baseline_with_flat_kernels(self):
        layout = SensorLayout((1, 2, 3))
        base = build_model(ModelConfig(variant="baseline", cnn_blocks=2),
                           layout, window_len=16, seed=9)
        chan = build_model(ModelConfig(variant="channel_centric", cnn_blocks=2),
                           layout, window_len=16, seed=9)
        base_convs = [l for l in base.branches[0].layers if isinstance(l, Conv2D)]
        chan_convs = [l for l in chan.branches[0].layers if isinstance(l, Conv2D)]
        for b, c in zip(base_convs, chan_convs):
            assert c.kernel == (1, b.kernel[1])
            assert c.filters == b.filters
        # one shared branch over all rows in both cases
        assert len(chan.branches) == 1
        assert (chan.branches[0].row_start, chan.branches[0].row_stop) == (0, layout.rows)

    def test_imu_centric_one_branch_per_imu(self):
        layout = SensorLayout((4, 9, 11))
        net = build_model(ModelConfig(variant="imu_centric", cnn_blocks=1),
                          layout, window_len=16, seed=0)
        assert len(net.branches) == 3
        assert [(b.row_start, b.row_stop) for b in net.branches] == [(0, 6), (6, 12), (12, 18)]
        # branches have their own weights
        k0 = net.branches[0].layers[0].kernels.value
        k1 = net.branches[1].layers[0].kernels.value
        assert not np.array_equal(k0, k1)

    def test_lstm_stack_shapes(self):
        net = build_model(BEST_CONFIG, SensorLayout((1,)), window_len=8, seed=0)
        assert len(net.lstm_layers) == 2
        assert net.lstm_layers[0].return_sequences is True
        assert net.lstm_layers[1].return_sequences is False
        assert net.lstm_layers[0].units == 256
        assert [d.units for d in net.head] == [512, 128, 3]
        assert net.head[-1].activation == "linear"
        assert net.head[0].activation == "elu"

    @pytest.mark.parametrize("variant", ["baseline", "imu_centric", "channel_centric"])
    @pytest.mark.parametrize("blocks", [1, 2, 3])
    def test_parameter_counts_match_closed_form(self, variant, blocks):
        layout = SensorLayout((1, 2))
        window_len = 12
        config = ModelConfig(variant=variant, cnn_blocks=blocks,
                             regularization="dropout_0.2", lstm_layers=2,
                             activation="elu", windows=4)
        net = build_model(config, layout, window_len=window_len, seed=0)
        expected = expected_parameter_count(variant, blocks, layout.rows,
                                            window_len, len(layout.imu_ids))
        assert net.parameter_count() == expected

    def test_batchnorm_adds_two_params_per_channel(self):
        layout = SensorLayout((1, 2))
        drop = build_model(ModelConfig(cnn_blocks=2, regularization="dropout_0.2"),
                           layout, window_len=12, seed=0)
        bn = build_model(ModelConfig(cnn_blocks=2, regularization="batchnorm"),
                         layout, window_len=12, seed=0)
        assert bn.parameter_count() - drop.parameter_count() == 2 * 16 + 2 * 32


class TestForwardClassify:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(40)
        net = build_model(BEST_CONFIG, SensorLayout((1,)), window_len=8, seed=0)
        x = rng.normal(size=(7, 3, 6, 8))
        mask = np.ones((7, 3), dtype=bool)
        probs = forward_classify(net, x, mask)
        assert probs.shape == (7, 3)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_batched_prediction_equals_single_shot(self):
        # chunking changes BLAS shapes, so agreement is to rounding, not bitwise
        rng = np.random.default_rng(41)
        net = build_model(BEST_CONFIG, SensorLayout((1,)), window_len=8, seed=1)
        x = rng.normal(size=(10, 3, 6, 8))
        mask = np.ones((10, 3), dtype=bool)
        a = forward_classify(net, x, mask, batch_size=3)
        b = forward_classify(net, x, mask, batch_size=64)
        assert np.abs(a - b).max() < 1e-12

    def test_one_step_decreases_loss_on_separable_batch(self):
        rng = np.random.default_rng(42)
        config = ModelConfig(windows=3)
        net = build_model(config, SensorLayout((1,)), window_len=8, seed=2)
        x = rng.normal(size=(6, 3, 6, 8)) + np.repeat(np.arange(3), 2)[:, None, None, None]
        mask = np.ones((6, 3), dtype=bool)
        onehot = np.eye(3)[np.repeat(np.arange(3), 2)]
        net.freeze_noise()
        opt = Adam(net.params(), lr=1e-4)
        net.zero_grad()
        loss0, _ = net.loss_and_gradients(x, mask, onehot, training=True)
        opt.step()
        loss1, _, _ = __import__("repscore.nn.loss", fromlist=["softmax_crossentropy"]).softmax_crossentropy(
            net.forward_logits(x, mask, training=True), onehot
        )
        assert loss1 < loss0

    def test_golden_forward_vector(self):
        if not GOLDEN_PATH.exists():
            pytest.skip("golden file not generated yet")
        payload = json.loads(GOLDEN_PATH.read_text())
        net = build_model(ModelConfig.from_dict(payload["config"]),
                          SensorLayout(tuple(payload["imu_ids"])),
                          window_len=payload["window_len"], seed=payload["seed"])
        rng = np.random.default_rng(payload["input_seed"])
        x = rng.normal(size=tuple(payload["input_shape"]))
        mask = np.ones(tuple(payload["input_shape"][:2]), dtype=bool)
        mask[:, -1] = False
        probs = net.predict_proba(x, mask)
        assert np.abs(probs - np.array(payload["probs"])).max() < 1e-12
