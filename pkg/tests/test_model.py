import numpy as np
import pytest

from seqnilm import tensor as T
from seqnilm.data.series import PowerSeries
from seqnilm.errors import ConfigError, ContractError
from seqnilm.model import (
    Appliance,
    ModelConfig,
    NormStats,
    count_parameters,
    disaggregate,
    disaggregate_array,
    forward,
    init_model,
    overlap_average,
    window_offsets,
)
from seqnilm.tensor import Tensor, grad_check
from seqnilm.train import nilm_loss
from seqnilm.verify import tiny_model

APPS = (Appliance("fridge", 300.0, 50.0), Appliance("dish_washer", 2500.0, 10.0),
        Appliance("washing_machine", 2500.0, 20.0))


def small_cfg(**kw):
    base = dict(window_len=32, d_model=16, n_heads=2, n_layers=1, d_ff=32, scales=(1, 2, 4, 8),
                kernel_size=5, dropout=0.1, appliances=APPS, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def shape_walk(L, d, h, layers, d_ff, scales, k, A):
    """Enumerate every parameter shape of the architecture and total their sizes."""
    shapes = [(k, 1, d), (d,)]
    for _ in range(layers):
        shapes += [(d, d // h)] * (3 * h) + [(d // h,)] * (3 * h)  # per-head q/k/v
        shapes += [(d, d), (d,)]  # attention output
        shapes += [(d,)] * 4  # two layer norms
        shapes += [(d, d_ff), (d_ff,), (d_ff, d), (d,)]
    per = d // len(scales)
    shapes += [(d, per), (per,)] * len(scales)
    shapes += [(2 * d, d), (d,)]
    shapes += [(d, A), (A,)] * 2
    return sum(int(np.prod(s)) for s in shapes)


class TestConfig:
    def test_defaults_valid(self):
        ModelConfig().validate()

    @pytest.mark.parametrize("kw,msg", [
        (dict(d_model=15), "even"),
        (dict(n_heads=3), "n_heads"),
        (dict(kernel_size=4), "odd"),
        (dict(dropout=1.0), "dropout"),
        (dict(window_len=2), "largest scale"),
        (dict(d_model=18), "number of scales"),
        (dict(scales=(2, 1)), "increasing"),
        (dict(appliances=(Appliance("x", 0.0, 1.0),)), "max_power"),
        (dict(appliances=(Appliance("x", 10.0, -1.0),)), "on_threshold"),
    ])
    def test_violations(self, kw, msg):
        with pytest.raises(ConfigError, match=msg):
            init_model(small_cfg(**kw))

    def test_round_trip_dict(self):
        cfg = small_cfg()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestInit:
    def test_deterministic(self):
        a, b = init_model(small_cfg()), init_model(small_cfg())
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert pa.data.tobytes() == pb.data.tobytes()

    def test_seed_changes_weights(self):
        a, b = init_model(small_cfg()), init_model(small_cfg(seed=4))
        assert a.embed_w.data.tobytes() != b.embed_w.data.tobytes()

    def test_residual_and_head_projections_zero(self):
        m = init_model(small_cfg())
        for name in ("power_w", "power_b", "state_w", "state_b"):
            assert not np.any(getattr(m, name).data)
        for blk in m.blocks:
            assert not np.any(blk.attn.w_o.data) and not np.any(blk.ff_w2.data)

    def test_parameter_count_default_config(self):
        cfg = ModelConfig(window_len=480, d_model=128, n_heads=4, n_layers=2, d_ff=256,
                          scales=(1, 2, 4, 8), kernel_size=5, appliances=APPS)
        expected = shape_walk(480, 128, 4, 2, 256, (1, 2, 4, 8), 5, 3)
        assert expected == 315910
        assert init_model(cfg).num_parameters() == expected == count_parameters(cfg)

    def test_all_finite(self):
        m = init_model(small_cfg())
        assert all(np.all(np.isfinite(p.data)) for _, p in m.named_parameters())


class TestForward:
    def test_zero_heads(self, rng):
        m = init_model(small_cfg())
        p, z = forward(m, rng.normal(size=(32, 1)).astype(np.float32))
        assert np.all(z.data == 0)
        assert np.all(p.data == 0.5)

    def test_shapes(self, rng):
        m = init_model(small_cfg())
        p, z = forward(m, rng.normal(size=(32, 1)))
        assert p.shape == z.shape == (32, 3)
        p, z = forward(m, rng.normal(size=(5, 32, 1)))
        assert p.shape == (5, 32, 3)

    @pytest.mark.parametrize("L", [8, 32, 480])
    def test_seq2seq_length(self, L, rng):
        m = init_model(small_cfg(window_len=L, scales=(1, 2, 4, 8) if L >= 8 else (1,)))
        p, z = forward(m, rng.normal(size=(L, 1)))
        assert p.shape[0] == z.shape[0] == L

    def test_wrong_length(self):
        m = init_model(small_cfg())
        with pytest.raises(ContractError):
            forward(m, np.zeros((31, 1)))

    def test_inference_deterministic(self, rng):
        m = init_model(small_cfg())
        for _, p in m.named_parameters():
            p.data[...] += rng.normal(scale=0.1, size=p.shape).astype(p.dtype)
        x = rng.normal(size=(32, 1)).astype(np.float32)
        a, b = forward(m, x), forward(m, x)
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].data.tobytes() == b[1].data.tobytes()

    def test_dropout_only_in_train_mode(self, rng):
        m = init_model(small_cfg(dropout=0.5))
        for _, p in m.named_parameters():
            p.data[...] += rng.normal(scale=0.2, size=p.shape).astype(p.dtype)
        x = rng.normal(size=(32, 1)).astype(np.float32)
        eval_out = forward(m, x)[0].data
        train_out = forward(m, x, train_mode=True, rng=np.random.default_rng(0))[0].data
        assert not np.array_equal(eval_out, train_out)
        with pytest.raises(ContractError):
            forward(m, x, train_mode=True)

    def test_end_to_end_gradient(self, rng):
        m = tiny_model(seed=5)
        mains = Tensor(rng.normal(size=(3, 8, 1)))
        tp, ts = rng.random((3, 8, 2)), (rng.random((3, 8, 2)) > 0.5).astype(float)

        def loss(_):
            p, z = forward(m, mains)
            return nilm_loss(p, z, tp, ts, 1.0)

        assert max(grad_check(loss, p) for _, p in m.named_parameters()) < 1e-4


def trained_like(L=16, state_bias=None, power_bias=None):
    cfg = small_cfg(window_len=L, scales=(1, 2), dropout=0.0)
    m = init_model(cfg)
    m.norm = NormStats(500.0, 200.0, tuple(a.max_power for a in APPS))
    if state_bias is not None:
        m.state_b.data[...] = state_bias
    if power_bias is not None:
        m.power_b.data[...] = power_bias
    return m


class TestDisaggregate:
    def test_offsets(self):
        assert window_offsets(10, 4, 2) == [0, 2, 4, 6]
        assert window_offsets(11, 4, 2) == [0, 2, 4, 6, 7]
        assert window_offsets(4, 4, 2) == [0]
        assert window_offsets(3, 4, 2) == []

    def test_overlap_average(self):
        preds = [np.full((2, 1), 100.0), np.full((2, 1), 110.0)]
        out = overlap_average(preds, [0, 1], 3)
        assert out.ravel().tolist() == [100.0, 105.0, 110.0]

    def test_all_off_gives_zero(self):
        m = trained_like(state_bias=-20.0, power_bias=3.0)
        watts, states = disaggregate_array(m, np.zeros(40))
        assert not np.any(states)
        assert np.all(watts == 0)

    def test_single_window(self):
        m = trained_like(state_bias=20.0, power_bias=0.0)
        watts, states = disaggregate_array(m, np.full(16, 400.0))
        assert watts.shape == (3, 16)
        np.testing.assert_allclose(watts, 0.5 * np.array([[300.0], [2500.0], [2500.0]]) * np.ones(16), rtol=1e-6)

    def test_clamped_to_max_power(self, rng):
        m = trained_like(state_bias=20.0)
        for _, p in m.named_parameters():
            p.data[...] += rng.normal(scale=0.5, size=p.shape).astype(p.dtype)
        watts, _ = disaggregate_array(m, rng.uniform(0, 4000, 100))
        assert watts.shape == (3, 100)
        assert np.all(watts >= 0)
        assert np.all(watts <= np.array([[300.0], [2500.0], [2500.0]]))

    def test_too_short(self):
        with pytest.raises(ContractError, match="pad"):
            disaggregate_array(trained_like(), np.zeros(10))

    def test_series_interface(self):
        m = trained_like(state_bias=20.0)
        ts = 1_500_000_000 + 6.0 * np.arange(30)
        out = disaggregate(m, PowerSeries("mains", ts, np.full(30, 300.0)))
        assert list(out) == ["fridge", "dish_washer", "washing_machine"]
        np.testing.assert_array_equal(out["fridge"].timestamps, ts)
