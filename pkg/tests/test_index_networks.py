import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indexnet.errors import ConfigError, DimensionError
from indexnet.index_networks import (
    VARIANTS,
    Family,
    IndexNetConfig,
    Normalization,
    StageRegistry,
    build_indexnet,
    documented_count,
    grouped_unshared_count,
    normalize,
    param_count,
    table1_count,
)
from indexnet.tensor import Tensor, no_grad, precision

ALL = [(f, v) for f in Family for v in VARIANTS]


def make(family, variant, channels=4, seed=0, **kw):
    cfg = IndexNetConfig.from_variant(family, variant, channels=channels, **kw)
    return build_indexnet(cfg, np.random.default_rng(seed))


def window_sums(a, k=2):
    n, c, h, w = a.shape
    return a.reshape(n, c, h // k, k, w // k, k).sum(axis=(3, 5))


class TestConfig:
    def test_parse_labels(self):
        cfg = IndexNetConfig.parse("m2o_nl_c")
        assert cfg.family is Family.M2O and cfg.nonlinear and cfg.context
        assert IndexNetConfig.parse("modelwise_linear").family is Family.O2O_MODELWISE
        assert cfg.first_kernel == 4 and cfg.first_padding == 1

    def test_bad_labels(self):
        with pytest.raises(ConfigError):
            IndexNetConfig.parse("m2o")
        with pytest.raises(ConfigError):
            IndexNetConfig.parse("nope_nl")

    def test_context_needs_even_k(self):
        with pytest.raises(ConfigError):
            IndexNetConfig(Family.HIN, context=True, k=3)


class TestShapes:
    @pytest.mark.parametrize("family,variant", ALL)
    def test_index_channels(self, family, variant, rng):
        net = make(family, variant, channels=6)
        maps = net(Tensor(rng.standard_normal((2, 6, 8, 12)).astype(np.float32)))
        c_idx = 1 if family is Family.HIN else 6
        assert maps.encoder_index.shape == maps.decoder_index.shape == (2, c_idx, 8, 12)

    @given(
        st.sampled_from(ALL), st.integers(1, 3), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4)
    )
    @settings(max_examples=30)
    def test_arbitrary_sizes(self, fv, n, c, h, w):
        net = make(*fv, channels=c)
        out = net(Tensor(np.ones((n, c, 2 * h, 2 * w), dtype=np.float32)))
        assert out.encoder_index.shape == (n, 1 if fv[0] is Family.HIN else c, 2 * h, 2 * w)

    def test_rejects_odd_sizes_and_wrong_channels(self):
        net = make("m2o", "nl")
        with pytest.raises(DimensionError, match="axis 2"):
            net(Tensor(np.zeros((1, 4, 5, 4))))
        with pytest.raises(DimensionError, match="axis 1"):
            net(Tensor(np.zeros((1, 3, 4, 4))))

    @pytest.mark.parametrize("family,variant", ALL)
    def test_zero_features_give_zero_logits(self, family, variant):
        net = make(family, variant).eval()
        with no_grad():
            logits = net.logits(Tensor(np.zeros((1, 4, 4, 4))))
        np.testing.assert_array_equal(logits.data, 0.0)


class TestChannelDependence:
    """The O2O/M2O split shows up as which feature channels each index channel reads."""

    def _response(self, net, rng, channel):
        x = rng.standard_normal((1, 4, 8, 8))
        with precision("f64"), no_grad():
            net.eval()
            base = net.logits(Tensor(x)).data
            x2 = x.copy()
            x2[:, channel] += 1.0
            changed = net.logits(Tensor(x2)).data
        return np.abs(changed - base).max(axis=(0, 2, 3))

    @pytest.mark.parametrize("family", [Family.O2O_MODELWISE, Family.O2O_SHARED, Family.O2O_UNSHARED])
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_one_to_one(self, family, variant, rng):
        with precision("f64"):
            net = make(family, variant)
        delta = self._response(net, rng, channel=2)
        assert delta[2] > 0
        np.testing.assert_array_equal(np.delete(delta, 2), 0.0)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_many_to_one(self, variant, rng):
        with precision("f64"):
            net = make("m2o", variant)
        assert np.all(self._response(net, rng, channel=2) > 0)

    def test_shared_vs_unshared_functions(self, rng):
        # identical feature channels -> identical index channels only when the function is shared
        x = np.repeat(rng.standard_normal((1, 1, 8, 8)), 4, axis=1)
        with precision("f64"):
            shared = make("o2o_shared_stagewise", "linear").logits(Tensor(x)).data
            unshared = make("o2o_unshared_stagewise", "linear").logits(Tensor(x)).data
        np.testing.assert_allclose(shared, shared[:, :1].repeat(4, axis=1))
        assert np.abs(unshared - unshared[:, :1]).max() > 1e-3


class TestNormalization:
    @given(st.integers(0, 2**31), st.floats(0.1, 20))
    @settings(max_examples=50)
    def test_default_encoder_windows_sum_to_one(self, seed, spread):
        logits = Tensor(np.random.default_rng(seed).standard_normal((2, 3, 4, 4)) * spread)
        maps = normalize(logits, IndexNetConfig(Family.M2O))
        np.testing.assert_allclose(window_sums(maps.encoder_index.data), 1.0, atol=1e-5)
        assert np.all(maps.encoder_index.data >= 0)
        assert np.all((maps.decoder_index.data >= 0) & (maps.decoder_index.data <= 1))

    def test_modes(self, rng):
        logits = Tensor(rng.standard_normal((1, 2, 4, 4)))
        cfg = IndexNetConfig(Family.M2O)
        sig = 1 / (1 + np.exp(-logits.data))
        from dataclasses import replace

        soft_soft = normalize(logits, replace(cfg, normalization=Normalization.SOFT_SOFT))
        np.testing.assert_allclose(window_sums(soft_soft.decoder_index.data), 1.0, atol=1e-5)
        sig_sig = normalize(logits, replace(cfg, normalization=Normalization.SIG_SIG))
        np.testing.assert_allclose(sig_sig.encoder_index.data, sig, rtol=1e-5)
        np.testing.assert_allclose(sig_sig.decoder_index.data, sig, rtol=1e-5)
        softsig = normalize(logits, replace(cfg, normalization=Normalization.SOFTSIG_SOFT))
        np.testing.assert_allclose(
            softsig.encoder_index.data, 1 / (1 + np.exp(-softsig.decoder_index.data)), rtol=1e-5
        )

    def test_default_is_sigmoid_softmax(self):
        assert IndexNetConfig(Family.HIN).normalization is Normalization.SIGSOFT_SIG


class TestParameterCounts:
    @pytest.mark.parametrize("channels", [4, 32])
    @pytest.mark.parametrize("family,variant", ALL)
    def test_documented_formula(self, family, variant, channels):
        cfg = IndexNetConfig.from_variant(family, variant, channels=channels)
        assert param_count(cfg) == documented_count(cfg)[0]
        if not (family is Family.O2O_UNSHARED and variant != "linear"):
            assert param_count(cfg) == table1_count(cfg)[0]

    @pytest.mark.parametrize(
        "family,variant,channels,expected",
        [
            ("hin", "linear", 32, 512),
            ("o2o_modelwise", "linear", 32, 16),
            ("o2o_modelwise", "nl", 32, 40),
            ("m2o", "linear", 8, 1024),
        ],
    )
    def test_closed_form_examples(self, family, variant, channels, expected):
        assert param_count(IndexNetConfig.from_variant(family, variant, channels=channels)) == expected

    def test_unshared_nl_deviation(self):
        cfg = IndexNetConfig.from_variant("o2o_unshared_stagewise", "nl", channels=32)
        assert grouped_unshared_count(cfg) == ((4 * 64 + 64) * 4, "(K*K*2C+2C)*4")
        assert table1_count(cfg)[0] == (4 * 64 + 64 * 32) * 4
        assert param_count(cfg) == 1280

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_complexity_ordering(self, variant):
        counts = {f: param_count(IndexNetConfig.from_variant(f, variant, channels=32)) for f in Family}
        assert counts[Family.M2O] > counts[Family.HIN]
        # linear HIN and unshared coincide at K*K*C*4
        assert counts[Family.HIN] >= counts[Family.O2O_UNSHARED]
        if variant != "linear":
            assert counts[Family.HIN] > counts[Family.O2O_UNSHARED]
        assert counts[Family.O2O_UNSHARED] > counts[Family.O2O_SHARED] >= counts[Family.O2O_MODELWISE]


class TestStageRegistry:
    def test_modelwise_single_instance(self, rng):
        reg = StageRegistry(IndexNetConfig.parse("o2o_modelwise_nl"), [32, 64, 128], rng)
        assert len(reg) == 3 and len(reg.unique()) == 1

    @pytest.mark.parametrize("label", ["o2o_shared_stagewise_nl", "m2o_linear", "hin_nl_c"])
    def test_stagewise_one_per_stage(self, label, rng):
        reg = StageRegistry(IndexNetConfig.parse(label), [32, 64, 128], rng)
        assert len(reg.unique()) == 3
        assert [net.cfg.channels for net in reg.unique()] == [32, 64, 128]

    def test_modelwise_serves_any_width(self, rng):
        reg = StageRegistry(IndexNetConfig.parse("o2o_modelwise_linear"), [2, 3], rng)
        for c in (2, 3):
            assert reg[0](Tensor(np.ones((1, c, 4, 4)))).encoder_index.shape == (1, c, 4, 4)
