"""Tests for the per-correspondence backbone network."""
import numpy as np
import pytest

from epimatch import autodiff as ad
from epimatch import backbone


def _wrap_all(arrays):
    return {k: ad.wrap(v) for k, v in arrays.items()}


def _zero_params(cfg):
    return {name: np.zeros(shape)
            for name, (shape, _) in backbone.param_schema(cfg).items()}


# ----------------------------------------------------------------- schema ----

def test_schema_shapes():
    cfg = backbone.BackboneConfig(in_channels=4, d=8, blocks=2,
                                  lfc_enabled=True, lfc_k=3, lfc_heads=2)
    schema = backbone.param_schema(cfg)
    assert schema["perception/w"] == ((4, 8), 4)
    assert schema["perception/b"] == ((8,), 4)
    assert schema["lfc/head0/w"] == ((16, 4), 16)
    assert schema["lfc/head1/w"] == ((16, 4), 16)
    assert schema["lfc/w_out"] == ((8, 8), 8)
    assert schema["lfc/w_fuse"] == ((3, 8), 8)
    assert schema["block0/w1"] == ((8, 8), 8)
    assert schema["head/w"] == ((8, 1), 8)
    assert schema["head/b"] == ((1,), 8)


def test_param_count_lfc_delta():
    base = dict(in_channels=4, d=8, blocks=2, lfc_k=3, lfc_heads=2)
    with_lfc = backbone.param_count(backbone.BackboneConfig(lfc_enabled=True, **base))
    without = backbone.param_count(backbone.BackboneConfig(lfc_enabled=False, **base))
    d, k = 8, 3
    # h heads of 2d x d/h share 2d*d entries total, plus the output mix and
    # the k x d fusion projection
    assert with_lfc - without == 2 * d * d + d * d + k * d


def test_config_validation():
    with pytest.raises(ValueError):
        backbone.BackboneConfig(in_channels=4, d=8, lfc_heads=3)  # 8 % 3 != 0
    with pytest.raises(ValueError):
        backbone.BackboneConfig(in_channels=0)
    with pytest.raises(ValueError):
        backbone.BackboneConfig(in_channels=4, lfc_k=0)


def test_init_deterministic_and_bounded():
    cfg = backbone.BackboneConfig(in_channels=4, d=8, blocks=1)
    a = backbone.init_params(cfg, np.random.default_rng(7))
    b = backbone.init_params(cfg, np.random.default_rng(7))
    for name, arr in a.items():
        np.testing.assert_array_equal(arr, b[name])
    for name, (shape, fan_in) in backbone.param_schema(cfg).items():
        bound = np.sqrt(1.0 / fan_in)
        assert np.abs(a[name]).max() <= bound


# ----------------------------------------------------------------- layers ----

def test_residual_block_zero_weights_is_identity(rng):
    f = ad.wrap(rng.standard_normal((6, 4)))
    z = ad.wrap(np.zeros((4, 4)))
    zb = ad.wrap(np.zeros(4))
    out = backbone.residual_block(f, z, zb, z, zb)
    np.testing.assert_array_equal(out.value, f.value)


def test_predict_head_values(rng):
    # rig the head so logit_i = x_i exactly, then check p = relu(tanh(o))
    f = np.array([[0.0], [-5.0], [1.0]])
    w = ad.wrap(np.ones((1, 1)))
    b = ad.wrap(np.zeros(1))
    logits, p = backbone.predict_head(ad.wrap(f), w, b)
    np.testing.assert_allclose(logits.value, [0.0, -5.0, 1.0], atol=1e-15)
    assert p.value[0] == 0.0
    assert p.value[1] == 0.0
    assert p.value[2] == pytest.approx(np.tanh(1.0), abs=1e-9)


def test_forward_zero_params_zero_probabilities(rng):
    cfg = backbone.BackboneConfig(in_channels=4, d=8, blocks=2, lfc_enabled=False)
    x = rng.standard_normal((10, 4))
    logits, p, feat = backbone.forward(x, _wrap_all(_zero_params(cfg)), cfg)
    np.testing.assert_array_equal(p.value, np.zeros(10))
    np.testing.assert_array_equal(logits.value, np.zeros(10))


def test_probabilities_in_unit_interval(rng):
    cfg = backbone.BackboneConfig(in_channels=4, d=8, blocks=2,
                                  lfc_enabled=True, lfc_k=3, lfc_heads=2)
    params = _wrap_all(backbone.init_params(cfg, np.random.default_rng(1)))
    for _ in range(5):
        x = rng.uniform(-1, 1, (20, 4))
        _, p, _ = backbone.forward(x, params, cfg)
        assert (p.value >= 0.0).all() and (p.value < 1.0).all()


def test_forward_permutation_equivariant(rng):
    cfg = backbone.BackboneConfig(in_channels=4, d=8, blocks=2,
                                  lfc_enabled=True, lfc_k=3, lfc_heads=2)
    params = _wrap_all(backbone.init_params(cfg, np.random.default_rng(2)))
    x = rng.uniform(-1, 1, (15, 4))
    logits, p, _ = backbone.forward(x, params, cfg)
    perm = rng.permutation(15)
    logits_p, p_p, _ = backbone.forward(x[perm], params, cfg)
    np.testing.assert_allclose(logits_p.value, logits.value[perm], atol=1e-12)
    np.testing.assert_allclose(p_p.value, p.value[perm], atol=1e-12)


def test_forward_gradient(rng):
    cfg = backbone.BackboneConfig(in_channels=4, d=8, blocks=2,
                                  lfc_enabled=True, lfc_k=3, lfc_heads=2)
    arrays = backbone.init_params(cfg, np.random.default_rng(3))
    x = np.random.default_rng(4).uniform(-1, 1, (16, 4))

    def loss(p):
        _, prob, _ = backbone.forward(x, p, cfg)
        return ad.reduce_sum(prob)

    report = ad.finite_diff_check(loss, arrays)
    assert report.passed, str(report)
