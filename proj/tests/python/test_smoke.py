"""Smoke tests for the python bindings: shapes, reference numerics, round trips."""

import math

import numpy as np
import pytest

import smamba


def test_discretize_closed_form():
    delta = np.full((1, 1, 1), math.log(2.0))
    a = np.full((1, 1), -1.0)
    b = np.ones((1, 1, 1))
    abar, bbar = smamba.discretize(delta, a, b)
    assert abar.shape == (1, 1, 1, 1)
    assert abs(abar[0, 0, 0, 0] - 0.5) < 1e-14
    assert abs(bbar[0, 0, 0, 0] - 0.5) < 1e-14

    abar0, bbar0 = smamba.discretize(np.zeros((1, 1, 1)), a, b)
    assert abar0[0, 0, 0, 0] == 1.0
    assert bbar0[0, 0, 0, 0] == 0.0


def test_selective_scan_matches_numpy_loop():
    rng = np.random.default_rng(3)
    B, S, ED, N = 2, 6, 3, 2
    abar = rng.uniform(0.0, 1.0, (B, S, ED, N))
    bbar = rng.normal(size=(B, S, ED, N))
    c = rng.normal(size=(B, S, N))
    x = rng.normal(size=(B, S, ED))

    y = smamba.selective_scan(abar, bbar, c, x)

    h = np.zeros((B, ED, N))
    ref = np.zeros((B, S, ED))
    for t in range(S):
        h = abar[:, t] * h + bbar[:, t] * x[:, t, :, None]
        ref[:, t] = np.einsum("bn,bdn->bd", c[:, t], h)
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_model_forward_shape_and_determinism():
    model = smamba.Model(lookback=12, horizon=4, width=8, layers=1, state_dim=2,
                         expand=2, conv_kernel=2, ffn_hidden=16, seed=5)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 12, 3))
    y1 = model.forward(x)
    y2 = model.forward(x)
    assert y1.shape == (2, 4, 3)
    assert np.array_equal(y1, y2)

    with pytest.raises(smamba.DimError):
        model.forward(rng.normal(size=(2, 7, 3)))


def test_checkpoint_round_trip(tmp_path):
    model = smamba.Model(lookback=10, horizon=3, width=8, layers=1, state_dim=2,
                         expand=2, conv_kernel=2, ffn_hidden=16, seed=11)
    path = str(tmp_path / "model.smck")
    model.save(path, names=["a", "b"], mean=[0.5, -1.0], std=[2.0, 3.0])
    restored = smamba.Model.load(path)

    x = np.random.default_rng(1).normal(size=(1, 10, 2))
    np.testing.assert_allclose(restored.forward(x), model.forward(x), atol=1e-7)
    assert restored.parameter_count() == model.parameter_count()
    assert restored.config()["lookback"] == 10


def test_periodicity_and_metrics():
    t = np.arange(256, dtype=float)
    periodic, score = smamba.classify_periodicity(np.sin(2 * np.pi * t / 16))
    assert periodic and score > 0.9

    noise = np.random.default_rng(4).normal(size=512)
    periodic, score = smamba.classify_periodicity(noise)
    assert not periodic and score < 0.2

    assert smamba.mse(np.zeros(2), np.array([1.0, 3.0])) == pytest.approx(5.0)
    assert smamba.mae(np.zeros(2), np.array([1.0, 3.0])) == pytest.approx(2.0)


def test_synthetic_generation_deterministic():
    a, names_a = smamba.generate_synthetic(steps=120, seed=9)
    b, names_b = smamba.generate_synthetic(steps=120, seed=9)
    assert names_a == names_b
    assert np.array_equal(a, b)
    assert a.shape == (120, len(names_a))
