"""Tests for the bundled demand profiles."""

import numpy as np
import pytest

from creditband.profiles import (
    DEFAULT_SLOTS_PER_DAY,
    build_gateway_models,
    default_device_mix,
    gamma_base,
    gateway_app_probs,
    load_app_table,
)
from creditband.utility import APP_KINDS


def test_bundled_table_loads_and_normalizes():
    table = load_app_table()
    assert set(table) == {"iphone", "android", "windows", "mac"}
    for dev, mat in table.items():
        assert mat.shape == (DEFAULT_SLOTS_PER_DAY, len(APP_KINDS))
        assert np.all(mat >= 0)
        assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-12)


def test_device_mix_assignment():
    mix = default_device_mix(16)
    assert len(mix) == 16
    # four hardware groups, 1-indexed gateways
    assert mix[0] == {"iphone": 1, "android": 1, "windows": 1, "mac": 1}
    assert mix[1] == {"iphone": 2, "android": 0, "windows": 2, "mac": 1}
    assert mix[2] == {"iphone": 1, "android": 1, "windows": 1, "mac": 2}
    assert mix[4] == {"iphone": 2, "android": 0, "windows": 1, "mac": 1}
    for same in ([0, 3, 8, 12], [1, 5, 9, 13], [2, 6, 10, 14], [4, 7, 11, 15]):
        assert all(mix[i] == mix[same[0]] for i in same)


def test_gateway_mixture_is_weighted_average():
    table = load_app_table()
    counts = {"iphone": 2, "windows": 1}
    got = gateway_app_probs(counts, table)
    want = (2 * table["iphone"] + table["windows"]) / 3
    assert np.allclose(got, want)
    assert np.allclose(got.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        gateway_app_probs({}, table)
    with pytest.raises(ValueError):
        gateway_app_probs({"toaster": 1}, table)


def test_gamma_base_shape():
    base = gamma_base()
    assert base.shape == (DEFAULT_SLOTS_PER_DAY,)
    assert np.all(base >= 1.0)
    # single mid-evening peak
    peak = int(np.argmax(base))
    assert 5 <= peak <= 8
    assert base[peak] > base[0]
    assert base[peak] > base[-1]


def test_build_gateway_models():
    rng = np.random.default_rng(42)
    models = build_gateway_models(n=16, days=7, rng=rng)
    assert len(models) == 16
    H = 7 * DEFAULT_SLOTS_PER_DAY
    for m in models:
        assert m.horizon == H
        assert np.all(m.gamma > 0)
        assert np.allclose(m.app_probs.sum(axis=1), 1.0)
    # app mixtures repeat daily; gamma noise varies by day
    m = models[0]
    assert np.allclose(m.app_probs[:12], m.app_probs[12:24])
    day_scale = m.gamma[:12] / gamma_base()
    assert np.allclose(day_scale, day_scale[0])
    other_day = m.gamma[12:24] / gamma_base()
    assert not np.isclose(day_scale[0], other_day[0])


def test_build_models_deterministic_under_seed():
    a = build_gateway_models(4, 2, np.random.default_rng(5))
    b = build_gateway_models(4, 2, np.random.default_rng(5))
    for ma, mb in zip(a, b):
        assert np.array_equal(ma.gamma, mb.gamma)
        assert np.array_equal(ma.app_probs, mb.app_probs)
