import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stemcal.prior import AcousticPrior, flatten, g_norm, irm, irm_mel, resize, resize_array
from stemcal.signal import ComplexSpectrogram, mel_filterbank


def _spec(values):
    values = np.asarray(values, dtype=np.complex128)
    n_fft = 2 * (values.shape[1] - 1)
    return ComplexSpectrogram(values, n_fft // 4, n_fft, 16000)


def _random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_irm_examples():
    assert irm(_spec([[3.0, 1.0]]), _spec([[4.0, 1.0]])).values[0, 0] == pytest.approx(0.6, abs=1e-12)
    assert irm(_spec([[3.0, 1.0]]), _spec([[4.0, 1.0]])).values[0, 1] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert np.all(irm(_spec([[2.0, 5j]]), _spec([[0.0, 0.0]])).values == 1.0)


def test_irm_zero_over_zero_is_zero():
    g = irm(_spec([[0.0, 1.0]]), _spec([[0.0, 0.0]]))
    assert g.values[0, 0] == 0.0 and g.values[0, 1] == 1.0


def test_irm_complement_and_scale(rng):
    for _ in range(200):
        t, c = _random_complex(rng, (6, 9)), _random_complex(rng, (6, 9))
        a = irm(_spec(t), _spec(c)).values
        b = irm(_spec(c), _spec(t)).values
        np.testing.assert_allclose(a**2 + b**2, 1.0, atol=1e-9)
        scale = rng.uniform(1e-3, 1e3)
        np.testing.assert_allclose(irm(_spec(scale * t), _spec(scale * c)).values, a, atol=1e-12)


def test_irm_monotone_in_target(rng):
    t, c = _random_complex(rng, (4, 5)), _random_complex(rng, (4, 5))
    before = irm(_spec(t), _spec(c)).values
    t2 = t.copy()
    t2[2, 3] *= 1.5
    after = irm(_spec(t2), _spec(c)).values
    assert after[2, 3] > before[2, 3]


def test_irm_shape_mismatch():
    with pytest.raises(ValueError):
        irm(_spec(np.ones((2, 3))), _spec(np.ones((3, 3))))


def _irm_mel_oracle(tgt, con, weights):
    n_t, n_f = tgt.shape
    n_m = weights.shape[0]
    out = np.zeros((n_t, n_m))
    for t in range(n_t):
        for m in range(n_m):
            pt = sum(weights[m, f] * abs(tgt[t, f]) ** 2 for f in range(n_f))
            pc = sum(weights[m, f] * abs(con[t, f]) ** 2 for f in range(n_f))
            out[t, m] = math.sqrt(pt / (pt + pc)) if pt + pc > 0 else 0.0
    return out


def test_irm_mel_matches_loop_oracle(rng):
    fb = mel_filterbank(16000, 256, 16)
    for _ in range(5):
        t, c = _random_complex(rng, (3, 129)), _random_complex(rng, (3, 129))
        ours = irm_mel(_spec(t), _spec(c), fb).values
        np.testing.assert_allclose(ours, _irm_mel_oracle(t, c, fb.weights), atol=1e-6)


def test_irm_mel_examples(rng):
    fb = mel_filterbank(16000, 1024, 64)
    t = _random_complex(rng, (4, 513))
    assert np.all(irm_mel(_spec(t), _spec(np.zeros_like(t)), fb).values == 1.0)
    np.testing.assert_allclose(irm_mel(_spec(t), _spec(t), fb).values, 1 / math.sqrt(2), atol=1e-12)
    with pytest.raises(ValueError):
        irm_mel(_spec(np.ones((2, 257))), _spec(np.ones((2, 257))), fb)


def test_g_norm():
    g = g_norm(_spec([[1.0, 2.0, 5.0], [3.0, 4.0, 1.0]]))
    assert g.values.max() == 1.0 and g.values.min() == 0.0
    mid = g.values[(g.values > 0) & (g.values < 1)]
    assert mid.size == 3
    assert np.all(g_norm(_spec(np.full((3, 3), 7.0))).values == 0.0)


def test_resize_examples():
    checker = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
    g = AcousticPrior(checker, "irm", (4, 4))
    np.testing.assert_allclose(resize(g, (2, 2)).values, 0.5)
    np.testing.assert_array_equal(resize(g, (4, 4)).values, checker)
    const = AcousticPrior(np.full((7, 13), 0.3), "norm", (7, 13))
    for shape in ((1, 1), (3, 5), (16, 40), (7, 13)):
        np.testing.assert_allclose(resize(const, shape).values, 0.3, atol=1e-12)


def test_resize_matches_cell_mean_oracle(rng):
    # integer factors: area average is the plain block mean
    values = rng.uniform(size=(12, 20))
    blocks = values.reshape(3, 4, 5, 4).mean(axis=(1, 3))
    np.testing.assert_allclose(resize_array(values, (3, 5)), blocks, atol=1e-12)


def test_resize_preserves_mean_for_non_integer_factors(rng):
    values = rng.uniform(size=(10, 7))
    out = resize_array(values, (4, 3))
    np.testing.assert_allclose(out.mean(), values.mean(), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(0, 1)),
    st.integers(1, 20),
    st.integers(1, 20),
)
def test_resize_stays_in_unit_interval(values, rows, cols):
    out = resize(AcousticPrior(values, "irm", values.shape), (rows, cols)).values
    assert out.shape == (rows, cols)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_prior_validation_and_flatten():
    with pytest.raises(ValueError):
        AcousticPrior(np.array([[1.5]]), "irm", (1, 1))
    with pytest.raises(ValueError):
        AcousticPrior(np.array([[0.5]]), "mask", (1, 1))
    g = AcousticPrior(np.arange(6).reshape(2, 3) / 10, "irm", (2, 3))
    np.testing.assert_array_equal(flatten(g), [0, 0.1, 0.2, 0.3, 0.4, 0.5])
    with pytest.raises(ValueError):
        resize(g, (0, 3))
