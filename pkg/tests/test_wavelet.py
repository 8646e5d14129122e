import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msfet_e2v.autodiff import Tensor, finite_diff_check
from msfet_e2v.autodiff.functional import ShapeError
from msfet_e2v.wavelet import SubbandSet, dwt2, energy, iwt2

even = st.integers(1, 6).map(lambda n: 2 * n)
images = st.tuples(st.integers(1, 3), even, even).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-10, 10)))


def test_haar_oracle():
    s = dwt2(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert (s.ll.item(), s.lh.item(), s.hl.item(), s.hh.item()) == (5.0, 2.0, 1.0, 0.0)


def test_haar_inverse_oracle():
    x = iwt2(SubbandSet(*(np.array([[v]]) for v in (5.0, 2.0, 1.0, 0.0))))
    assert np.array_equal(x, [[1.0, 2.0], [3.0, 4.0]])


def test_constant_image():
    s = dwt2(np.full((2, 6, 4), 1.5))
    assert np.all(s.ll == 3.0)
    assert not (s.lh.any() or s.hl.any() or s.hh.any())


def test_shapes_and_zero_bands():
    s = dwt2(np.ones((3, 4, 4)))
    assert all(b.shape == (3, 2, 2) for b in s)
    assert not iwt2(SubbandSet(*(np.zeros((1, 2, 3)),) * 4)).any()


def test_odd_size_rejected():
    with pytest.raises(ShapeError):
        dwt2(np.ones((3, 5)))


def test_mismatched_bands_rejected():
    z = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        iwt2(SubbandSet(z, z, z, np.zeros((2, 3))))


def test_step_along_rows_lands_in_lh_only():
    # intensity changes between rows 2 and 3: blocks straddling it see top != bottom
    x = np.zeros((8, 8))
    x[3:] = 1.0
    s = dwt2(x)
    assert not s.hl.any() and not s.hh.any()
    assert s.lh[1].tolist() == [1.0] * 4 and not np.delete(s.lh, 1, axis=0).any()


def test_step_along_columns_lands_in_hl_only():
    x = np.zeros((8, 8))
    x[:, 5:] = 1.0
    s = dwt2(x)
    assert not s.lh.any() and not s.hh.any()
    assert s.hl[:, 2].tolist() == [1.0] * 4


def test_f32_roundtrip_precision(rng):
    x = rng.uniform(-10, 10, (8, 32, 32)).astype(np.float32)
    y = iwt2(dwt2(x))
    assert y.dtype == np.float32
    assert np.max(np.abs(y - x)) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(images)
def test_perfect_reconstruction_f64(x):
    assert np.max(np.abs(iwt2(dwt2(x)) - x), initial=0) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(images)
def test_energy_preserved(x):
    e = energy(x)
    assert abs(energy(dwt2(x)) - e) <= 1e-9 * max(e, 1.0)


@settings(max_examples=40, deadline=None)
@given(images, st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(x, a, b):
    y = np.flip(x, axis=-1)
    lhs = dwt2(a * x + b * y)
    for l, u, v in zip(lhs, dwt2(x), dwt2(y)):
        assert np.allclose(l, a * u + b * v, atol=1e-9)


def test_tensor_path_matches_numpy_and_grads(rng):
    x = rng.normal(size=(2, 4, 6))
    s = dwt2(Tensor(x, dtype=np.float64))
    for a, b in zip(s, dwt2(x)):
        assert np.array_equal(a.data, b)
    r = [rng.normal(size=(2, 2, 3)) for _ in range(4)]

    def f(t):
        return sum(((b * Tensor(w)).sum() for b, w in zip(dwt2(t), r)), Tensor(0.0))

    assert finite_diff_check(f, Tensor(x)) <= 1e-6
    g = lambda t: (iwt2(SubbandSet(t[0], t[1], t[2], t[3])) * Tensor(rng_img)).sum()
    rng_img = rng.normal(size=(4, 6))
    assert finite_diff_check(g, Tensor(rng.normal(size=(4, 2, 3)))) <= 1e-6
