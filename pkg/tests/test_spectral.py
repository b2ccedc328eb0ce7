"""
Tests for the 2D transforms and the differentiable spectral filter.
"""

import numpy as np
import pytest

from thermask.autodiff import Tape, Tensor
from thermask.errors import SpectralResidueError
from thermask.gradcheck import grad_check
from thermask.spectral import ComplexGrid, center_shift, center_unshift, fft2, filter_spectrum, ifft2


def naive_dft(x, sign=-1):
    h, w = x.shape
    u = np.arange(h)[:, None]
    v = np.arange(w)[None, :]
    out = np.zeros((h, w), dtype=np.complex128)
    for a in range(h):
        for b in range(w):
            out[a, b] = (x * np.exp(sign * 2j * np.pi * (a * u / h + b * v / w))).sum()
    return out


def radial_gain(h, w, rate):
    u = np.arange(h)[:, None] - h // 2
    v = np.arange(w)[None, :] - w // 2
    return np.exp(-rate * (u * u + v * v))


SIZES = [(1, 1), (7, 5), (13, 7), (16, 16), (33, 31)]


class TestForward:

    def test_constant_image_has_only_dc(self):
        spec = fft2(np.full((6, 10), 2.5)).to_complex()
        assert spec[0, 0] == pytest.approx(2.5 * 60)
        spec[0, 0] = 0
        assert np.abs(spec).max() < 1e-9

    def test_impulse_gives_flat_spectrum(self):
        x = np.zeros((5, 4))
        x[0, 0] = 1.0
        np.testing.assert_allclose(fft2(x).to_complex(), np.ones((5, 4)), atol=1e-12)

    @pytest.mark.parametrize("shape", SIZES)
    def test_matches_naive_dft(self, rng, shape):
        x = rng.normal(size=shape)
        np.testing.assert_allclose(fft2(x).to_complex(), naive_dft(x), rtol=0, atol=1e-8)

    @pytest.mark.parametrize("shape", SIZES)
    def test_parseval(self, rng, shape):
        x = rng.normal(size=shape)
        energy = (x * x).sum()
        assert fft2(x).power().sum() / x.size == pytest.approx(energy, rel=1e-8)


class TestInverse:

    @pytest.mark.parametrize("shape", SIZES + [(32, 32)])
    def test_roundtrip(self, rng, shape):
        x = rng.normal(size=shape)
        assert np.abs(ifft2(fft2(x)).data - x).max() < 1e-9

    def test_dc_only_spectrum_gives_constant(self):
        spec = np.zeros((4, 6), dtype=np.complex128)
        spec[0, 0] = 3.0 * 24
        np.testing.assert_allclose(ifft2(ComplexGrid.from_complex(spec)).data, 3.0, atol=1e-12)

    def test_hermitian_spectrum_matches_naive_inverse(self, rng):
        spec = np.fft.fft2(rng.normal(size=(9, 6)))
        expected = naive_dft(spec, sign=1).real / spec.size
        np.testing.assert_allclose(ifft2(ComplexGrid.from_complex(spec)).data, expected, atol=1e-8)

    def test_imaginary_residue_raises(self, rng):
        spec = np.fft.fft2(rng.normal(size=(8, 8)))
        spec[1, 2] += 50j
        with pytest.raises(SpectralResidueError):
            ifft2(ComplexGrid.from_complex(spec))

    def test_shift_roundtrip(self, rng):
        spec = fft2(rng.normal(size=(7, 10)))
        shifted = center_shift(spec)
        assert shifted.to_complex()[7 // 2, 10 // 2] == spec.to_complex()[0, 0]
        np.testing.assert_array_equal(center_unshift(shifted).to_complex(), spec.to_complex())


class TestFilterSpectrum:

    def test_all_pass_filter_is_identity(self, rng):
        x = rng.normal(size=(6, 9))
        out = filter_spectrum(Tensor(x), Tensor(np.ones((6, 9))))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_asymmetric_filter_raises(self, rng):
        gain = np.ones((8, 8))
        gain[4, 5] = 3.0
        with pytest.raises(SpectralResidueError):
            filter_spectrum(Tensor(rng.normal(size=(8, 8))), Tensor(gain))

    @pytest.mark.parametrize("shape", [(8, 8), (7, 5), (6, 9)])
    def test_image_gradient(self, rng, shape):
        img = Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        field = Tensor(radial_gain(*shape, 0.1), dtype=np.float64)
        weights = rng.normal(size=shape)
        report = grad_check(lambda: (filter_spectrum(img, field) * weights).sum(), {"img": img}, tol=1e-5)
        assert report.passed

    @pytest.mark.parametrize("shape", [(8, 8), (7, 5)])
    def test_filter_gradient_along_symmetric_direction(self, rng, shape):
        x = rng.normal(size=shape)
        weights = rng.normal(size=shape)
        gain, direction = radial_gain(*shape, 0.1), radial_gain(*shape, 0.03)
        field = Tensor(gain, requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            tape.backward((filter_spectrum(Tensor(x), field) * weights).sum())

        def loss(t):
            return float((filter_spectrum(Tensor(x), Tensor(gain + t * direction)).data * weights).sum())

        step = 1e-5
        numeric = (loss(step) - loss(-step)) / (2 * step)
        assert (field.grad * direction).sum() == pytest.approx(numeric, rel=1e-6, abs=1e-9)
