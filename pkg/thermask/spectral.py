"""
2D discrete Fourier transforms on real images and the differentiable spectral filter.

Convention: unnormalized forward transform, 1/(h*w) on the inverse. numpy's
pocketfft backend handles every size, power of two or not.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import ShapeError, SpectralResidueError

# Largest imaginary part ifft2 may discard, relative to the largest real part
RESIDUE_TOLERANCE = 1e-6


@dataclass
class ComplexGrid:
    """A height x width complex array stored as separate real and imaginary parts."""

    height: int
    width: int
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        expected = (self.height, self.width)
        if self.re.shape != expected or self.im.shape != expected:
            raise ShapeError(f"ComplexGrid parts {self.re.shape}/{self.im.shape} do not match {expected}")

    @classmethod
    def from_complex(cls, z):
        return cls(z.shape[0], z.shape[1], np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def to_complex(self):
        return self.re + 1j * self.im

    def power(self):
        return self.re * self.re + self.im * self.im


def _as_array(img):
    if isinstance(img, Tensor):
        data = img.data
    elif hasattr(img, "pixels"):
        data = img.pixels
    else:
        data = img
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"expected a non-empty 2D image, got shape {arr.shape}")
    return arr


def fft2(img):
    """
    Forward 2D DFT with the DC coefficient at index (0, 0).

    Args:
        img: GrayImage, Tensor or array of shape [h, w]

    Returns:
        ComplexGrid: Unnormalized spectrum
    """
    return ComplexGrid.from_complex(np.fft.fft2(_as_array(img)))


def _check_residue(z):
    max_re = float(np.abs(z.real).max()) if z.size else 0.0
    max_im = float(np.abs(z.imag).max()) if z.size else 0.0
    if max_im > RESIDUE_TOLERANCE * max(max_re, 1e-12):
        raise SpectralResidueError(
            f"inverse FFT imaginary residue {max_im:.3e} exceeds {RESIDUE_TOLERANCE:g} x max real "
            f"{max_re:.3e}; the filter is probably not symmetric"
        )


def ifft2(spec, check_real=True):
    """
    Inverse 2D DFT, normalized by 1/(h*w), returning the real part.

    Args:
        spec (ComplexGrid): Spectrum with DC at (0, 0)
        check_real (bool): Raise SpectralResidueError if the imaginary part is not negligible

    Returns:
        Tensor: Real image [h, w]
    """
    z = np.fft.ifft2(spec.to_complex())
    if check_real:
        _check_residue(z)
    return Tensor(z.real)


def center_shift(spec):
    """Swap quadrants so the DC coefficient sits at (h // 2, w // 2)."""
    return ComplexGrid.from_complex(np.fft.fftshift(spec.to_complex()))


def center_unshift(spec):
    """Inverse of center_shift."""
    return ComplexGrid.from_complex(np.fft.ifftshift(spec.to_complex()))


def filter_spectrum(img, centered_filter):
    """
    Multiply the centered spectrum of a real image by a real filter and transform back.

    Both inputs are differentiable. A filter that is symmetric about the spectral
    center keeps the spectrum Hermitian, so the result is real.

    Args:
        img (Tensor): Real image [h, w]
        centered_filter (Tensor): Filter values [h, w] on the center-shifted grid

    Returns:
        Tensor: Filtered real image [h, w]
    """
    img, centered_filter = as_tensor(img), as_tensor(centered_filter)
    if img.ndim != 2 or img.shape != centered_filter.shape:
        raise ShapeError(f"filter_spectrum needs matching 2D shapes, got {img.shape} and {centered_filter.shape}")
    spectrum = np.fft.fft2(img.data)
    gain = np.fft.ifftshift(centered_filter.data)
    z = np.fft.ifft2(spectrum * gain)
    _check_residue(z)

    def vjp(g):
        back = np.fft.ifft2(g)
        g_img = np.fft.fft2(gain * back).real
        g_filter = np.fft.fftshift((spectrum * back).real)
        return g_img, g_filter

    return Tensor._result(z.real.astype(img.dtype), (img, centered_filter), vjp)
