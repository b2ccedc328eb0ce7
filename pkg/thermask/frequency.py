"""
Adaptive frequency-domain modulation: a learnable radial filter applied to the
centered spectrum of an image.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import Tape, Tensor, exp, sigmoid, softplus
from .layers import Module, Parameter
from .spectral import filter_spectrum

# alpha = sigmoid(alpha_raw) * (1 - ALPHA_MARGIN) stays strictly below 1
ALPHA_MARGIN = 1e-6

# softplus underflows to 0 for very negative inputs; this keeps beta and r positive
POSITIVE_FLOOR = 1e-12

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 1.0


class FilterVariant(str, Enum):
    LITERAL = "literal"  # alpha * exp(-beta (D/r)^2): peak at the center
    NOTCH = "notch"      # 1 - (1 - alpha) exp(-beta (D/r)^2): center scaled by alpha, periphery -> 1


def _inverse_softplus(y):
    y = max(float(y), 1e-300)
    return y + np.log(-np.expm1(-y))


class RadialFilterParams(Module):
    """The learnable (r, alpha, beta) triple, stored unconstrained."""

    def __init__(self, r_raw, alpha_raw, beta_raw, dtype=None):
        self.r_raw = Parameter(r_raw, name="r_raw", dtype=dtype)
        self.alpha_raw = Parameter(alpha_raw, name="alpha_raw", dtype=dtype)
        self.beta_raw = Parameter(beta_raw, name="beta_raw", dtype=dtype)

    @classmethod
    def from_values(cls, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, radius=1.0, dtype=None):
        """
        Parameters whose projections equal the given alpha, beta and radius.

        Args:
            alpha (float): In [0, 1 - ALPHA_MARGIN)
            beta (float): Positive
            radius (float): Positive
        """
        scaled = min(max(alpha / (1.0 - ALPHA_MARGIN), 1e-300), 1.0 - 1e-16)
        alpha_raw = np.log(scaled) - np.log1p(-scaled)
        return cls(_inverse_softplus(radius - POSITIVE_FLOOR),
                   alpha_raw,
                   _inverse_softplus(beta - POSITIVE_FLOOR),
                   dtype=dtype)

    @classmethod
    def for_image(cls, height, width, dtype=None):
        """Default initialization: alpha 0.5, beta 1, r = min(h, w) / 8."""
        return cls.from_values(DEFAULT_ALPHA, DEFAULT_BETA, min(height, width) / 8.0, dtype=dtype)

    def alpha(self):
        return sigmoid(self.alpha_raw) * (1.0 - ALPHA_MARGIN)

    def beta(self):
        return softplus(self.beta_raw) + POSITIVE_FLOOR

    def radius(self):
        return softplus(self.r_raw) + POSITIVE_FLOOR

    def values(self):
        """Projected (alpha, beta, radius) as floats."""
        return self.alpha().item(), self.beta().item(), self.radius().item()


@dataclass
class FilterField:
    height: int
    width: int
    values: Tensor
    variant: FilterVariant


def radial_distance(u, v, h, w):
    """Distance of (u, v) from the spectral center (h // 2, w // 2)."""
    return float(np.hypot(u - h // 2, v - w // 2))


def distance_grid(h, w):
    """radial_distance for every coordinate of an h x w grid."""
    u = np.arange(h)[:, None] - h // 2
    v = np.arange(w)[None, :] - w // 2
    return np.hypot(u, v)


def build_filter(params, h, w, variant=FilterVariant.NOTCH):
    """
    Evaluate H(u, v) on the centered h x w grid.

    Args:
        params (RadialFilterParams): Learnable parameters
        h (int): Height
        w (int): Width
        variant (FilterVariant): literal or notch form

    Returns:
        FilterField: Values differentiable w.r.t. all three parameters
    """
    variant = FilterVariant(variant)
    distance = Tensor(distance_grid(h, w), dtype=params.r_raw.dtype)
    falloff = exp(-(params.beta() * (distance / params.radius()) ** 2))
    if variant is FilterVariant.LITERAL:
        values = params.alpha() * falloff
    else:
        values = 1.0 - (1.0 - params.alpha()) * falloff
    return FilterField(height=h, width=w, values=values, variant=variant)


def afdm(img, params, variant=FilterVariant.NOTCH):
    """
    Filter an image's centered spectrum with H and return to the spatial domain.

    Args:
        img (Tensor): Real image [h, w]
        params (RadialFilterParams): Filter parameters
        variant (FilterVariant): literal or notch form

    Returns:
        Tensor: Filtered image [h, w]
    """
    h, w = img.shape
    field = build_filter(params, h, w, variant)
    return filter_spectrum(img, field.values)


def afdm_gradients(img, params, loss_fn, variant=FilterVariant.NOTCH):
    """
    Gradients of loss_fn(afdm(img)) with respect to the raw filter parameters.

    Args:
        img (Tensor): Real image
        params (RadialFilterParams): Filter parameters
        loss_fn (callable): Maps the filtered Tensor to a scalar Tensor

    Returns:
        dict: name -> gradient array
    """
    for p in params.parameters().values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn(afdm(img, params, variant))
        tape.backward(loss)
    return {name: (p.grad if p.grad is not None else np.zeros(p.shape))
            for name, p in params.parameters().items()}
