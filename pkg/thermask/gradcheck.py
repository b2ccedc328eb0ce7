"""
Finite-difference gradient oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import NonDeterministicError, PreconditionError


@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    error: float


@dataclass
class GradCheckReport:
    tol: float
    step: float
    entries: list = field(default_factory=list)

    @property
    def passed(self):
        return all(e.error < self.tol for e in self.entries)

    @property
    def max_error(self):
        return max((e.error for e in self.entries), default=0.0)

    def failures(self):
        return [e for e in self.entries if e.error >= self.tol]

    def worst_by_parameter(self):
        """Largest error per parameter name, in first-seen order."""
        worst = {}
        for e in self.entries:
            if e.name not in worst or e.error > worst[e.name].error:
                worst[e.name] = e
        return list(worst.values())


def _named(params):
    if isinstance(params, dict):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def _evaluate(f):
    return float(np.asarray(f().data, dtype=np.float64).reshape(-1)[0])


def grad_check(f, params, step=1e-5, tol=1e-4, sample=None, seed=0):
    """
    Compare tape gradients of a scalar function with central differences.

    For each checked element the error is
    |analytic - numeric| / max(1, |numeric|).

    Args:
        f (callable): Zero-argument function returning a scalar Tensor built from `params`
        params (dict or list): Tensors to differentiate, keyed by name
        step (float): Central-difference step
        tol (float): Pass threshold on the error
        sample (int, optional): Check at most this many seeded-random elements per tensor
        seed (int): Seed for element sampling

    Returns:
        GradCheckReport
    """
    if step <= 0:
        raise PreconditionError("grad_check step must be positive")
    named = _named(params)

    base = _evaluate(f)
    again = _evaluate(f)
    if base != again:
        raise NonDeterministicError(f"f returned {base!r} then {again!r} for identical parameters")

    for _, p in named:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = {name: (p.grad if p.grad is not None else np.zeros(p.shape)) for name, p in named}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, step=step)
    for name, p in named:
        original = np.array(p.data)
        flat_indices = np.arange(original.size)
        if sample is not None and sample < original.size:
            flat_indices = np.sort(rng.choice(original.size, size=sample, replace=False))
        for flat in flat_indices:
            index = np.unravel_index(flat, original.shape) if original.ndim else ()
            shifted = original.copy()
            shifted[index] = original[index] + step
            p.data = shifted
            plus = _evaluate(f)
            shifted[index] = original[index] - step
            p.data = shifted
            minus = _evaluate(f)
            p.data = original
            numeric = (plus - minus) / (2.0 * step)
            value = float(np.asarray(analytic[name])[index])
            report.entries.append(GradCheckEntry(
                name=name,
                index=tuple(int(i) for i in index),
                analytic=value,
                numeric=numeric,
                error=abs(value - numeric) / max(1.0, abs(numeric)),
            ))
    return report
