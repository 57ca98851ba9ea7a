"""Stochastic first-order oracles with mini-batching and noise injection.

Composes with :mod:`ppsq.quantize` to form the quantized gradient oracle
driving the solvers.
"""

import numpy as np

from .quantize import message_bits, pps_encode, pps_simplified_encode


class GradientOracle:
    """Stochastic gradient oracle around a deterministic gradient map.

    Parameters
    ----------
    gradient_fn : callable
        x -> exact gradient.
    dim : int
        Dimension of the gradient.
    noise_scale : float, optional
        Per-component standard deviation of additive Gaussian noise.  Zero
        gives the exact oracle.
    l1_bound : float, optional
        If set, every draw is rescaled onto the l1 ball of this radius, so
        ``||g||_1 <= l1_bound`` holds for every sample.
    value_fn : callable, optional
        x -> objective value, used only for telemetry.
    sampler : callable, optional
        Custom draw (x, rng) -> gradient sample overriding the built-in
        Gaussian model.
    """

    def __init__(self, gradient_fn, dim, noise_scale=0.0, l1_bound=None,
                 value_fn=None, sampler=None):
        if noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        self.gradient_fn = gradient_fn
        self.dim = int(dim)
        self.noise_scale = float(noise_scale)
        self.l1_bound = l1_bound
        self.value_fn = value_fn
        self.sampler = sampler

    def draw(self, x, rng):
        """Single stochastic gradient sample at ``x``."""
        if self.sampler is not None:
            g = np.asarray(self.sampler(x, rng), dtype=float)
        else:
            g = np.asarray(self.gradient_fn(x), dtype=float)
            if self.noise_scale > 0:
                g = g + rng.normal(0.0, self.noise_scale, self.dim)
        if self.l1_bound is not None:
            l1 = np.abs(g).sum()
            if l1 > self.l1_bound:
                g = g * (self.l1_bound / l1)
        return g

    def minibatch(self, x, r, rng):
        """Arithmetic mean of ``r`` independent draws at ``x``."""
        return minibatch(self, x, r, rng)

    def value(self, x):
        if self.value_fn is None:
            return float("nan")
        return float(self.value_fn(x))

    def empirical_sigma(self, x, trials, rng):
        """Sample-based sub-Gaussian proxy: sqrt(mean ||g - grad f||^2).

        The truncated-noise model has no closed-form sub-Gaussian constant;
        the schedules only need an upper bound, and this estimate is the
        reported one.
        """
        exact = np.asarray(self.gradient_fn(x), dtype=float)
        acc = 0.0
        for _ in range(trials):
            d = self.draw(x, rng) - exact
            acc += float(d @ d)
        return float(np.sqrt(acc / trials))


def minibatch(oracle, x, r, rng):
    """Average of r independent oracle draws at ``x``."""
    if r < 1:
        raise ValueError("batch size r must be >= 1")
    acc = oracle.draw(x, rng)
    for _ in range(r - 1):
        acc = acc + oracle.draw(x, rng)
    return acc / r


def quantized_call(oracle, x, r, M, rng, simplified=False, float_bits=64):
    """Mini-batched gradient, PPS-encoded; returns (message, bit cost)."""
    g = minibatch(oracle, x, r, rng)
    if simplified:
        q = pps_simplified_encode(g, M, rng)
    else:
        q = pps_encode(g, M, rng)
    return q, message_bits(q, float_bits)
