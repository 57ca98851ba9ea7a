"""Coefficient sequences, sample-size policies, and convergence-bound evaluation.

The accelerated methods are driven by four sequences: step weights alpha_t,
regularisation levels beta_t, batch sizes r_t, and quantizer sample counts
M_t.  Validity of (alpha, beta) rests on three conditions:

    1. alpha_0 in (0, 1]
    2. L < beta_t <= beta_{t+1}
    3. alpha_t^2 * beta_t <= beta_{t-1} * A_t        (t >= 1, A_t = sum alpha_i)

This module generates the default sequences, validates arbitrary ones,
computes the high-probability constants, and evaluates the epsilon(T, delta)
convergence bound.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .quantize import pps_sigma2

SQRT2 = math.sqrt(2.0)

Violation = namedtuple("Violation", "condition t detail")

CoeffIdentity = namedtuple("CoeffIdentity", "sum_ratio closed_form tail_ratio")


@dataclass(frozen=True)
class TheoryConstants:
    """High-probability constants of the convergence bounds.

    C1..C4 belong to the primal-dual bound (log(5/delta) scale), C1p/C2p to
    the primal bound (log(4/delta) scale).  J is the poly-log factor J(T),
    an input defaulting to 1 since no closed form is available.
    """

    delta: float
    J: float
    C1: float
    C2: float
    C3: float
    C4: float
    C1p: float
    C2p: float


def default_alpha(t):
    """Default step weight (t + 1) / (2 sqrt(2))."""
    return (t + 1) / (2.0 * SQRT2)


def default_beta(t, L, R, sigma_rm):
    """Default regularisation level L + sigma_rm (t+2)^{3/2} / (2^{1/4} sqrt(3) R)."""
    if R <= 0:
        raise ValueError("R must be positive")
    return L + sigma_rm * (t + 2) ** 1.5 / (2.0 ** 0.25 * math.sqrt(3.0) * R)


def _as_fn(value):
    if callable(value):
        return value
    return lambda t, v=value: v


class Schedule:
    """Immutable bundle of the sequences alpha_t, beta_t, r_t, M_t.

    Each component may be a scalar or a callable of t.  Prefix sums
    A_t = sum_{i<=t} alpha_i and the averaging weights tau_t = alpha_{t+1} /
    A_{t+1} are derived.  ``sigma_rm`` optionally records the variance proxy
    sequence consumed by beta and by the bound evaluator.
    """

    def __init__(self, alpha, beta, r=1, M=1, sigma_rm=None):
        self._alpha = _as_fn(alpha)
        self._beta = _as_fn(beta)
        self._r = _as_fn(r)
        self._M = _as_fn(M)
        self._sigma_rm = _as_fn(sigma_rm) if sigma_rm is not None else None
        self._A = [float(self._alpha(0))]

    def alpha(self, t):
        return float(self._alpha(t))

    def beta(self, t):
        return float(self._beta(t))

    def r(self, t):
        return int(self._r(t))

    def M(self, t):
        return int(self._M(t))

    def sigma_rm(self, t):
        if self._sigma_rm is None:
            return 0.0
        return float(self._sigma_rm(t))

    @property
    def has_sigma(self):
        return self._sigma_rm is not None

    def A(self, t):
        """Prefix sum A_t = sum_{i=0}^t alpha_i."""
        while len(self._A) <= t:
            i = len(self._A)
            self._A.append(self._A[-1] + float(self._alpha(i)))
        return self._A[t]

    def tau(self, t):
        """Averaging weight tau_t = alpha_{t+1} / A_{t+1}."""
        return self.alpha(t + 1) / self.A(t + 1)

    @classmethod
    def default(cls, L, R, *, n, B, sigma, r=1, M=1, simplified=False,
                quantized=True):
        """Default (alpha, beta) pair tied to the iteration's variance proxy.

        ``n`` is the dimension of the communicated vector.  ``r`` and ``M``
        may be scalars or callables of t; the proxy sigma_{r_t,M_t} is
        recomputed from the active pair each iteration.  With
        ``quantized=False`` (identity compressor) the proxy keeps only the
        mini-batching term 50 sigma^2 / r.
        """
        r_fn = _as_fn(r)
        M_fn = _as_fn(M)

        if quantized:
            def sigma_rm(t):
                return math.sqrt(
                    pps_sigma2(r_fn(t), M_fn(t), n, B, sigma, simplified=simplified)
                )
        else:
            def sigma_rm(t):
                return math.sqrt(50.0 * sigma * sigma / r_fn(t))

        def beta(t):
            return default_beta(t, L, R, sigma_rm(t))

        return cls(default_alpha, beta, r=r_fn, M=M_fn, sigma_rm=sigma_rm)


def validate(schedule, L, T, allow_beta_equal_L=False):
    """Check the three coefficient conditions for t = 0..T.

    Returns a list of :class:`Violation` records; empty means valid.  The
    noiseless limit beta_t == L is tolerated when ``allow_beta_equal_L`` is
    set (the variance terms it divides vanish in that regime).
    """
    out = []
    a0 = schedule.alpha(0)
    if not 0 < a0 <= 1:
        out.append(Violation(1, 0, f"alpha_0 = {a0} not in (0, 1]"))
    beta_prev = None
    for t in range(T + 1):
        b = schedule.beta(t)
        if b < L or (b == L and not allow_beta_equal_L):
            out.append(Violation(2, t, f"beta_{t} = {b} <= L = {L}"))
        if beta_prev is not None:
            if b < beta_prev:
                out.append(Violation(2, t, f"beta_{t} = {b} < beta_{t-1} = {beta_prev}"))
            lhs = schedule.alpha(t) ** 2 * b
            rhs = beta_prev * schedule.A(t)
            if lhs > rhs * (1 + 1e-12):
                out.append(Violation(3, t, f"alpha_t^2 beta_t = {lhs} > {rhs}"))
        beta_prev = b
    return out


def m_from_r(r, n, B, sigma):
    """Sample count matching the batch size: M = 2 (1 - 1/n) B^2 r / (e sigma^2).

    Rounded up and floored at 1; the quantizer's variance contribution then
    matches the mini-batching one.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive (use r_from_m instead)")
    if r < 1:
        raise ValueError("r must be >= 1")
    raw = 2.0 * (1.0 - 1.0 / n) * B * B * r / (math.e * sigma * sigma)
    return max(1, math.ceil(raw))


def r_from_m(M, n, B, sigma):
    """Batch size matching the sample count: r = e sigma^2 M / (2 (1 - 1/n) B^2)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    denom = 2.0 * (1.0 - 1.0 / n) * B * B
    if denom <= 0:
        raise ValueError("need n > 1 and B > 0")
    raw = math.e * sigma * sigma * M / denom
    return max(1, math.ceil(raw))


def _policy_factor(constants, L, R, A_norm):
    return max(
        18.0 * constants.C2 ** 2,
        (constants.C3 + constants.C4 * L / (A_norm * R)) ** 2,
    )


def variable_r(alpha_t, eps, L, sigma, constants, R, A_norm):
    """Per-iteration batch size of the variable-batch policy.

    r_t = max{1, 34 sigma^2 alpha_t / (eps L) * max{18 C2^2,
    (C3 + C4 L / (||A||_2 R))^2}}, rounded up.
    """
    if eps <= 0 or L <= 0 or R <= 0 or A_norm <= 0:
        raise ValueError("eps, L, R, A_norm must be positive")
    raw = 34.0 * sigma * sigma * alpha_t / (eps * L) * _policy_factor(constants, L, R, A_norm)
    return max(1, math.ceil(raw))


def variable_M(alpha_t, eps, L, n, B, constants, R, A_norm):
    """Per-iteration sample count of the variable-sampling policy.

    M_t = max{1, 68 (1 - 1/n) B^2 alpha_t / (eps e L) * max{18 C2^2,
    (C3 + C4 L / (||A||_2 R))^2}}, rounded up.
    """
    if eps <= 0 or L <= 0 or R <= 0 or A_norm <= 0:
        raise ValueError("eps, L, R, A_norm must be positive")
    raw = (
        68.0 * (1.0 - 1.0 / n) * B * B * alpha_t / (eps * math.e * L)
        * _policy_factor(constants, L, R, A_norm)
    )
    return max(1, math.ceil(raw))


def theory_constants(delta, J=1.0):
    """High-probability constants for the primal-dual and primal bounds."""
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    if J < 0:
        raise ValueError("J must be non-negative")
    s5 = math.sqrt(3.0 * math.log(5.0 / delta))
    s4 = math.sqrt(3.0 * math.log(4.0 / delta))
    c1 = (2.0 * J + SQRT2 - 1.0) * (SQRT2 + (SQRT2 + 1.0) * s5) + SQRT2 - 2.0
    c2 = 1.0 + math.log(5.0 / delta)
    c3 = c1 + 2.0 * SQRT2 * J * (1.0 + s5)
    c4 = SQRT2 * (1.0 + s5)
    c1p = (2.0 * J + SQRT2 - 1.0) * (SQRT2 + (SQRT2 + 1.0) * s4) + SQRT2 - 2.0
    c2p = 1.0 + math.log(4.0 / delta)
    return TheoryConstants(delta, J, c1, c2, c3, c4, c1p, c2p)


def epsilon_bound(T, delta, schedule, R, L, A_norm=None, sigmas=None, *,
                  primal=False, J=1.0):
    """Evaluate the three-term epsilon(T, delta, alpha, beta, r, M) bound.

    beta_T R^2 / (2 A_T)
      + (C3 R + C4 L / ||A||_2) / A_T * sqrt(sum alpha_t^2 sigma_t^2)
      + C2 / A_T * sum A_t sigma_t^2 / (beta_t - L)

    The primal variant replaces the middle coefficient by C1p R and C2 by
    C2p and needs no ||A||_2.  Iterations with sigma_t = 0 contribute nothing
    to the variance terms; otherwise beta_t <= L is an error.
    """
    consts = theory_constants(delta, J)
    if sigmas is None:
        sigmas = schedule.sigma_rm
    if not primal and A_norm is None:
        raise ValueError("A_norm required for the primal-dual bound")
    A_T = schedule.A(T)
    sq_sum = 0.0
    weighted = 0.0
    for t in range(T + 1):
        s2 = float(sigmas(t)) ** 2
        if s2 == 0.0:
            continue
        gap = schedule.beta(t) - L
        if gap <= 0:
            raise ValueError(f"beta_{t} <= L with nonzero variance")
        sq_sum += schedule.alpha(t) ** 2 * s2
        weighted += schedule.A(t) * s2 / gap
    term1 = schedule.beta(T) * R * R / (2.0 * A_T)
    if primal:
        coeff = consts.C1p * R
        c_last = consts.C2p
    else:
        coeff = consts.C3 * R + consts.C4 * L / A_norm
        c_last = consts.C2
    return term1 + coeff / A_T * math.sqrt(sq_sum) + c_last / A_T * weighted


def epsilon_bound_sweep(T_max, delta, schedule, R, L, A_norm=None, sigmas=None,
                        *, primal=False, J=1.0):
    """epsilon(T) for every T = 0..T_max in one incremental pass.

    Equivalent to calling :func:`epsilon_bound` per horizon but O(T_max)
    overall; used by the target-accuracy stopping rule.
    """
    consts = theory_constants(delta, J)
    if sigmas is None:
        sigmas = schedule.sigma_rm
    if not primal and A_norm is None:
        raise ValueError("A_norm required for the primal-dual bound")
    if primal:
        coeff = consts.C1p * R
        c_last = consts.C2p
    else:
        coeff = consts.C3 * R + consts.C4 * L / A_norm
        c_last = consts.C2
    out = np.empty(T_max + 1)
    sq_sum = 0.0
    weighted = 0.0
    for t in range(T_max + 1):
        s2 = float(sigmas(t)) ** 2
        if s2 > 0.0:
            gap = schedule.beta(t) - L
            if gap <= 0:
                raise ValueError(f"beta_{t} <= L with nonzero variance")
            sq_sum += schedule.alpha(t) ** 2 * s2
            weighted += schedule.A(t) * s2 / gap
        A_t = schedule.A(t)
        out[t] = (schedule.beta(t) * R * R / (2.0 * A_t)
                  + coeff / A_t * math.sqrt(sq_sum)
                  + c_last / A_t * weighted)
    return out


def coeff_identities(a, T):
    """Both sides of the closed-form alpha-sum identity for alpha_t = (t+1)/a.

    Returns (sum_ratio, closed_form, tail_ratio) where

        sum_ratio   = (1/A_T) sqrt(sum alpha_t^2)
        closed_form = sqrt(2 (2T + 3) / (3 (T + 1) (T + 2)))
        tail_ratio  = (1/A_T) sum A_t / (t + 2)^{3/2}

    The first two agree exactly; tail_ratio is bounded by (2/3)/sqrt(T) and
    sum_ratio by (2/sqrt(3))/sqrt(T).
    """
    if a <= 0 or T < 0:
        raise ValueError("need a > 0 and T >= 0")
    t = np.arange(T + 1, dtype=float)
    alpha = (t + 1.0) / a
    A = np.cumsum(alpha)
    sum_ratio = math.sqrt(float(np.sum(alpha ** 2))) / A[-1]
    closed = math.sqrt(2.0 * (2.0 * T + 3.0) / (3.0 * (T + 1.0) * (T + 2.0)))
    tail = float(np.sum(A / (t + 2.0) ** 1.5)) / A[-1]
    return CoeffIdentity(sum_ratio, closed, tail)


def choice1_horizon(eps, delta, r, L, R, sigma, A_norm, J=1.0):
    """Iteration count of the constant-batch policy reaching accuracy eps.

    T = max{2 sqrt(3) sqrt(L R^2 / eps),
            1200 (2^{1/4} C2 + C3)^2 sigma^2 R^2 / (r eps^2),
            1200 C4^2 sigma^2 L^2 / (r eps^2 ||A||_2^2)}
    """
    if eps <= 0 or L <= 0 or R <= 0 or A_norm <= 0 or r < 1:
        raise ValueError("eps, L, R, A_norm must be positive and r >= 1")
    c = theory_constants(delta, J)
    t1 = 2.0 * math.sqrt(3.0) * math.sqrt(L * R * R / eps)
    t2 = 1200.0 * (2.0 ** 0.25 * c.C2 + c.C3) ** 2 * sigma ** 2 * R ** 2 / (r * eps ** 2)
    t3 = 1200.0 * c.C4 ** 2 * sigma ** 2 * L ** 2 / (r * eps ** 2 * A_norm ** 2)
    return max(1, math.ceil(max(t1, t2, t3)))
