"""Accelerated stochastic gradient methods driven by the quantized oracle.

``primal_solve`` minimises a smooth convex f directly from (quantized)
gradient estimates.  ``primal_dual_solve`` runs the dual-averaging iteration
on the Lagrange dual of an affine-constrained problem while maintaining the
weighted primal average restored through the conjugate oracle.  Both consume
a :class:`ppsq.schedules.Schedule` and meter every communicated bit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import quantize
from .schedules import validate
from .trace import RunTrace

COMPRESSORS = ("pps", "pps_simplified", "identity")


class ScheduleError(ValueError):
    """Raised when a schedule violates the coefficient conditions."""

    def __init__(self, violations):
        self.violations = violations
        lines = "; ".join(
            f"condition {v.condition} at t={v.t}: {v.detail}" for v in violations[:5]
        )
        super().__init__(f"invalid schedule ({len(violations)} violations): {lines}")


@dataclass
class AffineProblem:
    """Dual-oracle description of min f(x) subject to Ax = b.

    ``conjugate_grad(theta, r, rng)`` returns the restored primal point
    grad F*(theta) averaged over an r-draw batch; ``conjugate_value`` is the
    matching zeroth-order oracle.  ``L`` bounds the dual gradient's Lipschitz
    constant and ``R`` the dual solution norm.
    """

    A: np.ndarray
    b: np.ndarray
    conjugate_grad: object
    conjugate_value: object
    L: float
    R: float
    primal_value: object = None
    x_star: np.ndarray = None
    f_star: float = None
    deterministic_value: bool = True

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.A.shape[0] != self.b.size:
            raise ValueError("A rows must match b")
        if self.L <= 0 or self.R <= 0:
            raise ValueError("L and R must be positive")

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def A_norm(self):
        return float(np.linalg.norm(self.A, 2))


def quadratic_affine_problem(local, A, b, *, noise_scale=0.0, R=None,
                             R_slack=1.1):
    """Affine-constrained quadratic with oracles wired up and KKT reference.

    ``local`` is a :class:`ppsq.problems.QuadraticLocal`.  Optional Gaussian
    noise on the conjugate gradient models a stochastic oracle; the same draw
    feeds both the dual gradient and the primal restoration.
    """
    from .problems import quadratic_kkt_solution

    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x_star, lam_kkt, f_star = quadratic_kkt_solution(local, A, b)
    # the solver's dual iterate converges to -lam_kkt
    L = float(np.linalg.norm(A @ local._Q_inv @ A.T, 2))
    if R is None:
        R = max(R_slack * float(np.linalg.norm(lam_kkt)), 1e-6)

    def conj_grad(theta, r=1, rng=None):
        g = local.conjugate_grad(theta)
        if noise_scale > 0 and rng is not None:
            g = g + rng.normal(0.0, noise_scale, (r, local.dim)).mean(axis=0)
        return g

    def conj_value(theta, r=1, rng=None):
        return local.conjugate_value(theta)

    return AffineProblem(
        A, b, conj_grad, conj_value, L=L, R=float(R),
        primal_value=local.value, x_star=x_star, f_star=float(f_star),
    )


def dual_oracle(problem, lam, rng=None, r=1):
    """Stochastic dual gradient b - A grad F*(-A^T lam)."""
    theta = -problem.A.T @ np.asarray(lam, dtype=float)
    return problem.b - problem.A @ problem.conjugate_grad(theta, r, rng)


def dual_value(problem, lam, rng=None, r=1):
    """Dual objective lam . b + F*(-A^T lam)."""
    lam = np.asarray(lam, dtype=float)
    theta = -problem.A.T @ lam
    return float(lam @ problem.b) + float(problem.conjugate_value(theta, r, rng))


def restore_primal(problem, theta, rng=None, r=1):
    """Primal maximiser of theta . x - F(x): grad F*(theta)."""
    return problem.conjugate_grad(np.asarray(theta, dtype=float), r, rng)


def feasibility_gap(problem, x):
    """Constraint residual ||Ax - b||."""
    return float(np.linalg.norm(problem.A @ np.asarray(x, dtype=float) - problem.b))


@dataclass
class PrimalDualResult:
    lambda_T: np.ndarray
    x_T: np.ndarray
    trace: RunTrace
    messages: list = None
    decoded: list = None
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)

    def summary(self):
        return {
            "dual_value": self.trace.final("dual_value"),
            "primal_gap": self.trace.final("primal_gap"),
            "gap": self.trace.final("gap"),
            "bits": self.trace.final("bits"),
            "oracle_calls": self.trace.final("oracle_calls"),
        }


@dataclass
class PrimalResult:
    x_T: np.ndarray
    trace: RunTrace
    messages: list = None
    decoded: list = None


def _check_schedule(schedule, L, T):
    noiseless = schedule.has_sigma and all(
        schedule.sigma_rm(t) == 0.0 for t in range(T + 1)
    )
    violations = validate(schedule, L, T, allow_beta_equal_L=noiseless)
    if violations:
        raise ScheduleError(violations)


def _compress(g, M, rng, compressor, float_bits, wire=False):
    """Quantize one gradient; returns (decoded, message, bits)."""
    if compressor == "identity":
        return g, None, g.size * float_bits
    if compressor == "pps":
        q = quantize.pps_encode(g, M, rng)
    elif compressor == "pps_simplified":
        q = quantize.pps_simplified_encode(g, M, rng)
    else:
        raise ValueError(f"unknown compressor {compressor!r}")
    return quantize.pps_decode(q), q, quantize.message_bits(q, float_bits,
                                                            wire=wire)


def _wire_mode(bit_meter):
    if bit_meter not in ("nominal", "wire"):
        raise ValueError("bit_meter must be 'nominal' or 'wire'")
    return bit_meter == "wire"


def _finite_or_raise(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ArithmeticError(f"non-finite values in {what}")


def primal_dual_solve(problem, schedule, T, rng, *, compressor="pps",
                      float_bits=64, bit_meter="nominal",
                      record_messages=False, eval_samples=64, eval_seed=0):
    """Accelerated primal-dual method on the dual of an affine-constrained
    problem, with the gradient message quantized before use.

    Per iteration: the conjugate oracle restores a primal point from the
    current dual query, the induced dual gradient is compressed, and the dual
    averaging / momentum recursion advances.  The primal output is the
    alpha-weighted running average of the restored points, sharing the
    oracle's sample batch.

    Telemetry draws come from a stream keyed by ``eval_seed`` alone, so
    every dual-value estimate in every run shares one draw set.
    ``bit_meter`` selects the accounting: "nominal" counts transmitted masses
    and packed indices only; "wire" counts the exact serialised bytes.

    Returns a :class:`PrimalDualResult`; the trace has T + 1 rows.
    """
    if compressor not in COMPRESSORS:
        raise ValueError(f"compressor must be one of {COMPRESSORS}")
    _check_schedule(schedule, problem.L, T)
    rng = np.random.default_rng(rng)
    messages = [] if record_messages else None
    decoded = [] if record_messages else None
    trace = RunTrace()
    alphas, betas = [], []

    deterministic_value = getattr(problem, "deterministic_value", True)

    def monitor(t, lam, x_avg, calls, bits):
        if deterministic_value:
            dv = dual_value(problem, lam)
        else:
            # fixed draw set for every evaluation: estimates share their
            # Monte-Carlo error across iterations and across runs
            dv = dual_value(problem, lam, np.random.default_rng([eval_seed]),
                            eval_samples)
        pgap = float("nan")
        if problem.primal_value is not None and problem.f_star is not None:
            pgap = problem.primal_value(x_avg) - problem.f_star
        trace.append(t, dv, pgap, feasibility_gap(problem, x_avg), calls, bits,
                     schedule.r(t), schedule.M(t), schedule.alpha(t),
                     schedule.beta(t))

    wire = _wire_mode(bit_meter)

    def step(mu, t):
        theta = -problem.A.T @ mu
        x_res = problem.conjugate_grad(theta, schedule.r(t), rng)
        g = problem.b - problem.A @ x_res
        G, q, bits = _compress(g, schedule.M(t), rng, compressor, float_bits,
                               wire)
        if record_messages:
            messages.append(q)
            decoded.append(G)
        return x_res, G, bits

    mu0 = np.zeros(problem.m)
    x_res, G, bits = step(mu0, 0)
    alpha0, beta0 = schedule.alpha(0), schedule.beta(0)
    lam = -(alpha0 / beta0) * G
    S = alpha0 * G
    x_avg = x_res.copy()
    calls = schedule.r(0)
    total_bits = bits
    alphas.append(alpha0)
    betas.append(beta0)
    monitor(0, lam, x_avg, calls, total_bits)

    for t in range(T):
        beta_t = schedule.beta(t)
        z = -S / beta_t
        tau = schedule.tau(t)
        mu = tau * z + (1.0 - tau) * lam
        x_res, G, bits = step(mu, t + 1)
        mu_hat = z - (schedule.alpha(t + 1) / beta_t) * G
        lam = tau * mu_hat + (1.0 - tau) * lam
        x_avg = tau * x_res + (1.0 - tau) * x_avg
        S = S + schedule.alpha(t + 1) * G
        calls += schedule.r(t + 1)
        total_bits += bits
        alphas.append(schedule.alpha(t + 1))
        betas.append(schedule.beta(t + 1))
        _finite_or_raise(lam, "dual iterate")
        monitor(t + 1, lam, x_avg, calls, total_bits)

    return PrimalDualResult(lam, x_avg, trace, messages, decoded, alphas, betas)


def primal_solve(oracle, schedule, T, rng, *, compressor="pps", float_bits=64,
                 bit_meter="nominal", L=None, record_messages=False):
    """Accelerated method for unconstrained min f from quantized gradients.

    ``oracle`` provides ``minibatch(x, r, rng)`` and optionally ``value(x)``
    for telemetry.  The momentum point update mirrors the primal-dual
    recursion.  The trace's dual_value column holds f(x_t) when available.
    """
    if compressor not in COMPRESSORS:
        raise ValueError(f"compressor must be one of {COMPRESSORS}")
    if L is None:
        L = getattr(oracle, "L", 0.0)
    _check_schedule(schedule, L, T)
    rng = np.random.default_rng(rng)
    messages = [] if record_messages else None
    decoded = [] if record_messages else None
    trace = RunTrace()

    wire = _wire_mode(bit_meter)

    def step(y, t):
        g = oracle.minibatch(y, schedule.r(t), rng)
        G, q, bits = _compress(np.asarray(g, dtype=float), schedule.M(t), rng,
                               compressor, float_bits, wire)
        if record_messages:
            messages.append(q)
            decoded.append(G)
        return G, bits

    def monitor(t, x, calls, bits):
        fval = oracle.value(x) if hasattr(oracle, "value") else float("nan")
        trace.append(t, fval, float("nan"), float("nan"), calls, bits,
                     schedule.r(t), schedule.M(t), schedule.alpha(t),
                     schedule.beta(t))

    y = np.zeros(oracle.dim)
    G, bits = step(y, 0)
    x = -(schedule.alpha(0) / schedule.beta(0)) * G
    S = schedule.alpha(0) * G
    calls = schedule.r(0)
    total_bits = bits
    monitor(0, x, calls, total_bits)

    for t in range(T):
        beta_t = schedule.beta(t)
        z = -S / beta_t
        tau = schedule.tau(t)
        y = tau * z + (1.0 - tau) * x
        G, bits = step(y, t + 1)
        y_hat = z - (schedule.alpha(t + 1) / beta_t) * G
        x = tau * y_hat + (1.0 - tau) * x
        S = S + schedule.alpha(t + 1) * G
        calls += schedule.r(t + 1)
        total_bits += bits
        _finite_or_raise(x, "iterate")
        monitor(t + 1, x, calls, total_bits)

    return PrimalResult(x, trace, messages, decoded)


def check_bound_consistency(result, schedule, problem, T, delta, *, J=1.0):
    """Compare a finished run against the theoretical epsilon(T) bound.

    Returns the bound value and whether the observed gaps exceed it, which
    flags an inconsistent configuration (typically an underestimated R).
    """
    from .schedules import epsilon_bound

    eps = epsilon_bound(T, delta, schedule, problem.R, problem.L,
                        problem.A_norm, J=J)
    feas = result.trace.final("gap")
    pgap = result.trace.final("primal_gap")
    feas_violated = feas > eps / problem.R
    gap_violated = (not np.isnan(pgap)) and pgap > eps
    return {
        "epsilon": eps,
        "feasibility_violated": bool(feas_violated),
        "primal_gap_violated": bool(gap_violated),
        "bound_violated": bool(feas_violated or gap_violated),
    }
