"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Every tolerance is fixed here; nothing is calibrated at runtime.
"""

import math
import time

import numpy as np
import pytest

import ppsq
from ppsq import quantize
from ppsq.oracles import GradientOracle
from ppsq.problems import (
    LogSumExp,
    QuadraticLocal,
    gaussian_wb_instance,
    random_row_stochastic,
)
from ppsq.quantize import (
    QuantizedGradient,
    categorical_sample,
    index_bits,
    message_bits,
    pps_encode,
    randomM_encode,
    to_bytes,
    from_bytes,
)
from ppsq.schedules import (
    Schedule,
    choice1_horizon,
    coeff_identities,
    default_alpha,
    m_from_r,
    r_from_m,
    theory_constants,
    validate,
    variable_M,
    variable_r,
)
from ppsq.network import Topology, consensus_gap, decentralized_solve, laplacian
from ppsq.solvers import dual_oracle, primal_dual_solve, quadratic_affine_problem

from conftest import decode_counts, fit_loglog_slope, pps_mc_moments


def _report(k, detail):
    print(f"criterion {k:2d}: PASS - {detail}")


def make_benchmark_problem(noise_scale=0.0):
    """10-dim quadratic with 3 affine constraints (frozen generator seed)."""
    gen = np.random.default_rng(5)
    local = QuadraticLocal(gen.uniform(-1, 1, 10))
    A = gen.standard_normal((3, 10))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = A @ local.center + gen.uniform(-0.1, 0.1, 3)
    return quadratic_affine_problem(local, A, b, noise_scale=noise_scale)


def test_criterion_01_one_hot_second_moment():
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    # exact enumeration over K ~ Categorical(v): E||v - e_K||^2 = 1 - ||v||^2
    for n in (2, 3, 4, 5, 6):
        for _ in range(20):
            v = rng.dirichlet(np.ones(n))
            enumerated = sum(
                v[k] * float(np.sum((v - np.eye(n)[k]) ** 2)) for k in range(n)
            )
            assert enumerated == pytest.approx(1 - v @ v, abs=1e-12)
    # n = 10 by Monte Carlo within 1%
    for _ in range(5):
        v = rng.dirichlet(np.ones(10))
        draws = categorical_sample(v, 10**5, rng)
        sq = np.sum((v[None, :] - np.eye(10)[draws]) ** 2, axis=1)
        assert sq.mean() == pytest.approx(1 - v @ v, rel=0.01)
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    _report(1, f"identity exact for n=2..6, MC within 1% at n=10 ({elapsed:.1f}s)")


def test_criterion_02_pps_unbiasedness():
    started = time.perf_counter()
    rng = np.random.default_rng(202)
    n, n_trials = 50, 10**5
    worst = 0.0
    for _ in range(20):
        signs = rng.choice([-1.0, 1.0], size=n)
        v = signs * rng.uniform(0.1, 1.0, n)
        for M in (1, 4, 16):
            mean, var = pps_mc_moments(v, M, n_trials, rng)
            tol = 6 * np.sqrt(np.maximum(var, 0.0) / n_trials)
            err = np.abs(mean - v)
            assert np.all(err <= np.maximum(tol, 1e-12))
            worst = max(worst, float(np.max(np.where(tol > 0, err / tol, 0.0))))
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    _report(2, f"20 vectors x M in {{1,4,16}}, worst |err|/tol = {worst:.2f} "
               f"({elapsed:.1f}s)")


def test_criterion_03_random_m_second_moment():
    rng = np.random.default_rng(303)
    n, M, trials = 10, 5, 10**5
    x = rng.standard_normal(n)
    acc = 0.0
    for _ in range(trials):
        d = randomM_encode(x, M, rng) - x
        acc += d @ d
    relative = acc / trials / (x @ x)
    expected = n / M - 1
    assert relative == pytest.approx(expected, rel=0.05)
    _report(3, f"random-M relative second moment {relative:.4f} vs n/M-1 = {expected}")


def test_criterion_04_bit_accounting():
    # worked example: 2 * 32 + 200 * ceil(log2 1e4) = 2864 bits
    q = QuantizedGradient(10**4, 1.0, 1.0, np.arange(100, dtype=np.int64),
                          np.arange(100, dtype=np.int64))
    assert message_bits(q, float_bits=32) == 2 * 32 + 200 * 14 == 2864

    # serialised byte length x 8 equals the wire-mode bit count exactly for
    # random messages across small and large dimensions; the nominal count
    # (masses + packed indices, no framing) never exceeds it
    rng = np.random.default_rng(404)
    checked = 0
    for dim in (2, 10**3, 10**6):
        for _ in range(334):
            n_pos = int(rng.integers(0, 65))
            n_neg = int(rng.integers(0, 65))
            msg = QuantizedGradient(
                dim,
                float(rng.uniform(0.1, 5.0)) if n_pos else 0.0,
                float(rng.uniform(0.1, 5.0)) if n_neg else 0.0,
                rng.integers(0, dim, n_pos),
                rng.integers(0, dim, n_neg),
            )
            for fb in (32, 64):
                buf = to_bytes(msg, fb)
                assert len(buf) * 8 == message_bits(msg, fb, wire=True)
                assert message_bits(msg, fb, wire=True) >= message_bits(msg, fb)
            back = from_bytes(to_bytes(msg, 64), dim)
            assert np.array_equal(back.pos_indices, msg.pos_indices)
            assert np.array_equal(back.neg_indices, msg.neg_indices)
            assert back.pos_mass == msg.pos_mass
            checked += 1
    assert checked == 1002
    _report(4, "worked example 2864 exact; 1002 messages serialise byte-exactly")


def test_criterion_05_coefficient_identities():
    for a in (1.0, 2 * math.sqrt(2), 10.0):
        for T in range(1, 1001):
            ident = coeff_identities(a, T)
            assert abs(ident.sum_ratio - ident.closed_form) <= 1e-12
            assert ident.sum_ratio <= 2 / math.sqrt(3) / math.sqrt(T) + 1e-15
            assert ident.tail_ratio <= 2 / 3 / math.sqrt(T) + 1e-15
    _report(5, "closed form matches to 1e-12 for T=1..1000, a in {1, 2sqrt2, 10}; "
               "both inequalities hold")


def test_criterion_06_schedule_validity_grid():
    started = time.perf_counter()
    T = 10**4
    n, B = 50, 1.0
    consts = theory_constants(0.1)
    grid = (0.1, 1.0, 10.0)
    for L in grid:
        for R in grid:
            for sigma in grid:
                constant = Schedule.default(L, R, n=n, B=B, sigma=sigma, r=2, M=4)
                assert validate(constant, L, T) == []

                def r_fn(t, L=L, R=R, sigma=sigma):
                    return variable_r(default_alpha(t), 0.1, L, sigma, consts,
                                      R, 1.0)

                def M_fn(t, r_fn=r_fn, sigma=sigma):
                    return m_from_r(r_fn(t), n, B, sigma)

                var_batch = Schedule.default(L, R, n=n, B=B, sigma=sigma,
                                             r=r_fn, M=M_fn)
                assert validate(var_batch, L, T) == []

                def M2_fn(t, L=L, R=R):
                    return variable_M(default_alpha(t), 0.1, L, n, B, consts,
                                      R, 1.0)

                def r2_fn(t, M2_fn=M2_fn, sigma=sigma):
                    return r_from_m(M2_fn(t), n, B, sigma)

                var_samples = Schedule.default(L, R, n=n, B=B, sigma=sigma,
                                               r=r2_fn, M=M2_fn)
                assert validate(var_samples, L, T) == []
    elapsed = time.perf_counter() - started
    _report(6, f"constant and both variable policies valid for T=1e4 over "
               f"the 3x3x3 grid ({elapsed:.0f}s)")


def test_criterion_07_exact_solve_benchmark():
    started = time.perf_counter()
    prob = make_benchmark_problem()
    g0 = dual_oracle(prob, np.zeros(prob.m))
    B = 1.2 * float(np.abs(g0).sum())

    sched = Schedule.default(prob.L, prob.R, n=prob.m, B=B, sigma=0.0, r=1,
                             M=10**4)
    res = primal_dual_solve(prob, sched, 1000, 1)
    fgap = res.trace.final("primal_gap")
    feas = res.trace.final("gap")
    assert abs(fgap) <= 1e-3
    assert feas <= 1e-3

    # unquantized noiseless rate: the trace row at t equals a length-t run,
    # so the T = 512 trajectory provides the f-gap vs T profile
    sched_id = Schedule.default(prob.L, prob.R, n=prob.m, B=B, sigma=0.0, r=1,
                                M=1, quantized=False)
    ref = primal_dual_solve(prob, sched_id, 512, 1, compressor="identity")
    gaps = np.abs(ref.trace.column("primal_gap"))
    ts = np.arange(16, 513)
    slope = fit_loglog_slope(ts, gaps[16:513])
    assert slope == pytest.approx(-2.0, abs=0.15)

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    _report(7, f"|f-gap| {abs(fgap):.1e}, feasibility {feas:.1e} at T=1e3; "
               f"noiseless slope {slope:.2f} ({elapsed:.0f}s)")


def test_criterion_08_decentralized_consensus():
    started = time.perf_counter()
    gen = np.random.default_rng(42)
    centers = gen.uniform(-1, 1, (5, 3))
    topo = Topology.ring(5)
    spec = laplacian(topo)
    locs = [QuadraticLocal(c) for c in centers]
    L = 5 * spec.norm
    xbar = centers.mean(axis=0)
    B_star = max(np.linalg.norm(xbar - c) for c in centers)
    R = math.sqrt(B_star ** 2 / (5 * spec.lambda2))
    sched = Schedule.default(L, R, n=3, B=3.0, sigma=0.0, r=1, M=4096)
    res = decentralized_solve(locs, topo, sched, 2000, 3, compressor="pps", L=L)
    gap = consensus_gap(res.x_nodes, spec)
    errs = [float(np.linalg.norm(res.x_nodes[i] - xbar)) for i in range(5)]
    assert gap <= 1e-2
    assert max(errs) <= 1e-2

    # simulator vs stacked centralized recursion on m=2, n=2 to 1e-12
    seed, T, M = 123, 50, 3
    topo2 = Topology.ring(2)
    spec2 = laplacian(topo2)
    centers2 = np.array([[0.4, -0.2], [-0.6, 0.9]])
    locs2 = [QuadraticLocal(c) for c in centers2]
    L2 = 2 * spec2.norm
    sched2 = Schedule.default(L2, 1.0, n=2, B=4.0, sigma=0.0, r=1, M=M)
    res2 = decentralized_solve(locs2, topo2, sched2, T, seed, compressor="pps",
                               L=L2, record_states=True)
    Wk = np.kron(spec2.W, np.eye(2))

    def oracle_round(mu_stack, rnd):
        X, G = np.zeros(4), np.zeros(4)
        for i in range(2):
            rng_i = np.random.default_rng([seed, i, rnd])
            x_i = locs2[i].conjugate_grad(2 * mu_stack[2 * i:2 * i + 2], 1, rng_i)
            X[2 * i:2 * i + 2] = x_i
            G[2 * i:2 * i + 2] = quantize.pps_decode(
                quantize.pps_encode(x_i, M, rng_i)
            )
        return X, G

    mu = np.zeros(4)
    X, G = oracle_round(mu, 0)
    combo = Wk @ G
    lam = -(sched2.alpha(0) / sched2.beta(0)) * combo
    S = sched2.alpha(0) * combo
    xav = X.copy()
    worst = np.abs(lam - res2.lambda_history[0].ravel()).max()
    for t in range(T):
        z = -S / sched2.beta(t)
        tau = sched2.tau(t)
        mu = tau * z + (1 - tau) * lam
        X, G = oracle_round(mu, t + 1)
        combo = Wk @ G
        mu_hat = z - (sched2.alpha(t + 1) / sched2.beta(t)) * combo
        lam = tau * mu_hat + (1 - tau) * lam
        xav = tau * X + (1 - tau) * xav
        S = S + sched2.alpha(t + 1) * combo
        worst = max(worst,
                    np.abs(lam - res2.lambda_history[t + 1].ravel()).max(),
                    np.abs(xav - res2.x_history[t + 1].ravel()).max())
    assert worst <= 1e-12

    elapsed = time.perf_counter() - started
    _report(8, f"ring-5 gap {gap:.1e}, max node error {max(errs):.1e}; "
               f"stacked equivalence within {worst:.1e} ({elapsed:.0f}s)")


def test_criterion_09_communication_savings():
    started = time.perf_counter()
    m, n = 5, 50
    nodes = gaussian_wb_instance(m, n, seed=11)
    topo = Topology.ring(m)
    spec = laplacian(topo)
    L = m * spec.norm / nodes[0].gamma
    R = math.sqrt(1.0 / (m * spec.lambda2))  # B* = 1 for simplex gradients
    sigma, r = 0.3, 10

    sched_b = Schedule.default(L, R, n=n, B=1.0, sigma=sigma, r=r, M=1,
                               quantized=False)
    base = decentralized_solve(nodes, topo, sched_b, 300, 5,
                               compressor="identity", eval_samples=256)
    sched_q = Schedule.default(L, R, n=n, B=1.0, sigma=sigma, r=r, M=1,
                               simplified=True)
    quant = decentralized_solve(nodes, topo, sched_q, 6000, 5,
                                compressor="pps_simplified", eval_samples=256)

    base_final = base.trace.final("dual_value")
    base_bits = base.trace.final("bits")
    dq = quant.trace.column("dual_value")
    bq = quant.trace.column("bits")
    within = np.abs(dq - base_final) <= 0.05 * abs(base_final)
    assert within.any(), "quantized run never reached the baseline value band"
    first = int(np.argmax(within))
    ratio = bq[first] / base_bits
    assert ratio <= 0.1

    elapsed = time.perf_counter() - started
    assert elapsed < 300.0
    _report(9, f"M=1 run matches baseline dual {base_final:.4f} at round {first} "
               f"with {ratio:.3f} of the bits ({elapsed:.0f}s)")


def test_criterion_10_log_sum_exp():
    rng = np.random.default_rng(1010)
    for _ in range(50):
        n_terms = int(rng.integers(2, 21))
        dim = int(rng.integers(2, 21))
        A = rng.standard_normal((n_terms, dim))
        lse = LogSumExp(A, rng.uniform(0.5, 2.0, n_terms))
        x = rng.standard_normal(dim)
        g = lse.grad(x)
        h = 1e-6
        fd = np.zeros(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h
            fd[i] = (lse.value(x + e) - lse.value(x - e)) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))
        # Lipschitz constant matches the brute-force column scan
        brute = max(
            sum(A[j, i] ** 2 for j in range(n_terms)) for i in range(dim)
        )
        assert lse.lipschitz() == pytest.approx(brute, rel=1e-12)

    for _ in range(20):
        A = random_row_stochastic(int(rng.integers(2, 21)),
                                  int(rng.integers(2, 21)), rng)
        lse = LogSumExp(A, np.ones(A.shape[0]))
        g = lse.grad(rng.standard_normal(A.shape[1]) * 3)
        assert abs(np.abs(g).sum() - 1.0) <= 1e-12
    _report(10, "gradient vs central differences <= 1e-6 on 50 instances; "
                "l1 norm exactly 1 for row-stochastic terms; L matches brute force")


def test_criterion_11_wb_oracle():
    nodes = gaussian_wb_instance(3, 20, seed=4)
    node = nodes[0]
    rng = np.random.default_rng(1111)

    # simplex membership of every per-sample gradient
    for _ in range(200):
        lam = rng.normal(0, 0.5, 20)
        g = node.conjugate_grad(lam, 1, np.random.default_rng(rng.integers(2**31)))
        assert np.all(g >= -1e-15)
        assert abs(g.sum() - 1.0) <= 1e-12

    # shift identity with shared samples
    lam = rng.normal(0, 0.3, 20)
    for s in (1e-3, 0.5, 3.0):
        v = node.conjugate_value(lam, 64, np.random.default_rng(8))
        vs = node.conjugate_value(lam + s, 64, np.random.default_rng(8))
        assert abs(vs - (v + s)) <= 1e-12

    # common-random-number finite differences
    r, h = 64, 1e-4
    g = node.conjugate_grad(lam, r, np.random.default_rng(7))
    fd = np.zeros(20)
    for i in range(20):
        e = np.zeros(20)
        e[i] = h
        vp = node.conjugate_value(lam + e, r, np.random.default_rng(7))
        vm = node.conjugate_value(lam - e, r, np.random.default_rng(7))
        fd[i] = (vp - vm) / (2 * h)
    rel = np.linalg.norm(g - fd) / np.linalg.norm(g)
    assert rel <= 1e-5
    _report(11, f"simplex membership to 1e-12, shift identity to 1e-12, "
                f"CRN finite differences rel err {rel:.1e}")


def test_criterion_12_large_deviation_direction():
    started = time.perf_counter()
    noise = 0.02
    prob = make_benchmark_problem(noise_scale=noise)
    eps, delta, r = 0.25, 0.2, 1
    sigma = noise * math.sqrt(prob.m)  # RMS of the projected oracle noise
    g0 = dual_oracle(prob, np.zeros(prob.m))
    B = 1.2 * float(np.abs(g0).sum()) + 6.0 * noise * math.sqrt(prob.m)

    T = choice1_horizon(eps, delta, r, prob.L, prob.R, sigma, prob.A_norm)
    M = m_from_r(r, prob.m, B, sigma)
    sched = Schedule.default(prob.L, prob.R, n=prob.m, B=B, sigma=sigma, r=r,
                             M=M)

    failures = 0
    for seed in range(100):
        res = primal_dual_solve(prob, sched, T, seed)
        if res.trace.final("primal_gap") > eps:
            failures += 1
    fraction = failures / 100
    assert fraction <= delta + 0.1

    elapsed = time.perf_counter() - started
    assert elapsed < 300.0
    _report(12, f"T={T}, M={M}: failure fraction {fraction:.2f} <= {delta + 0.1} "
                f"({elapsed:.0f}s)")
