"""Concrete problem instances: affine-constrained quadratics, log-sum-exp,
and entropy-regularised semi-discrete Wasserstein barycentres.

Every problem exposes the conjugate-side oracle pair used by the solvers:
``conjugate_grad(theta, r, rng)`` restores the primal maximiser (averaged
over r draws for stochastic problems) and ``conjugate_value(theta, r, rng)``
evaluates the conjugate function.
"""

import math
from dataclasses import dataclass

import numpy as np


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(-1)[0])
    return np.squeeze(out, axis=axis)


def _softmax(a, axis=-1):
    m = np.max(a, axis=axis, keepdims=True)
    e = np.exp(a - m)
    return e / np.sum(e, axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# quadratics


class QuadraticLocal:
    """f(x) = 0.5 (x - c)^T Q (x - c) with its closed-form conjugate.

    f*(theta) = 0.5 theta^T Q^{-1} theta + theta^T c and
    grad f*(theta) = Q^{-1} theta + c.  Q defaults to the identity.
    """

    def __init__(self, center, Q=None):
        self.center = np.asarray(center, dtype=float)
        n = self.center.size
        if Q is None:
            self.Q = np.eye(n)
            self._Q_inv = np.eye(n)
        else:
            self.Q = np.asarray(Q, dtype=float)
            if not np.allclose(self.Q, self.Q.T):
                raise ValueError("Q must be symmetric")
            if np.linalg.eigvalsh(self.Q).min() <= 0:
                raise ValueError("Q must be positive definite")
            self._Q_inv = np.linalg.inv(self.Q)

    @property
    def dim(self):
        return self.center.size

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return 0.5 * float(d @ self.Q @ d)

    def grad(self, x):
        return self.Q @ (np.asarray(x, dtype=float) - self.center)

    def conjugate_value(self, theta, r=1, rng=None):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * float(theta @ self._Q_inv @ theta) + float(theta @ self.center)

    def conjugate_grad(self, theta, r=1, rng=None):
        return self._Q_inv @ np.asarray(theta, dtype=float) + self.center


@dataclass
class NoisyNode:
    """Wrap a node problem with additive Gaussian noise on the conjugate
    gradient; the r-draw batch is averaged inside."""

    base: object
    noise_scale: float

    @property
    def dim(self):
        return self.base.dim

    def conjugate_grad(self, theta, r=1, rng=None):
        g = self.base.conjugate_grad(theta)
        if self.noise_scale > 0 and rng is not None:
            g = g + rng.normal(0.0, self.noise_scale, (r, self.dim)).mean(axis=0)
        return g

    def conjugate_value(self, theta, r=1, rng=None):
        return self.base.conjugate_value(theta)


def quadratic_kkt_solution(locals_, A, b):
    """Exact solution of min sum_i 0.5 (x - c_i)^T Q_i (x - c_i) s.t. Ax = b.

    Solves the stationarity system directly; the returned multiplier
    satisfies grad f(x*) = A^T lambda*.  (The accelerated dual iterate
    converges to the negative of this multiplier.)
    """
    if not isinstance(locals_, (list, tuple)):
        locals_ = [locals_]
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    H = sum(loc.Q for loc in locals_)
    q = sum(loc.Q @ loc.center for loc in locals_)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    kkt[:n, n:] = -A.T
    kkt[n:, :n] = A
    rhs = np.concatenate([q, b])
    sol = np.linalg.solve(kkt, rhs)
    x_star, lam_star = sol[:n], sol[n:]
    f_star = sum(loc.value(x_star) for loc in locals_)
    return x_star, lam_star, f_star


# ---------------------------------------------------------------------------
# log-sum-exp


class LogSumExp:
    """f(x) = ln(sum_j b_j exp(A_j . x)) with stabilised value and gradient.

    ``A`` has one row per exponent term; ``b`` holds positive term weights.
    When A is row-stochastic the gradient lies on the probability simplex,
    so the one-signed PPS encoding applies with unit l1 mass.
    """

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.A.shape[0] != self.b.size:
            raise ValueError("A rows and b length must match")
        if np.any(self.b < 0) or self.b.sum() <= 0:
            raise ValueError("b must be non-negative with positive sum")

    @property
    def dim(self):
        return self.A.shape[1]

    def _scores(self, x):
        with np.errstate(divide="ignore"):
            return self.A @ np.asarray(x, dtype=float) + np.log(self.b)

    def value(self, x):
        return float(_logsumexp(self._scores(x)))

    def grad(self, x):
        w = _softmax(self._scores(x))
        return self.A.T @ w

    def lipschitz(self):
        """max over columns i of sum_j A_ji^2."""
        return float(np.max(np.sum(self.A ** 2, axis=0)))


def random_row_stochastic(n_terms, dim, rng):
    """Random matrix with non-negative rows summing to one."""
    return rng.dirichlet(np.ones(dim), size=n_terms)


# ---------------------------------------------------------------------------
# semi-discrete Wasserstein barycentre


@dataclass
class GaussianMeasure:
    """Diagonal Gaussian on R^d with closed-form density."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.std = np.broadcast_to(
            np.asarray(self.std, dtype=float), self.mean.shape
        ).copy()
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")

    @property
    def dim(self):
        return self.mean.size

    def sample(self, r, rng):
        return self.mean + self.std * rng.standard_normal((r, self.dim))

    def log_density(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        z = (pts - self.mean) / self.std
        return -0.5 * np.sum(z * z, axis=1) - np.sum(
            np.log(self.std * math.sqrt(2.0 * math.pi))
        )


@dataclass
class GaussianMixtureMeasure:
    """Mixture of diagonal Gaussians; smooths discrete images into a density."""

    means: np.ndarray
    std: float
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.size != self.means.shape[0]:
            raise ValueError("one weight per component")
        if np.any(self.weights < 0) or self.weights.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        self.weights = self.weights / self.weights.sum()
        if self.std <= 0:
            raise ValueError("std must be positive")
        # zero-weight components (blank pixels) contribute -inf log-mass
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def sample(self, r, rng):
        comp = rng.choice(self.weights.size, size=r, p=self.weights)
        return self.means[comp] + self.std * rng.standard_normal((r, self.dim))

    def log_density(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d2 = np.sum(
            (pts[:, None, :] - self.means[None, :, :]) ** 2, axis=2
        )
        log_norm = self.dim * math.log(self.std * math.sqrt(2.0 * math.pi))
        comp_log = self._log_weights[None, :] - 0.5 * d2 / self.std ** 2 - log_norm
        return _logsumexp(comp_log, axis=1)


def squared_euclidean_cost(support, pts):
    """Cost matrix c(z_i, x_k) = ||z_i - x_k||^2, shape (len(pts), len(support))."""
    diff = pts[:, None, :] - support[None, :, :]
    return np.sum(diff * diff, axis=2)


class SemiDiscreteWBNode:
    """One node's entropy-regularised semi-discrete transport oracle.

    Holds the shared discrete support z_1..z_n, the entropic parameter
    gamma > 0, and the node's continuous measure.  The conjugate value and
    gradient are Monte-Carlo averages over samples x ~ mu of

        value:    gamma * log( sum_i exp((lam_i - c(z_i, x)) / gamma) / q(x) )
        gradient: softmax((lam - c(., x)) / gamma)

    so every gradient sample lies on the n-simplex and the one-signed PPS
    encoding with unit mass applies.
    """

    def __init__(self, support, gamma, measure, cost_fn=squared_euclidean_cost):
        self.support = np.atleast_2d(np.asarray(support, dtype=float))
        if self.support.shape[0] == 1 and self.support.shape[1] > 1:
            # accept a flat 1-D grid
            self.support = self.support.T
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.gamma = float(gamma)
        self.measure = measure
        self.cost_fn = cost_fn

    @property
    def dim(self):
        return self.support.shape[0]

    def _scores(self, lam, pts):
        cost = self.cost_fn(self.support, pts)
        return (np.asarray(lam, dtype=float)[None, :] - cost) / self.gamma

    def conjugate_value(self, lam, r=1, rng=None):
        if r < 1:
            raise ValueError("sample count r must be >= 1")
        pts = self.measure.sample(r, rng)
        logq = self.measure.log_density(pts)
        if np.any(~np.isfinite(logq)):
            raise ValueError("measure density vanished at a sampled point")
        per = self.gamma * (_logsumexp(self._scores(lam, pts), axis=1) - logq)
        return float(np.mean(per))

    def conjugate_grad(self, lam, r=1, rng=None):
        if r < 1:
            raise ValueError("sample count r must be >= 1")
        pts = self.measure.sample(r, rng)
        return _softmax(self._scores(lam, pts), axis=1).mean(axis=0)


def wb_restore_barycentre(x_nodes):
    """Node-average of the per-node simplex weights, renormalised."""
    x = np.atleast_2d(np.asarray(x_nodes, dtype=float))
    avg = x.mean(axis=0)
    total = avg.sum()
    if total <= 0:
        raise ValueError("degenerate barycentre weights")
    return avg / total


def default_gamma(support, fraction=0.1):
    """fraction of the mean pairwise cost over the support grid."""
    support = np.atleast_2d(np.asarray(support, dtype=float))
    if support.shape[0] == 1 and support.shape[1] > 1:
        support = support.T
    cost = squared_euclidean_cost(support, support)
    return fraction * float(cost.mean())


def grid_support(nx, ny=None, lo=0.0, hi=1.0):
    """Uniform support grid: 1-D with ny omitted, else an nx-by-ny 2-D grid."""
    xs = np.linspace(lo, hi, nx)
    if ny is None:
        return xs[:, None]
    ys = np.linspace(lo, hi, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def image_measure(image, lo=0.0, hi=1.0, std=None):
    """Smooth a small grayscale image into a Gaussian-mixture density.

    Pixel intensities become mixture weights at the pixel centres on the
    [lo, hi]^2 square, so the discrete image gains a density and can act as
    a node measure.  ``std`` defaults to the pixel pitch.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("image must be a 2-D array")
    if np.any(image < 0) or image.sum() <= 0:
        raise ValueError("pixel intensities must be non-negative, not all zero")
    nx, ny = image.shape
    centres = grid_support(nx, ny, lo, hi)
    if std is None:
        std = (hi - lo) / max(nx - 1, 1)
    return GaussianMixtureMeasure(centres, std, image.ravel())


def gaussian_wb_instance(m_nodes, n_support, seed, *, gamma=None,
                         grid_lo=-2.5, grid_hi=2.5):
    """Seeded 1-D barycentre instance: m Gaussian measures on a uniform grid."""
    rng = np.random.default_rng(seed)
    support = np.linspace(grid_lo, grid_hi, n_support)[:, None]
    if gamma is None:
        gamma = default_gamma(support)
    nodes = []
    for _ in range(m_nodes):
        mean = rng.uniform(-1.0, 1.0, size=1)
        std = rng.uniform(0.25, 0.6, size=1)
        nodes.append(
            SemiDiscreteWBNode(support, gamma, GaussianMeasure(mean, std))
        )
    return nodes
