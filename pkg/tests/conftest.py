import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def decode_counts(indices, n_trials, M, dim):
    """Per-trial index counts from a flat (n_trials * M,) sample array."""
    trial = np.repeat(np.arange(n_trials, dtype=np.int64), M)
    flat = np.bincount(trial * dim + indices, minlength=n_trials * dim)
    return flat.reshape(n_trials, dim)


def pps_mc_moments(g, M, n_trials, rng):
    """Mean and per-component variance of decoded PPS messages over trials.

    Samples both sign parts through the library's categorical sampler in one
    vectorised pass; equivalent to decoding n_trials independent encodes.
    """
    from ppsq.quantize import categorical_sample, split_signs

    g = np.asarray(g, dtype=float)
    pos, neg = split_signs(g)
    decodes = np.zeros((n_trials, g.size))
    for part, sign in ((pos, 1.0), (neg, -1.0)):
        mass = part.sum()
        if mass <= 0:
            continue
        idx = categorical_sample(part, n_trials * M, rng)
        decodes += sign * (mass / M) * decode_counts(idx, n_trials, M, g.size)
    return decodes.mean(axis=0), decodes.var(axis=0)


def fit_loglog_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
