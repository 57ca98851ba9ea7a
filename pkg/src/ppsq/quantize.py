"""Probability-proportional-to-size (PPS) gradient quantization.

A vector is split into its non-negative and negative parts.  Each part is
communicated as its l1 mass plus M component indices sampled with probability
proportional to component magnitude.  Decoding places the mass uniformly on
the sampled indices, which yields an unbiased estimate of the original vector.

The module also provides top-M / random-M baseline compressors, the variance
proxy used by the step-size schedules, exact bit accounting, and a byte-exact
wire codec used by the simulator's telemetry.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

# Relative magnitude below which a component is excluded from the sampling
# distribution; avoids normalisation instability from denormal-scale entries.
TINY_REL = 1e-15

_EMPTY_IDX = np.empty(0, dtype=np.int64)

FLAG_SIMPLIFIED = 0x01
FLAG_FLOAT32 = 0x02
FLAG_UNIT_MASS = 0x04


@dataclass(frozen=True)
class QuantizedGradient:
    """Wire-format PPS message: two l1 masses plus two index samples.

    ``pos_indices`` / ``neg_indices`` are multisets (repeats allowed) of
    component indices in ``[0, dim)``.  A part with zero mass carries no
    indices.  ``simplified`` marks one-signed messages whose negative part is
    structurally absent; when additionally ``pos_mass == 1.0`` the mass does
    not need to be transmitted at all.
    """

    dim: int
    pos_mass: float
    neg_mass: float
    pos_indices: np.ndarray = field(default_factory=lambda: _EMPTY_IDX)
    neg_indices: np.ndarray = field(default_factory=lambda: _EMPTY_IDX)
    simplified: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.pos_mass < 0 or self.neg_mass < 0:
            raise ValueError("masses must be non-negative")
        for name, idx in (("pos", self.pos_indices), ("neg", self.neg_indices)):
            idx = np.asarray(idx, dtype=np.int64)
            object.__setattr__(self, f"{name}_indices", idx)
            if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
                raise ValueError(f"{name} index out of range [0, {self.dim})")
        if (self.pos_mass == 0) != (self.pos_indices.size == 0):
            raise ValueError("pos_mass == 0 iff pos_indices empty")
        if (self.neg_mass == 0) != (self.neg_indices.size == 0):
            raise ValueError("neg_mass == 0 iff neg_indices empty")
        if self.simplified and self.neg_indices.size:
            raise ValueError("simplified messages carry no negative part")

    @property
    def sample_count(self):
        return self.pos_indices.size + self.neg_indices.size


@dataclass(frozen=True)
class CompressorStats:
    """Monte-Carlo estimate of a compressor's second moment E||Q(x) - x||^2."""

    empirical_second_moment: float
    relative_second_moment: float
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.empirical_second_moment < 0:
            raise ValueError("second moment must be non-negative")


def split_signs(g):
    """Split ``g`` into non-negative parts (pos, neg) with g = pos - neg."""
    g = np.asarray(g, dtype=float)
    return np.maximum(g, 0.0), np.maximum(-g, 0.0)


def categorical_sample(weights, count, rng):
    """Draw ``count`` i.i.d. indices with probability proportional to weights.

    Uses inverse-CDF search over the prefix-sum array, so the draw is
    deterministic given the generator state.

    Parameters
    ----------
    weights : array_like
        Non-negative weights with a strictly positive sum.
    count : int
        Number of samples, >= 1.
    rng : numpy.random.Generator

    Returns
    -------
    ndarray of int64, shape (count,)
    """
    w = np.asarray(weights, dtype=float)
    if count < 1:
        raise ValueError("count must be >= 1")
    if w.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    cdf = np.cumsum(w)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("weights must have positive sum")
    u = rng.random(count) * total
    # guard the (1 - eps) * total rounding edge so the search stays in range
    np.minimum(u, np.nextafter(total, 0.0), out=u)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def _truncate_small(part, cutoff):
    if cutoff <= 0:
        return part
    out = part.copy()
    out[out < cutoff] = 0.0
    return out


def pps_encode(g, M, rng):
    """Encode ``g`` as a PPS message with M index samples per sign part.

    The message stores the l1 masses of the two sign parts and, for each
    nonzero part, M indices drawn with probability proportional to component
    magnitude.  ``pps_decode`` of the result is an unbiased estimate of ``g``.
    A zero part is transmitted as mass 0 with no indices.
    """
    g = np.asarray(g, dtype=float)
    if M < 1:
        raise ValueError("M must be >= 1")
    pos, neg = split_signs(g)
    cutoff = TINY_REL * (pos.sum() + neg.sum())
    pos = _truncate_small(pos, cutoff)
    neg = _truncate_small(neg, cutoff)
    pos_mass = float(pos.sum())
    neg_mass = float(neg.sum())
    pos_idx = categorical_sample(pos, M, rng) if pos_mass > 0 else _EMPTY_IDX
    neg_idx = categorical_sample(neg, M, rng) if neg_mass > 0 else _EMPTY_IDX
    return QuantizedGradient(g.size, pos_mass, neg_mass, pos_idx, neg_idx)


def pps_simplified_encode(g, M, rng):
    """PPS encoding for non-negative vectors (gradients on the simplex).

    The negative part is structurally absent.  When the input has unit l1
    mass the stored mass is exactly 1.0 and is not counted as transmitted.
    """
    g = np.asarray(g, dtype=float)
    if M < 1:
        raise ValueError("M must be >= 1")
    if np.any(g < 0):
        raise ValueError("simplified encoding requires a non-negative vector")
    w = _truncate_small(g.copy(), TINY_REL * g.sum())
    mass = float(w.sum())
    if abs(mass - 1.0) <= 1e-12:
        mass = 1.0
    idx = categorical_sample(w, M, rng) if mass > 0 else _EMPTY_IDX
    return QuantizedGradient(g.size, mass, 0.0, idx, _EMPTY_IDX, simplified=True)


def pps_decode(q):
    """Evaluate a PPS message back into a dense vector."""
    out = np.zeros(q.dim)
    if q.pos_indices.size:
        counts = np.bincount(q.pos_indices, minlength=q.dim)
        out += q.pos_mass * (counts / q.pos_indices.size)
    if q.neg_indices.size:
        counts = np.bincount(q.neg_indices, minlength=q.dim)
        out -= q.neg_mass * (counts / q.neg_indices.size)
    return out


def index_bits(dim):
    """ceil(log2(dim)): bit width of one transmitted component index."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return int(dim - 1).bit_length()


def _transmitted_floats(q):
    if not q.simplified:
        return 2
    return 0 if q.pos_mass == 1.0 else 1


def message_bits(q, float_bits=64, wire=False):
    """Number of bits needed to communicate a PPS message.

    With ``wire=False`` (default) this is the nominal payload count used by
    the solvers' bit meter: one float per transmitted mass plus
    ceil(log2(dim)) bits per index.  Two masses are always transmitted for
    general messages (a zero-mass part sends mass 0 and no indices); a
    simplified message sends one mass, or none when the mass is exactly 1.

    With ``wire=True`` the count is the exact serialised size of
    ``to_bytes(q, float_bits)`` in bits, including the flags byte, the varint
    index counts, and padding of the packed indices to a whole byte.
    """
    if float_bits not in (32, 64):
        raise ValueError("float_bits must be 32 or 64")
    nfloats = _transmitted_floats(q)
    if not wire:
        return nfloats * float_bits + q.sample_count * index_bits(q.dim)
    nbytes = 1 + nfloats * (float_bits // 8)
    nbytes += _varint_len(q.pos_indices.size)
    if not q.simplified:
        nbytes += _varint_len(q.neg_indices.size)
    nbytes += (q.sample_count * index_bits(q.dim) + 7) // 8
    return 8 * nbytes


def pps_sigma2(r, M, n, B, sigma, simplified=False):
    """Variance proxy sigma_{r,M}^2 of the batched, quantized gradient.

    ``50 * (2 * (1 - 1/n) * B^2 / (e M) + sigma^2 / r)`` in general; the
    ``simplified`` flag selects the one-signed unit-mass variant
    ``50 * ((n - 1) / (e n M) + sigma^2 / r)``.
    """
    if r < 1 or M < 1 or n < 1:
        raise ValueError("r, M, n must be >= 1")
    if B < 0 or sigma < 0:
        raise ValueError("B and sigma must be non-negative")
    if simplified:
        quant = (n - 1) / (math.e * n * M)
    else:
        quant = 2.0 * (1.0 - 1.0 / n) * B * B / (math.e * M)
    return 50.0 * (quant + sigma * sigma / r)


def topM_encode(g, M):
    """Keep the M largest-magnitude entries of ``g`` (biased baseline).

    Ties are broken toward the lowest index for determinism.
    """
    g = np.asarray(g, dtype=float)
    if not 1 <= M <= g.size:
        raise ValueError("need 1 <= M <= len(g)")
    order = np.lexsort((np.arange(g.size), -np.abs(g)))
    out = np.zeros_like(g)
    keep = order[:M]
    out[keep] = g[keep]
    return out


def randomM_encode(g, M, rng):
    """Keep M uniformly chosen entries scaled by n/M (unbiased baseline)."""
    g = np.asarray(g, dtype=float)
    n = g.size
    if not 1 <= M <= n:
        raise ValueError("need 1 <= M <= len(g)")
    keep = rng.choice(n, size=M, replace=False)
    out = np.zeros_like(g)
    out[keep] = g[keep] * (n / M)
    return out


def pps_compressor(M):
    """Compressor callable (x, rng) -> decoded PPS estimate with M samples."""

    def compress(x, rng):
        return pps_decode(pps_encode(x, M, rng))

    return compress


def random_m_compressor(M):
    def compress(x, rng):
        return randomM_encode(x, M, rng)

    return compress


def top_m_compressor(M):
    def compress(x, rng):
        return topM_encode(x, M)

    return compress


def identity_compressor():
    def compress(x, rng):
        return np.asarray(x, dtype=float).copy()

    return compress


def estimate_second_moment(compressor, x, trials, rng):
    """Monte-Carlo estimate of E||Q(x) - x||^2 and its ratio to ||x||^2."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = np.asarray(x, dtype=float)
    sqnorm = float(x @ x)
    acc = 0.0
    for _ in range(trials):
        d = compressor(x, rng) - x
        acc += float(d @ d)
    second = acc / trials
    rel = second / sqnorm if sqnorm > 0 else float("nan")
    return CompressorStats(second, rel, trials)


# ---------------------------------------------------------------------------
# wire codec: [u8 flags][masses][varint counts][packed ceil(log2 n)-bit indices]
# little-endian throughout; used by the simulator's byte-exact telemetry.


def _varint_len(value):
    n = 1
    while value >= 0x80:
        value >>= 7
        n += 1
    return n


def _write_varint(out, value):
    while True:
        byte = value & 0x7F
        value >>= 7
        out.append(byte | (0x80 if value else 0))
        if not value:
            return


def _read_varint(buf, pos):
    value = 0
    shift = 0
    while True:
        byte = buf[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7


def _pack_indices(idx, width):
    if width == 0 or idx.size == 0:
        return b""
    bits = ((idx[:, None] >> np.arange(width)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _unpack_indices(data, count, width):
    if count == 0:
        return _EMPTY_IDX
    if width == 0:
        return np.zeros(count, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[: count * width].reshape(count, width).astype(np.int64)
    return bits @ (1 << np.arange(width, dtype=np.int64))


def to_bytes(q, float_bits=64):
    """Serialise a message to its wire layout (little-endian)."""
    if float_bits not in (32, 64):
        raise ValueError("float_bits must be 32 or 64")
    fmt = "<f" if float_bits == 32 else "<d"
    flags = 0
    if q.simplified:
        flags |= FLAG_SIMPLIFIED
        if q.pos_mass == 1.0:
            flags |= FLAG_UNIT_MASS
    if float_bits == 32:
        flags |= FLAG_FLOAT32
    out = bytearray([flags])
    if q.simplified:
        if q.pos_mass != 1.0:
            out += struct.pack(fmt, q.pos_mass)
        _write_varint(out, q.pos_indices.size)
    else:
        out += struct.pack(fmt, q.pos_mass)
        out += struct.pack(fmt, q.neg_mass)
        _write_varint(out, q.pos_indices.size)
        _write_varint(out, q.neg_indices.size)
    width = index_bits(q.dim)
    all_idx = np.concatenate([q.pos_indices, q.neg_indices])
    out += _pack_indices(all_idx, width)
    return bytes(out)


def from_bytes(buf, dim):
    """Deserialise a message; ``dim`` supplies the index width context."""
    flags = buf[0]
    pos = 1
    float_bits = 32 if flags & FLAG_FLOAT32 else 64
    fmt = "<f" if float_bits == 32 else "<d"
    size = float_bits // 8
    simplified = bool(flags & FLAG_SIMPLIFIED)
    if simplified:
        if flags & FLAG_UNIT_MASS:
            pos_mass = 1.0
        else:
            pos_mass = struct.unpack_from(fmt, buf, pos)[0]
            pos += size
        neg_mass = 0.0
        n_pos, pos = _read_varint(buf, pos)
        n_neg = 0
    else:
        pos_mass = struct.unpack_from(fmt, buf, pos)[0]
        neg_mass = struct.unpack_from(fmt, buf, pos + size)[0]
        pos += 2 * size
        n_pos, pos = _read_varint(buf, pos)
        n_neg, pos = _read_varint(buf, pos)
    width = index_bits(dim)
    idx = _unpack_indices(buf[pos:], n_pos + n_neg, width)
    return QuantizedGradient(
        dim,
        float(pos_mass),
        float(neg_mass),
        idx[:n_pos],
        idx[n_pos:],
        simplified=simplified,
    )
