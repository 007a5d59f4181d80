"""Digital-domain quantized arithmetic for binary/ternary networks.

Values ("trits") live in {-1, 0, +1}; binary tensors never hold 0.  The
integer dot product of two trit vectors is called popcount here, matching
common usage for XNOR-style inference engines, and is the exact oracle that
every analog crossbar result in this package is checked against.

Two popcount routes are provided on purpose: a plain int64 reference path
and a bit-packed kernel path (two bitplanes, i.e. two bits per trit).  They
must agree bit-exactly; the test suite enforces this exhaustively for short
vectors.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

TRIT_DTYPE = np.int8


class Precision(enum.Enum):
    BINARY = "binary"
    TERNARY = "ternary"

    @property
    def allowed_values(self):
        return (-1, 1) if self is Precision.BINARY else (-1, 0, 1)


def _as_trits(values):
    arr = np.asarray(values)
    if arr.dtype != TRIT_DTYPE:
        if arr.dtype.kind == "f" and not np.all(arr == np.round(arr)):
            raise DomainError("trit array must hold integer values")
        arr = arr.astype(TRIT_DTYPE)
    return arr


@dataclass(frozen=True)
class TernaryTensor:
    """Dense tensor over {-1, 0, +1} with a declared precision."""

    data: np.ndarray
    precision: Precision

    def __post_init__(self):
        arr = _as_trits(self.data)
        object.__setattr__(self, "data", arr)
        vals = np.unique(arr)
        allowed = set(self.precision.allowed_values)
        bad = [int(v) for v in vals if int(v) not in allowed]
        if bad:
            raise DomainError(
                f"values {bad} not allowed at precision {self.precision.value}"
            )

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def ravel(self):
        return TernaryTensor(self.data.ravel(), self.precision)

    def reshape(self, shape):
        return TernaryTensor(self.data.reshape(shape), self.precision)

    def __eq__(self, other):
        return (
            isinstance(other, TernaryTensor)
            and self.precision is other.precision
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise DomainError("activation input must be finite")


def act_binary(x):
    """Binary activation: +1 for x >= 0, -1 for x < 0.  Scalar or array."""
    arr = np.asarray(x, dtype=np.float64)
    _check_finite(arr)
    out = np.where(arr >= 0.0, 1, -1).astype(TRIT_DTYPE)
    return out[()] if np.ndim(x) == 0 else out


def act_ternary(x, r):
    """Ternary activation with dead band: +1 above r, -1 below -r, else 0.

    The dead band is inclusive at both edges, so the three cases partition
    the reals.  r must be strictly positive (r = 0 would collapse to the
    binary activation with an empty zero band).
    """
    if not np.isfinite(r) or r <= 0.0:
        raise DomainError(f"ternary threshold must be finite and > 0, got {r}")
    arr = np.asarray(x, dtype=np.float64)
    _check_finite(arr)
    out = np.zeros(arr.shape, dtype=TRIT_DTYPE)
    out[arr > r] = 1
    out[arr < -r] = -1
    return out[()] if np.ndim(x) == 0 else out


def gated_xnor(x, w):
    """Trit product: 0 when either input is 0, XNOR polarity otherwise."""
    xi, wi = int(x), int(w)
    if xi not in (-1, 0, 1) or wi not in (-1, 0, 1):
        raise DomainError(f"gated_xnor operands must be trits, got {x}, {w}")
    return xi * wi


def popcount_oracle(x, w):
    """Exact integer dot product of two 1-D trit vectors (the digital oracle)."""
    xa = x.data if isinstance(x, TernaryTensor) else _as_trits(x)
    wa = w.data if isinstance(w, TernaryTensor) else _as_trits(w)
    if xa.ndim != 1 or wa.ndim != 1:
        raise ShapeError("popcount_oracle expects 1-D vectors")
    if xa.shape[0] != wa.shape[0]:
        raise ShapeError(f"length mismatch: {xa.shape[0]} vs {wa.shape[0]}")
    return int(np.dot(xa.astype(np.int64), wa.astype(np.int64)))


# ---------------------------------------------------------------------------
# Packed kernel path: two bitplanes (plus-mask, minus-mask) in uint64 words.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedTrits:
    """Bitplane-packed trit vector: bit i of pos/neg marks element i == +/-1."""

    pos: np.ndarray  # uint64 words
    neg: np.ndarray
    n: int


def pack_trits(trits):
    """Pack a 1-D trit vector into two uint64 bitplanes (2 bits per trit)."""
    arr = _as_trits(trits).ravel()
    n = arr.shape[0]
    nwords = max(1, (n + 63) // 64)
    pos_bits = np.packbits((arr > 0).astype(np.uint8), bitorder="little")
    neg_bits = np.packbits((arr < 0).astype(np.uint8), bitorder="little")
    pos = np.zeros(nwords * 8, dtype=np.uint8)
    neg = np.zeros(nwords * 8, dtype=np.uint8)
    pos[: pos_bits.size] = pos_bits
    neg[: neg_bits.size] = neg_bits
    return PackedTrits(pos.view(np.uint64), neg.view(np.uint64), n)


def unpack_trits(packed):
    """Inverse of pack_trits."""
    pos = np.unpackbits(packed.pos.view(np.uint8), bitorder="little")[: packed.n]
    neg = np.unpackbits(packed.neg.view(np.uint8), bitorder="little")[: packed.n]
    return (pos.astype(TRIT_DTYPE) - neg.astype(TRIT_DTYPE))


def popcount_packed(a, b):
    """Bit-parallel popcount over packed vectors; bit-exact vs the oracle.

    dot = |pos&pos| + |neg&neg| - |pos&neg| - |neg&pos|
    """
    if a.n != b.n:
        raise ShapeError(f"length mismatch: {a.n} vs {b.n}")
    agree = int(np.bitwise_count(a.pos & b.pos).sum()) + int(
        np.bitwise_count(a.neg & b.neg).sum()
    )
    differ = int(np.bitwise_count(a.pos & b.neg).sum()) + int(
        np.bitwise_count(a.neg & b.pos).sum()
    )
    return agree - differ


def quantize_weights(latent, precision, r=0.5):
    """Quantize real-valued latent weights to trits.

    Binary: sign with the 0 tie mapped to +1.  Ternary: dead-band threshold
    at r, same convention as act_ternary.
    """
    arr = np.asarray(latent, dtype=np.float64)
    _check_finite(arr)
    if precision is Precision.BINARY:
        q = act_binary(arr)
    else:
        q = act_ternary(arr, r)
    return TernaryTensor(np.asarray(q, dtype=TRIT_DTYPE), precision)
