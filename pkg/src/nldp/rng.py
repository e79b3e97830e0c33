"""Per-path counter-based random streams.

Every path owns a Philox4x64-10 stream keyed by ``(master_seed, stream_index)``.
The jitted generator below reproduces the raw words of
:class:`numpy.random.Philox` for the same key, so a path's draws depend only on
its own key and draw counter, never on how paths are batched or scheduled.

Two channels are carved out of the 256-bit counter: word 1 = 0 feeds Gaussian
increments, word 1 = 1 feeds uniforms (killing thresholds, redistribution,
bridge tests). Word 0 is the block index within a channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_ZERO = np.uint64(0)

_TWO_M53 = 1.0 / 9007199254740992.0

NORMAL_CHANNEL = 0
UNIFORM_CHANNEL = 1


@intrinsic
def _mulhi(typingctx, a, b):
    """High 64 bits of the 128-bit product of two uint64."""
    sig = types.uint64(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i128 = ir.IntType(128)
        wide = builder.mul(builder.zext(args[0], i128), builder.zext(args[1], i128))
        return builder.trunc(builder.lshr(wide, ir.Constant(i128, 64)), ir.IntType(64))

    return sig, codegen


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    return _mulhi(a, b), a * b


@nb.njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 bijection of one counter block."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _u53(r):
    return np.float64(r >> _S11) * _TWO_M53


@nb.njit(cache=True)
def fill_uniforms(k0, k1, block, buf):
    """Fill ``buf`` (length a multiple of 4) with uniforms in [0, 1).

    Starts at counter block ``block`` of the uniform channel; returns the next
    unused block.
    """
    ch = np.uint64(UNIFORM_CHANNEL)
    for n in range(0, buf.shape[0], 4):
        r0, r1, r2, r3 = philox4x64(np.uint64(block), ch, _ZERO, _ZERO, k0, k1)
        block += 1
        buf[n] = _u53(r0)
        buf[n + 1] = _u53(r1)
        buf[n + 2] = _u53(r2)
        buf[n + 3] = _u53(r3)
    return block


@nb.njit(cache=True)
def fill_normals(k0, k1, block, buf):
    """Fill ``buf`` (even length) with standard normals by Marsaglia's polar method.

    Each counter block of the normal channel yields two candidate pairs. A fill
    always starts on a fresh block, so the sequence is a function of the key and
    the (fixed) buffer length ``BUFFER``. Returns the next unused block.
    """
    ch = np.uint64(NORMAL_CHANNEL)
    n = 0
    size = buf.shape[0]
    while n < size:
        r0, r1, r2, r3 = philox4x64(np.uint64(block), ch, _ZERO, _ZERO, k0, k1)
        block += 1
        v1 = 2.0 * _u53(r0) - 1.0
        v2 = 2.0 * _u53(r1) - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            f = np.sqrt(-2.0 * np.log(s) / s)
            buf[n] = v1 * f
            buf[n + 1] = v2 * f
            n += 2
            if n >= size:
                # the second pair of this block is lost; restart the next fill on a fresh block
                break
        v1 = 2.0 * _u53(r2) - 1.0
        v2 = 2.0 * _u53(r3) - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            f = np.sqrt(-2.0 * np.log(s) / s)
            buf[n] = v1 * f
            buf[n + 1] = v2 * f
            n += 2
    return block


BUFFER = 16


def _key(master_seed: int, stream_index: int) -> tuple[np.uint64, np.uint64]:
    mask = (1 << 64) - 1
    return np.uint64(int(master_seed) & mask), np.uint64(int(stream_index) & mask)


@dataclass
class RngStream:
    """Independent random stream of one simulated path.

    Draws are produced in buffers of ``BUFFER`` values exactly as in the
    compiled kernel, so a Python-side stream and a kernel path consume
    identical numbers in identical order.
    """

    master_seed: int
    stream_index: int
    _normal_block: int = field(default=0, repr=False)
    _uniform_block: int = field(default=0, repr=False)
    _normal_buf: list = field(default_factory=list, repr=False)
    _uniform_buf: list = field(default_factory=list, repr=False)

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return _key(self.master_seed, self.stream_index)

    def normals(self, n: int) -> np.ndarray:
        chunk = np.empty(BUFFER)
        while len(self._normal_buf) < n:
            self._normal_block = fill_normals(*self.key, self._normal_block, chunk)
            self._normal_buf.extend(chunk.tolist())
        out = np.array(self._normal_buf[:n])
        del self._normal_buf[:n]
        return out

    def uniforms(self, n: int) -> np.ndarray:
        chunk = np.empty(BUFFER)
        while len(self._uniform_buf) < n:
            self._uniform_block = fill_uniforms(*self.key, self._uniform_block, chunk)
            self._uniform_buf.extend(chunk.tolist())
        out = np.array(self._uniform_buf[:n])
        del self._uniform_buf[:n]
        return out


def raw_block(master_seed: int, stream_index: int, counter: tuple[int, int, int, int]) -> np.ndarray:
    """Raw Philox output for one counter value; exposed for cross-checking."""
    c = [np.uint64(v) for v in counter]
    return np.array(philox4x64(c[0], c[1], c[2], c[3], *_key(master_seed, stream_index)), dtype=np.uint64)


def key_words(master_seed: int, stream_index: int) -> tuple[np.uint64, np.uint64]:
    return _key(master_seed, stream_index)
