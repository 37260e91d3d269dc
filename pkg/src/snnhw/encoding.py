"""Rate coding of grayscale images into binary spike trains.

Each pixel intensity p in [0, 1] becomes an independent Bernoulli(p) draw at
every timestep. The uniform behind draw (t, i) comes from a SplitMix64 hash of
``(seed, t, i)``, so a bit never depends on evaluation order, batch layout or
how many other pixels are encoded alongside it.

Images are flattened row-major: neuron index = row * width + col.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TIMESTEPS = 25

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class PGMError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class SpikeFileError(ValueError):
    pass


@dataclass(frozen=True)
class IntensityGrid:
    values: np.ndarray  # (height, width) float64 in [0, 1]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("intensity grid must be a non-empty 2-D array")
        if np.any(~np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True)
class SpikeTrain:
    bits: np.ndarray  # (T, N) uint8 of 0/1
    seed: int | None = None

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError("spike train must be a (T, N) array")
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ValueError("spike train entries must be 0 or 1")
        object.__setattr__(self, "bits", b.astype(np.uint8, copy=False))

    @property
    def timesteps(self) -> int:
        return self.bits.shape[0]

    @property
    def neurons(self) -> int:
        return self.bits.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SpikeTrain):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


# -- counter-based RNG --------------------------------------------------------


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(*keys: int) -> int:
    """Fold integer keys into one 64-bit seed (SplitMix64 chain)."""
    state = np.zeros(1, dtype=np.uint64)
    for k in keys:
        state = _mix64(state + np.array([int(k) & _MASK64], dtype=np.uint64) + _GOLDEN)
    return int(state[0])


def counter_uniforms(seeds, timesteps: int, neurons: int) -> np.ndarray:
    """Uniforms in [0, 1) of shape ``(len(seeds), T, N)``; entry depends only on (seed, t, i)."""
    if isinstance(seeds, (int, np.integer)):
        seeds = [seeds]
    # python ints: a numpy round trip can turn large seeds into floats
    keys = np.array([int(s) & _MASK64 for s in seeds], dtype=np.uint64)
    keys = _mix64(keys + _GOLDEN)
    t = np.arange(timesteps, dtype=np.uint64)[:, None] << np.uint64(32)
    i = np.arange(neurons, dtype=np.uint64)[None, :]
    ctr = (t | i)[None, :, :]
    z = _mix64(_mix64(keys[:, None, None] ^ ctr) + _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


# -- encoding -----------------------------------------------------------------


def normalize_image(pixels) -> IntensityGrid:
    px = np.asarray(pixels)
    if px.size == 0:
        raise ValueError("cannot normalize an empty image")
    if px.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    if px.min() < 0 or px.max() > 255:
        raise ValueError("pixel values must be 8-bit (0..255)")
    return IntensityGrid(px.astype(np.float64) / 255.0)


def rate_encode(grid, timesteps: int = DEFAULT_TIMESTEPS, seed: int = 0) -> SpikeTrain:
    """Bernoulli rate coding; ``grid`` is an :class:`IntensityGrid` or an intensity array."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    p = grid.flat() if isinstance(grid, IntensityGrid) else np.asarray(grid, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("intensities must be non-empty and lie in [0, 1]")
    u = counter_uniforms([seed], timesteps, p.size)[0]
    return SpikeTrain((u < p[None, :]).astype(np.uint8), seed=seed)


def rate_encode_batch(intensities, timesteps: int, seeds) -> np.ndarray:
    """Encode a batch ``(B, N)`` with one seed per row; returns ``(B, T, N)`` uint8.

    Row b equals ``rate_encode(intensities[b], timesteps, seeds[b]).bits``.
    """
    p = np.asarray(intensities, dtype=np.float64)
    u = counter_uniforms(seeds, timesteps, p.shape[1])
    return (u < p[:, None, :]).astype(np.uint8)


def spike_rate(train: SpikeTrain) -> np.ndarray:
    return train.bits.sum(axis=0, dtype=np.int64) / train.timesteps


# -- PGM (P5) -------------------------------------------------------------------


def parse_pgm(data: bytes) -> np.ndarray:
    """Parse a binary P5 image with maxval 255 into a (height, width) uint8 array."""
    pos = 0
    n = len(data)

    def skip_ws():
        nonlocal pos
        while pos < n:
            c = data[pos]
            if c == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            elif c in b" \t\r\n\v\f":
                pos += 1
            else:
                break

    def read_int(what):
        nonlocal pos
        skip_ws()
        start = pos
        while pos < n and 48 <= data[pos] <= 57:
            pos += 1
        if pos == start:
            raise PGMError(f"expected {what}", start)
        return int(data[start:pos]), start

    if data[:2] != b"P5":
        raise PGMError("missing P5 magic", 0)
    pos = 2
    width, off = read_int("width")
    if width < 1:
        raise PGMError("width must be positive", off)
    height, off = read_int("height")
    if height < 1:
        raise PGMError("height must be positive", off)
    maxval, off = read_int("maxval")
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval}, expected 255", off)
    if pos >= n or data[pos] not in b" \t\r\n\v\f":
        raise PGMError("expected single whitespace before raster", pos)
    pos += 1
    need = width * height
    if n - pos < need:
        raise PGMError(f"raster truncated: need {need} bytes, have {n - pos}", pos)
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width).copy()


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def write_pgm(path, pixels):
    px = np.asarray(pixels, dtype=np.uint8)
    h, w = px.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + px.tobytes())


def resize_nearest(pixels, height: int, width: int) -> np.ndarray:
    px = np.asarray(pixels)
    h, w = px.shape
    if (h, w) == (height, width):
        return px
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return px[rows[:, None], cols[None, :]]


# -- SPKT bitstream -----------------------------------------------------------

SPKT_MAGIC = b"SPKT"
SPKT_VERSION = 1
_SPKT_HEADER = struct.Struct("<4sHII2x")  # 16 bytes


def spikes_to_bytes(train: SpikeTrain) -> bytes:
    header = _SPKT_HEADER.pack(SPKT_MAGIC, SPKT_VERSION, train.timesteps, train.neurons)
    return header + np.packbits(train.bits.reshape(-1), bitorder="little").tobytes()


def spikes_from_bytes(data: bytes) -> SpikeTrain:
    if len(data) < _SPKT_HEADER.size:
        raise SpikeFileError("spike file shorter than its 16-byte header")
    magic, version, t, n = _SPKT_HEADER.unpack_from(data)
    if magic != SPKT_MAGIC:
        raise SpikeFileError(f"bad magic {magic!r}, expected {SPKT_MAGIC!r}")
    if version != SPKT_VERSION:
        raise SpikeFileError(f"unsupported spike file version {version}")
    nbits = t * n
    payload = data[_SPKT_HEADER.size:]
    if len(payload) != (nbits + 7) // 8:
        raise SpikeFileError(f"payload is {len(payload)} bytes, expected {(nbits + 7) // 8} for T={t} N={n}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=nbits, bitorder="little")
    return SpikeTrain(bits.reshape(t, n))


def write_spikes(path, train: SpikeTrain):
    Path(path).write_bytes(spikes_to_bytes(train))


def read_spikes(path) -> SpikeTrain:
    return spikes_from_bytes(Path(path).read_bytes())
