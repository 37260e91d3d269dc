"""Hot loops of the fixed-point datapath.

Every kernel exists twice: a loop form compiled by numba and a vectorized
numpy form. Both are bit-exact integer code and must return identical results;
``_accel.pick`` selects one at import time.

Raw values are int64 throughout. Layer parameters are packed as an int64
vector ``[beta, threshold, u_rest, refractory_steps, reset_subtract]``.
"""
import numpy as np

from ._accel import njit, pick

NET_MIN = -(1 << 15)
NET_MAX = (1 << 15) - 1
ACC_MIN = -(1 << 27)
ACC_MAX = (1 << 27) - 1
FRAC = 15
_HALF = 1 << (FRAC - 1)

# indices into the op tally returned by hw_run
TALLY_TREE_ADDS = 0
TALLY_BIAS_ADDS = 1
TALLY_NEURON_MULTS = 2
TALLY_SYNAPTIC_MULTS = 3
TALLY_NARROW_SATURATIONS = 4
TALLY_SIZE = 5


def tree_depth(n):
    return 0 if n <= 1 else int(n - 1).bit_length()


# -- adder tree ---------------------------------------------------------------


@njit
def _tree_reduce_numba(spikes, weights):
    """Pairwise reduction of the spike-selected weights, one tree per row."""
    B, n = spikes.shape
    acc = np.zeros(B, dtype=np.int64)
    peak = np.zeros(B, dtype=np.int64)
    overflow = np.zeros(B, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    for b in range(B):
        pk = 0
        for i in range(n):
            v = weights[b, i] if spikes[b, i] != 0 else 0
            buf[i] = v
            if abs(v) > pk:
                pk = abs(v)
        m = n
        ov = 0
        while m > 1:
            half = (m + 1) // 2
            for k in range(half):
                j = 2 * k
                s = buf[j] + buf[j + 1] if j + 1 < m else buf[j]
                if s > ACC_MAX:
                    s = ACC_MAX
                    ov += 1
                elif s < ACC_MIN:
                    s = ACC_MIN
                    ov += 1
                if abs(s) > pk:
                    pk = abs(s)
                buf[k] = s
            m = half
        acc[b] = buf[0]
        peak[b] = pk
        overflow[b] = ov
    return acc, peak, overflow


def _tree_reduce_numpy(spikes, weights):
    level = np.where(spikes != 0, weights, 0).astype(np.int64)
    peak = np.abs(level).max(axis=1)
    overflow = np.zeros(level.shape[0], dtype=np.int64)
    while level.shape[1] > 1:
        if level.shape[1] % 2:
            level = np.concatenate([level, np.zeros((level.shape[0], 1), dtype=np.int64)], axis=1)
        level = level[:, 0::2] + level[:, 1::2]
        overflow += ((level > ACC_MAX) | (level < ACC_MIN)).sum(axis=1)
        level = np.clip(level, ACC_MIN, ACC_MAX)
        peak = np.maximum(peak, np.abs(level).max(axis=1))
    return level[:, 0], peak, overflow


tree_reduce = pick(_tree_reduce_numba, _tree_reduce_numpy)


# -- full fixed-point inference -------------------------------------------------


@njit
def _rshift_round_scalar(v):
    if v >= 0:
        return (v + _HALF) >> FRAC
    return -((-v + _HALF) >> FRAC)


@njit
def _clamp(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit
def _layer_numba(w, b, active, n_active, fan_in, u, ref, p, mem_out, spk_out, tally):
    beta, thr, urest, ref_steps, subtract = p[0], p[1], p[2], p[3], p[4]
    for j in range(w.shape[0]):
        acc = 0
        for k in range(n_active):
            acc += w[j, active[k]]
        tally[TALLY_TREE_ADDS] += fan_in - 1
        acc = _clamp(acc + b[j], ACC_MIN, ACC_MAX)
        tally[TALLY_BIAS_ADDS] += 1
        cur = _clamp(acc, NET_MIN, NET_MAX)
        if cur != acc:
            tally[TALLY_NARROW_SATURATIONS] += 1
        bu = _clamp(_rshift_round_scalar(beta * u[j]), NET_MIN, NET_MAX)
        tally[TALLY_NEURON_MULTS] += 1
        c = _clamp(bu + cur, NET_MIN, NET_MAX)
        c = _clamp(c - urest, NET_MIN, NET_MAX)
        mem_out[j] = c
        if ref[j] > 0:
            spk_out[j] = 0
            u[j] = c
            ref[j] -= 1
        elif c >= thr:
            spk_out[j] = 1
            u[j] = _clamp(c - thr, NET_MIN, NET_MAX) if subtract else 0
            ref[j] = ref_steps
        else:
            spk_out[j] = 0
            u[j] = c


@njit
def _hw_run_numba(w1, b1, w2, b2, bits, p1, p2):
    T, N = bits.shape
    H = w1.shape[0]
    O = w2.shape[0]
    u1 = np.zeros(H, dtype=np.int64)
    r1 = np.zeros(H, dtype=np.int64)
    u2 = np.zeros(O, dtype=np.int64)
    r2 = np.zeros(O, dtype=np.int64)
    hmem = np.zeros((T, H), dtype=np.int64)
    hspk = np.zeros((T, H), dtype=np.uint8)
    omem = np.zeros((T, O), dtype=np.int64)
    ospk = np.zeros((T, O), dtype=np.uint8)
    tally = np.zeros(TALLY_SIZE, dtype=np.int64)
    active = np.empty(max(N, H), dtype=np.int64)
    for t in range(T):
        n = 0
        for i in range(N):
            if bits[t, i] != 0:
                active[n] = i
                n += 1
        _layer_numba(w1, b1, active, n, N, u1, r1, p1, hmem[t], hspk[t], tally)
        n = 0
        for i in range(H):
            if hspk[t, i] != 0:
                active[n] = i
                n += 1
        _layer_numba(w2, b2, active, n, H, u2, r2, p2, omem[t], ospk[t], tally)
    return hmem, hspk, omem, ospk, tally


def _layer_numpy(w, b, x, u, ref, p, tally):
    beta, thr, urest, ref_steps, subtract = (int(v) for v in p)
    fan_in = w.shape[1]
    acc = w[:, x != 0].sum(axis=1) + b
    acc = np.clip(acc, ACC_MIN, ACC_MAX)
    cur = np.clip(acc, NET_MIN, NET_MAX)
    n_out = w.shape[0]
    tally[TALLY_TREE_ADDS] += n_out * (fan_in - 1)
    tally[TALLY_BIAS_ADDS] += n_out
    tally[TALLY_NEURON_MULTS] += n_out
    tally[TALLY_NARROW_SATURATIONS] += int(np.count_nonzero(cur != acc))
    prod = beta * u
    mag = (np.abs(prod) + _HALF) >> FRAC
    bu = np.clip(np.where(prod >= 0, mag, -mag), NET_MIN, NET_MAX)
    c = np.clip(bu + cur, NET_MIN, NET_MAX)
    c = np.clip(c - urest, NET_MIN, NET_MAX)
    blocked = ref > 0
    spk = (c >= thr) & ~blocked
    reset = np.clip(c - thr, NET_MIN, NET_MAX) if subtract else 0
    u_next = np.where(spk, reset, c)
    ref_next = np.where(blocked, ref - 1, np.where(spk, ref_steps, 0))
    return c, spk.astype(np.uint8), u_next, ref_next


def _hw_run_numpy(w1, b1, w2, b2, bits, p1, p2):
    T, N = bits.shape
    H, O = w1.shape[0], w2.shape[0]
    u1 = np.zeros(H, dtype=np.int64)
    r1 = np.zeros(H, dtype=np.int64)
    u2 = np.zeros(O, dtype=np.int64)
    r2 = np.zeros(O, dtype=np.int64)
    hmem = np.zeros((T, H), dtype=np.int64)
    hspk = np.zeros((T, H), dtype=np.uint8)
    omem = np.zeros((T, O), dtype=np.int64)
    ospk = np.zeros((T, O), dtype=np.uint8)
    tally = np.zeros(TALLY_SIZE, dtype=np.int64)
    for t in range(T):
        hmem[t], hspk[t], u1, r1 = _layer_numpy(w1, b1, bits[t], u1, r1, p1, tally)
        omem[t], ospk[t], u2, r2 = _layer_numpy(w2, b2, hspk[t], u2, r2, p2, tally)
    return hmem, hspk, omem, ospk, tally


hw_run = pick(_hw_run_numba, _hw_run_numpy)
