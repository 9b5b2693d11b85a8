"""Independent brute-force oracles. Nothing here imports the package."""

import itertools

import numpy as np


def fp8_table(bias, exp_bits=4, man_bits=3):
    """Value of every code, straight from the sign/exponent/mantissa formula."""
    vals = []
    for code in range(1 << (1 + exp_bits + man_bits)):
        s = code >> (exp_bits + man_bits)
        e = (code >> man_bits) & ((1 << exp_bits) - 1)
        m = code & ((1 << man_bits) - 1)
        mag = 0.0 if e == 0 else (1 + m / (1 << man_bits)) * 2.0 ** (e - bias)
        vals.append(-mag if s else mag)
    return vals


def nearest_code(x, bias):
    """Nearest normal code by exhaustive search; ties go to the even code.

    Below the smallest normal the result is a signed zero, above the largest
    it saturates.
    """
    table = fp8_table(bias)
    min_normal = 2.0 ** (1 - bias)
    sign = 0x80 if np.signbit(x) else 0
    mag = abs(x)
    if mag < min_normal:
        return sign
    best = None
    for code in range(1, 128):
        v = table[code]
        if v == 0:
            continue
        key = (abs(v - mag), code & 1)
        if best is None or key < best[0]:
            best = (key, code)
    return sign | best[1]


def conv1d_loops(x, w, stride=1):
    """x (C, T), w (O, C, K); valid correlation; same term order as a plain loop nest."""
    c_in, t = x.shape
    o_ch, _, k = w.shape
    n_out = (t - k) // stride + 1
    out = np.zeros((o_ch, n_out))
    for o in range(o_ch):
        for n in range(n_out):
            acc = 0.0
            for c in range(c_in):
                for j in range(k):
                    acc += w[o, c, j] * x[c, n * stride + j]
            out[o, n] = acc
    return out


def dilated_loops(x, w, d):
    """Depthwise, valid, explicit index formula a[i + j(d+1)] * w[j]."""
    c, t = x.shape
    k = w.shape[1]
    n_out = t - (k + (k - 1) * d) + 1
    out = np.zeros((c, n_out))
    for ch, i in itertools.product(range(c), range(n_out)):
        out[ch, i] = sum(x[ch, i + j * (d + 1)] * w[ch, j] for j in range(k))
    return out


def transposed_scatter(x, w, s, pad=0):
    """Overlap-add: every input sample scatters a copy of the flipped tap order.

    Output n collects x[i] * w[j] where i*s = n + j - pad.
    """
    c_in, t = x.shape
    o_ch, _, k = w.shape
    n_out = (t - 1) * s + 1 + 2 * pad - k + 1
    out = np.zeros((o_ch, n_out))
    for o, c, i, j in itertools.product(range(o_ch), range(c_in), range(t), range(k)):
        n = i * s - j + pad
        if 0 <= n < n_out:
            out[o, n] += x[c, i] * w[o, c, j]
    return out
