"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops, no shared code with the
package) so that agreement is meaningful.
"""

from fractions import Fraction

import numpy as np


def rle_to_pixels(runs, height, width):
    """Set of (r, c) foreground pixels, walking the runs one pixel at a time."""
    pixels, pos, value = set(), 0, 0
    for run in runs:
        for _ in range(run):
            if value:
                pixels.add((pos // width, pos % width))
            pos += 1
        value ^= 1
    assert pos == height * width
    return pixels


def brute_force_rasterize(masks, height, width, rows, cols, tau=0.0, min_confidence=0.5):
    """Tally covered pixels per cell by enumerating every pixel."""
    covered = set()
    for runs, score in masks:
        if score >= min_confidence:
            covered |= rle_to_pixels(runs, height, width)
    total = [[0] * cols for _ in range(rows)]
    hit = [[0] * cols for _ in range(rows)]
    for r in range(height):
        for c in range(width):
            cr, cc = (r * rows) // height, (c * cols) // width
            total[cr][cc] += 1
            if (r, c) in covered:
                hit[cr][cc] += 1
    # exact rational comparison: hit / total > tau
    tau = Fraction(tau).limit_denominator(10**9) if not isinstance(tau, Fraction) else tau
    return [int(Fraction(hit[i][j], total[i][j]) > tau) for i in range(rows) for j in range(cols)]


def naive_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(n)] for i in range(m)]


def harmonic_mean(values):
    if any(v == 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def count_tensors(shapes):
    total = 0
    for dims in shapes:
        n = 1
        for d in dims:
            n *= d
        total += n
    return total


def linear_fusion_loops(q, v, W_q, W_v, b_h, W_P, b_P, act=np.tanh):
    """Per-unit loop evaluation of W_P act(W_q q + W_v v + b_h) + b_P for one record."""
    c = len(b_h)
    h = []
    for j in range(c):
        s = b_h[j]
        s += sum(q[i] * W_q[i][j] for i in range(len(q)))
        s += sum(v[i] * W_v[i][j] for i in range(len(v)))
        h.append(act(s))
    return [b_P[k] + sum(h[j] * W_P[j][k] for j in range(c)) for k in range(len(b_P))]
