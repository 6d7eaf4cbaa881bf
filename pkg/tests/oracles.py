"""Naive reference implementations the fast code is checked against.

Everything here favors obviousness over speed: plain Python loops, no
vectorization, no shared code with the package under test.
"""

import numpy as np


def census_naive(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    out = np.zeros((h, w), dtype=np.uint32)
    for y in range(h):
        for x in range(w):
            bit = 0
            code = 0
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    if dy == 0 and dx == 0:
                        continue
                    ny = min(max(y + dy, 0), h - 1)
                    nx = min(max(x + dx, 0), w - 1)
                    if plane[ny, nx] < plane[y, x]:
                        code |= 1 << bit
                    bit += 1
            out[y, x] = code
    return out


def hamming_volume_naive(left_codes, right_codes, disparities: int) -> np.ndarray:
    h, w = left_codes.shape
    out = np.zeros((h, w, disparities), np.float32)
    for y in range(h):
        for d in range(disparities):
            for x in range(w):
                xs = max(x, d)  # fill rule: x < d copies the first valid column
                out[y, x, d] = bin(int(left_codes[y, xs]) ^ int(right_codes[y, xs - d])).count("1")
    return out


def chroma_volume_naive(left, right, disparities: int) -> np.ndarray:
    h, w = left.shape
    out = np.zeros((h, w, disparities), np.float32)
    for y in range(h):
        for d in range(disparities):
            for x in range(w):
                xs = max(x, d)
                out[y, x, d] = abs(np.float32(left[y, xs]) - np.float32(right[y, xs - d]))
    return out


def conv2d_naive(x, k, b, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    co, ci, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for ni in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for cc in range(ci):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += float(xp[ni, cc, i + a, j + bb]) * float(k[o, cc, a, bb])
                    out[ni, o, i, j] = acc + (float(b[o]) if b is not None else 0.0)
    return out


def tconv2x2_naive(x, k) -> np.ndarray:
    n, c, h, w = x.shape
    ci, co, _, _ = k.shape
    out = np.zeros((n, co, 2 * h, 2 * w), dtype=np.float64)
    for ni in range(n):
        for i in range(h):
            for j in range(w):
                for o in range(co):
                    for a in range(2):
                        for bb in range(2):
                            acc = 0.0
                            for cc in range(ci):
                                acc += float(x[ni, cc, i, j]) * float(k[cc, o, a, bb])
                            out[ni, o, 2 * i + a, 2 * j + bb] += acc
    return out


def maxpool_naive(x) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), x.dtype)
    for ni in range(n):
        for cc in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ni, cc, i, j] = x[ni, cc, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return out


def stats_two_pass(arrays) -> tuple[float, float]:
    flat = np.concatenate([a.reshape(-1).astype(np.float64) for a in arrays])
    return float(flat.mean()), float(flat.std())
