"""Straight-line reference implementations used only by the tests.

These deliberately avoid the vectorised code paths in the package: plain
Python loops over every index, written directly from the definitions.
"""

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    n, c, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    og = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for o in range(cout):
            g = o // og
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cg):
                        cin = g * cg + ci
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride - padding + ky * dilation
                                ix = ox * stride - padding + kx * dilation
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[bi, cin, iy, ix] * w[o, ci, ky, kx]
                    out[bi, o, oy, ox] = acc
    return out


def max_pool_loops(x, k, s):
    n, c, h, w = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((n, c, ho, wo))
    for bi in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    out[bi, ci, oy, ox] = max(
                        x[bi, ci, oy * s + dy, ox * s + dx] for dy in range(k) for dx in range(k)
                    )
    return out


def bilinear_loops(x, out_h, out_w):
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))

    def src(i, n_in, n_out):
        p = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        i0 = min(int(p), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        return i0, i1, p - i0

    for oy in range(out_h):
        y0, y1, ly = src(oy, h, out_h)
        for ox in range(out_w):
            x0, x1, lx = src(ox, w, out_w)
            out[:, :, oy, ox] = (
                (1 - ly) * (1 - lx) * x[:, :, y0, x0]
                + (1 - ly) * lx * x[:, :, y0, x1]
                + ly * (1 - lx) * x[:, :, y1, x0]
                + ly * lx * x[:, :, y1, x1]
            )
    return out


def channel_mean_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, 1, h, w))
    for bi in range(n):
        for y in range(h):
            for xx in range(w):
                out[bi, 0, y, xx] = sum(x[bi, ci, y, xx] for ci in range(c)) / c
    return out


def spatial_mean_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for bi in range(n):
        for ci in range(c):
            out[bi, ci, 0, 0] = sum(x[bi, ci, y, xx] for y in range(h) for xx in range(w)) / (h * w)
    return out


def cross_entropy_loops(logits, labels, ignore_index=255):
    n, k, h, w = logits.shape
    total, count = 0.0, 0
    for bi in range(n):
        for y in range(h):
            for xx in range(w):
                lab = labels[bi, y, xx]
                if lab == ignore_index:
                    continue
                zs = [logits[bi, j, y, xx] for j in range(k)]
                m = max(zs)
                lse = m + math.log(sum(math.exp(z - m) for z in zs))
                total += lse - zs[lab]
                count += 1
    return total / count if count else 0.0


def sharpening_module_loops(x, dw_weight, dw_bias):
    """Five-step recipe of the learned sharpening module, one index at a time."""
    n, c, h, w = x.shape
    k = dw_weight.shape[-1]
    pad = k // 2
    z = np.zeros_like(x)
    for bi in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(w):
                    acc = dw_bias[ci]
                    for ky in range(k):
                        for kx in range(k):
                            iy, ix = y - pad + ky, xx - pad + kx
                            if 0 <= iy < h and 0 <= ix < w:
                                acc += x[bi, ci, iy, ix] * dw_weight[ci, 0, ky, kx]
                    z[bi, ci, y, xx] = acc
    out = np.zeros_like(x)
    for bi in range(n):
        means = [sum(z[bi, ci, y, xx] for y in range(h) for xx in range(w)) / (h * w) for ci in range(c)]
        mx = max(means)
        exps = [math.exp(m - mx) for m in means]
        s = [e / sum(exps) for e in exps]
        for y in range(h):
            for xx in range(w):
                avg = sum(z[bi, ci, y, xx] for ci in range(c)) / c
                for ci in range(c):
                    yv = x[bi, ci, y, xx] - avg
                    out[bi, ci, y, xx] = z[bi, ci, y, xx] + s[ci] * yv
    return out


def bem_loops(f, fuse_w, fuse_b, pool=2):
    """Pool, upsample, subtract, concat, 3x3 fuse, written index by index."""
    n, c, h, w = f.shape
    pooled = max_pool_loops(f, pool, pool)
    up = bilinear_loops(pooled, h, w)
    r = f - up
    stacked = np.concatenate([f, r], axis=1)
    return conv2d_loops(stacked, fuse_w, fuse_b, padding=1), r
