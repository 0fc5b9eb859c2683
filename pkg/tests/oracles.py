"""Slow, obviously-correct reference implementations used as test oracles.

Everything here is written as explicit loops in float64 and shares no code
with the package under test.
"""

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, pad=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for oc in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ic, y * stride + dy, xx * stride + dx] * w[oc, ic, dy, dx]
                    out[i, oc, y, xx] = acc
    return out


def bilinear_loops(x, oh, ow):
    """Half-pixel-centre bilinear resize with edge clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, oh, ow))
    for yy in range(oh):
        sy = min(max((yy + 0.5) * h / oh - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for xx in range(ow):
            sx = min(max((xx + 0.5) * w / ow - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, :, yy, xx] = (
                x[:, :, y0, x0] * (1 - fy) * (1 - fx)
                + x[:, :, y0, x1] * (1 - fy) * fx
                + x[:, :, y1, x0] * fy * (1 - fx)
                + x[:, :, y1, x1] * fy * fx
            )
    return out


def avg_pool2_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            out[:, :, i, j] = (x[:, :, 2 * i, 2 * j] + x[:, :, 2 * i + 1, 2 * j] + x[:, :, 2 * i, 2 * j + 1] + x[:, :, 2 * i + 1, 2 * j + 1]) / 4
    return out


def pool_stats_loops(x, kind):
    n, c, h, w = x.shape
    if kind == "global_avg":
        out = np.zeros((n, c))
        for i in range(n):
            for k in range(c):
                out[i, k] = sum(x[i, k, y, z] for y in range(h) for z in range(w)) / (h * w)
        return out
    out = np.zeros((n, 1, h, w))
    for i in range(n):
        for y in range(h):
            for z in range(w):
                vals = [x[i, k, y, z] for k in range(c)]
                out[i, 0, y, z] = sum(vals) / c if kind == "channel_avg" else max(vals)
    return out


def replicate_pad_loops(x, p):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for y in range(h + 2 * p):
        for z in range(w + 2 * p):
            out[:, :, y, z] = x[:, :, min(max(y - p, 0), h - 1), min(max(z - p, 0), w - 1)]
    return out


def sobel_loops(x):
    """[N, C, 2, H, W] responses with replicated borders."""
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2, h, w))
    for i in range(n):
        for k in range(c):
            for y in range(h):
                for z in range(w):
                    gx = gy = 0.0
                    for dy in range(3):
                        for dx in range(3):
                            v = x[i, k, min(max(y + dy - 1, 0), h - 1), min(max(z + dx - 1, 0), w - 1)]
                            gx += kx[dy][dx] * v
                            gy += kx[dx][dy] * v
                    out[i, k, 0, y, z] = gx
                    out[i, k, 1, y, z] = gy
    return out


def ssim_loops(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    """Straight-line SSIM with an explicit 2-D Gaussian window (valid region)."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 3:
        return float(np.mean([ssim_loops(a[i], b[i], window, sigma, k1, k2, L) for i in range(a.shape[0])]))
    half = (window - 1) / 2
    g = np.array([[math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma)) for j in range(window)] for i in range(window)])
    g /= g.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - window + 1):
        for x in range(w - window + 1):
            pa = a[y : y + window, x : x + window]
            pb = b[y : y + window, x : x + window]
            ma = (g * pa).sum()
            mb = (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def angle_loop(p, g):
    out = []
    for i in range(p.shape[1]):
        dot = sum(float(p[k, i]) * float(g[k, i]) for k in range(3))
        out.append(math.degrees(math.acos(max(-1.0, min(1.0, dot)))))
    return out


def adam_scalar(grad_fn, p, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        traj.append(p)
    return traj
