"""Slow, loop-based reference implementations used as test oracles.

Nothing here calls into the package's vectorised kernels.
"""

import math

import numpy as np


def naive_layer_norm(x, gamma, beta, eps):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [gamma[i] * (x[i] - mu) / math.sqrt(var + eps) + beta[i] for i in range(len(x))]


def naive_dct2(block):
    """Orthonormal 2-D DCT-II of an ``n x n`` array, straight from the cosine sum."""
    n = block.shape[0]
    out = np.zeros((n, n))
    for k in range(n):
        for l in range(n):
            ck = math.sqrt((1 if k == 0 else 2) / n)
            cl = math.sqrt((1 if l == 0 else 2) / n)
            s = 0.0
            for i in range(n):
                for j in range(n):
                    s += block[i, j] * math.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.cos(
                        math.pi * (2 * j + 1) * l / (2 * n))
            out[k, l] = ck * cl * s
    return out


def naive_idct2(coef):
    n = coef.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                for l in range(n):
                    ck = math.sqrt((1 if k == 0 else 2) / n)
                    cl = math.sqrt((1 if l == 0 else 2) / n)
                    s += ck * cl * coef[k, l] * math.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.cos(
                        math.pi * (2 * j + 1) * l / (2 * n))
            out[i, j] = s
    return out


def naive_attention(tokens, positions, allowed, wqkv, bqkv, wproj, bproj, table, heads, window):
    """Direct softmax(q.k / sqrt(d) + bias) v per head, restricted to ``allowed[i][j]`` pairs.

    ``positions`` are 2-D coordinates used for the relative-position bias lookup.
    """
    t, c = tokens.shape
    d = c // heads
    qkv = tokens @ wqkv + bqkv
    out = np.zeros((t, c))
    for h in range(heads):
        for i in range(t):
            q = qkv[i, h * d:(h + 1) * d]
            logits = {}
            for j in range(t):
                if not allowed[i][j]:
                    continue
                k = qkv[j, c + h * d:c + (h + 1) * d]
                dy = positions[i][0] - positions[j][0] + window - 1
                dx = positions[i][1] - positions[j][1] + window - 1
                logits[j] = float(q @ k) / math.sqrt(d) + table[dy * (2 * window - 1) + dx, h]
            m = max(logits.values())
            z = sum(math.exp(v - m) for v in logits.values())
            for j, v in logits.items():
                out[i, h * d:(h + 1) * d] += math.exp(v - m) / z * qkv[j, 2 * c + h * d:2 * c + (h + 1) * d]
    return out @ wproj + bproj


def naive_gelu(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def naive_dctstl_single_window(x, p, heads, eps=1e-5):
    """One unshifted layer on a single ``Ws x Ws x C`` window (H == W == Ws).

    ``p`` maps parameter names of a layer to float64 arrays.
    """
    ws, _, c = x.shape
    ln = np.array([[naive_layer_norm(list(x[i, j]), p["norm1.gamma"], p["norm1.beta"], eps)
                    for j in range(ws)] for i in range(ws)])
    coef = np.stack([naive_dct2(ln[:, :, ch]) for ch in range(c)], axis=-1)
    tokens = coef.reshape(ws * ws, c)
    positions = [(i, j) for i in range(ws) for j in range(ws)]
    allowed = [[True] * (ws * ws) for _ in range(ws * ws)]
    att = naive_attention(tokens, positions, allowed, p["attn.qkv.weight"], p["attn.qkv.bias"],
                          p["attn.proj.weight"], p["attn.proj.bias"], p["attn.rel_bias"], heads, ws)
    back = np.stack([naive_idct2(att.reshape(ws, ws, c)[:, :, ch]) for ch in range(c)], axis=-1)
    h = x + back
    out = h.copy()
    if "fc1.weight" in p:
        for i in range(ws):
            for j in range(ws):
                z = np.array(naive_layer_norm(list(h[i, j]), p["norm2.gamma"], p["norm2.beta"], eps))
                hid = np.array([naive_gelu(v) for v in z @ p["fc1.weight"] + p["fc1.bias"]])
                out[i, j] = h[i, j] + hid @ p["fc2.weight"] + p["fc2.bias"]
    return out


def naive_ssim(x, y, size=11, sigma=1.5, data_range=255.0):
    """Sliding-window SSIM over every valid position of two 2-D float images."""
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    r = size // 2
    g = [[math.exp(-((i - r) ** 2 + (j - r) ** 2) / (2 * sigma * sigma)) for j in range(size)] for i in range(size)]
    total = sum(map(sum, g))
    g = [[v / total for v in row] for row in g]
    vals = []
    for a in range(x.shape[0] - size + 1):
        for b in range(x.shape[1] - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for i in range(size):
                for j in range(size):
                    w = g[i][j]
                    u, v = x[a + i, b + j], y[a + i, b + j]
                    mx += w * u
                    my += w * v
                    sxx += w * u * u
                    syy += w * v * v
                    sxy += w * u * v
            vx, vy, cxy = sxx - mx * mx, syy - my * my, sxy - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


def naive_psnr(x, y, peak=255.0):
    diff = [(float(a) - float(b)) ** 2 for a, b in zip(np.ravel(x), np.ravel(y))]
    mse = sum(diff) / len(diff)
    return math.inf if mse == 0 else 10 * math.log10(peak * peak / mse)


def _keys_cubic(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def naive_bicubic_downsample_1d(signal, s):
    """Antialiased bicubic decimation by ``s`` with half-sample symmetric boundaries."""
    n = len(signal)
    out = []
    for o in range(n // s):
        centre = (o + 0.5) * s - 0.5
        acc = wsum = 0.0
        for i in range(math.floor(centre - 2 * s) - 1, math.ceil(centre + 2 * s) + 2):
            w = _keys_cubic((centre - i) / s) / s
            if w == 0.0:
                continue
            j = i
            while j < 0 or j >= n:
                j = -j - 1 if j < 0 else 2 * n - 1 - j
            acc += w * signal[j]
            wsum += w
        out.append(acc / wsum)
    return out


def naive_bicubic_downsample(img, s):
    h, w, c = img.shape
    rows = np.array([[naive_bicubic_downsample_1d(img[i, :, ch], s) for ch in range(c)] for i in range(h)])
    rows = rows.transpose(0, 2, 1)  # h, w/s, c
    out = np.array([[naive_bicubic_downsample_1d(rows[:, j, ch], s) for ch in range(c)]
                    for j in range(w // s)])  # w/s, c, h/s
    return out.transpose(2, 0, 1)


def brute_window_attention(img, p, heads, window, shift):
    """Attention on an ``H x W x C`` image where pixel pairs interact only when they
    share a window of the grid offset by ``shift`` and are genuine (non-wrapped) neighbours.

    Works in original image coordinates: no roll, no mask tensor.
    """
    h, w, c = img.shape
    pix = [(i, j) for i in range(h) for j in range(w)]

    def group(i, j):
        return ((i - shift) // window, (j - shift) // window)

    allowed = [[group(*a) == group(*b) for b in pix] for a in pix]
    out = naive_attention(img.reshape(h * w, c), pix, allowed, p["qkv.weight"], p["qkv.bias"],
                          p["proj.weight"], p["proj.bias"], p["rel_bias"], heads, window)
    return out.reshape(h, w, c)
