import numpy as np
import pytest

from sglanet.tensor import Tensor


def naive_conv2d(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation with zero padding."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for b_ in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = float(b[o]) if b is not None else 0.0
                    for c in range(ci):
                        for di in range(kh):
                            for dj in range(kw):
                                r = i * stride + di - pad
                                s = j * stride + dj - pad
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += float(x[b_, c, r, s]) * float(w[o, c, di, dj])
                    out[b_, o, i, j] = acc
    return out


def away_from_zero(rng, shape, margin=0.1, scale=1.0):
    """Random values with |x| >= margin (keeps ReLU and max-pool kinks out of reach of probes)."""
    mag = rng.uniform(margin, margin + scale, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def leaf(data, dtype=np.float64):
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
