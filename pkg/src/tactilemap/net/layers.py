"""Channels-last layers for a single (rows, cols, channels) feature map.

Each layer keeps what its backward pass needs from the most recent forward
call; gradients for parameters land in ``grads`` keyed like ``params``.
"""

import numpy as np


def im2col(x, k):
    """(H, W, C) -> (H*W, k*k*C) patches with zero 'same' padding."""
    h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    cols = np.empty((h, w, k * k, c), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy * k + dx, :] = xp[dy:dy + h, dx:dx + w, :]
    return cols.reshape(h * w, k * k * c)


def col2im(dcols, shape, k):
    """Adjoint of :func:`im2col`."""
    h, w, c = shape
    p = k // 2
    dcols = dcols.reshape(h, w, k * k, c)
    dxp = np.zeros((h + 2 * p, w + 2 * p, c), dtype=dcols.dtype)
    for dy in range(k):
        for dx in range(k):
            dxp[dy:dy + h, dx:dx + w, :] += dcols[:, :, dy * k + dx, :]
    return dxp[p:p + h, p:p + w, :]


def _pad_flat(x, p):
    """Zero-pad (H, W, C) by ``p`` and flatten rows, plus one spare row.

    In the flat layout a kernel tap at (dy, dx) is the contiguous slice
    starting at ``dy * (W + 2p) + dx``; outputs land on an (H, W + 2p) grid
    whose last ``2p`` columns are discarded.
    """
    h, w, c = x.shape
    xp = np.zeros((h + 2 * p + 1, w + 2 * p, c), dtype=x.dtype)
    xp[p:p + h, p:p + w] = x
    return xp.reshape(-1, c)


class Conv2D:
    """'same' convolution computed as k*k shifted matmuls on a flat buffer."""

    def __init__(self, c_in, c_out, k=3, rng=None, dtype=np.float32):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = np.random.default_rng(rng)
        std = np.sqrt(2.0 / (k * k * c_in))
        self.k = k
        self.params = {
            "weight": (rng.standard_normal((k, k, c_in, c_out)) * std).astype(dtype),
            "bias": np.zeros(c_out, dtype=dtype),
        }
        self.grads = {name: np.zeros_like(v) for name, v in self.params.items()}
        self._xf = None
        self._shape = None

    def _offsets(self, wp):
        k = self.k
        return [(dy, dx, dy * wp + dx) for dy in range(k) for dx in range(k)]

    def forward(self, x, train=True):
        w = self.params["weight"]
        h, wd, _ = x.shape
        p = self.k // 2
        wp = wd + 2 * p
        n = h * wp
        xf = _pad_flat(x, p)
        wt = w.astype(x.dtype, copy=False)
        out = np.empty((n, w.shape[-1]), dtype=x.dtype)
        out[...] = self.params["bias"]
        tmp = np.empty_like(out)
        for dy, dx, o in self._offsets(wp):
            np.matmul(xf[o:o + n], wt[dy, dx], out=tmp)
            out += tmp
        if train:
            self._xf, self._shape = xf, x.shape
        return out.reshape(h, wp, -1)[:, :wd]

    def backward(self, dout, need_input_grad=True):
        w = self.params["weight"]
        h, wd, c = self._shape
        p = self.k // 2
        wp = wd + 2 * p
        n = h * wp
        dp = np.zeros((h, wp, w.shape[-1]), dtype=dout.dtype)
        dp[:, :wd] = dout
        df = dp.reshape(n, -1)
        xf = self._xf
        gw = self.grads["weight"]
        for dy, dx, o in self._offsets(wp):
            gw[dy, dx] += xf[o:o + n].T @ df
        self.grads["bias"] += dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        dx_out = None
        if need_input_grad:
            dxf = np.zeros_like(xf)
            tmp = np.empty((n, c), dtype=dout.dtype)
            for dy, dx, o in self._offsets(wp):
                np.matmul(df, w[dy, dx].T, out=tmp)
                dxf[o:o + n] += tmp
            dx_out = dxf.reshape(h + 2 * p + 1, wp, c)[p:p + h, p:p + wd]
        self._xf = None
        return dx_out


class BatchNorm:
    """Per-channel normalization over all pixels of the (single) sample."""

    def __init__(self, c, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        self.grads = {name: np.zeros_like(v) for name, v in self.params.items()}
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._cache = None

    def forward(self, x, train=True):
        flat = x.reshape(-1, x.shape[-1])
        if train:
            mu = flat.mean(axis=0)
            var = flat.var(axis=0)
            n = flat.shape[0]
            m = self.momentum
            unbiased = var * n / max(n - 1, 1)
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (flat - mu) * inv
        if train:
            self._cache = (xhat, inv)
        out = xhat * self.params["gamma"] + self.params["beta"]
        return out.reshape(x.shape)

    def backward(self, dout, need_input_grad=True):
        xhat, inv = self._cache
        d = dout.reshape(-1, dout.shape[-1])
        self.grads["gamma"] += (d * xhat).sum(axis=0)
        self.grads["beta"] += d.sum(axis=0)
        dxhat = d * self.params["gamma"]
        n = d.shape[0]
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        self._cache = None
        return dx.reshape(dout.shape)


class ReLU:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._mask = None

    def forward(self, x, train=True):
        mask = x > 0
        if train:
            self._mask = mask
        return x * mask

    def backward(self, dout, need_input_grad=True):
        dx = dout * self._mask
        self._mask = None
        return dx
