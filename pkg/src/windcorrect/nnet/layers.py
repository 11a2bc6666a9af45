"""Layer kernels with hand-written backward passes.

Tensors are channels-last: ``(batch, features)`` or ``(batch, steps, channels)``.
Each layer exposes ``forward(x, p, s, training, rng) -> (y, cache, new_state)``
and ``backward(dy, cache, p) -> (dx, grads)`` where ``p`` and ``s`` map
parameter / state names to arrays.
"""

from __future__ import annotations

import numpy as np

from ..errors import SpecError


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(dy, z, y, kind):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    return dy


class Layer:
    kind = ""
    params: dict[str, tuple[int, ...]] = {}
    states: dict[str, tuple[int, ...]] = {}

    def __init__(self, spec, in_shape):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        self.params = {}
        self.states = {}
        self.out_shape = self.build(self.in_shape)

    def build(self, in_shape):
        return in_shape

    def init(self, rng) -> dict[str, np.ndarray]:
        return {}

    def init_state(self) -> dict[str, np.ndarray]:
        return {}


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    kind = "dense"

    def build(self, in_shape):
        if self.spec.units is None or self.spec.units < 1:
            raise SpecError("dense layer needs units >= 1")
        n_in = in_shape[-1]
        self.params = {"kernel": (n_in, self.spec.units), "bias": (self.spec.units,)}
        return in_shape[:-1] + (self.spec.units,)

    def init(self, rng):
        n_in, n_out = self.params["kernel"]
        return {"kernel": _glorot(rng, (n_in, n_out), n_in, n_out), "bias": np.zeros(n_out)}

    def forward(self, x, p, s, training, rng):
        z = x @ p["kernel"] + p["bias"]
        y = _activate(z, self.spec.activation)
        return y, (x, z, y), None

    def backward(self, dy, cache, p):
        x, z, y = cache
        dz = _activate_grad(dy, z, y, self.spec.activation)
        n_in, n_out = p["kernel"].shape
        grads = {
            "kernel": x.reshape(-1, n_in).T @ dz.reshape(-1, n_out),
            "bias": dz.reshape(-1, n_out).sum(axis=0),
        }
        return dz @ p["kernel"].T, grads


class Conv1D(Layer):
    """Valid-padding strided 1-D convolution over the steps axis."""

    kind = "conv1d"

    def build(self, in_shape):
        if len(in_shape) != 2:
            raise SpecError(f"conv1d needs (steps, channels) input, got {in_shape}")
        sp = self.spec
        if not sp.units or not sp.kernel_width or not sp.stride:
            raise SpecError("conv1d needs filters, kernel_width and stride")
        steps, c_in = in_shape
        out_len = (steps - sp.kernel_width) // sp.stride + 1
        if out_len < 1:
            raise SpecError(f"conv1d kernel width {sp.kernel_width} exceeds input length {steps}")
        self.params = {"kernel": (sp.kernel_width, c_in, sp.units), "bias": (sp.units,)}
        return (out_len, sp.units)

    def init(self, rng):
        w, c_in, c_out = self.params["kernel"]
        return {"kernel": _glorot(rng, (w, c_in, c_out), w * c_in, w * c_out), "bias": np.zeros(c_out)}

    def _windows(self, x):
        w, stride = self.spec.kernel_width, self.spec.stride
        out_len = self.out_shape[0]
        view = np.lib.stride_tricks.sliding_window_view(x, w, axis=1)  # (n, L-w+1, c, w)
        return view[:, : (out_len - 1) * stride + 1 : stride].transpose(0, 1, 3, 2)  # (n, out, w, c)

    def forward(self, x, p, s, training, rng):
        cols = self._windows(x)
        n, out_len, w, c_in = cols.shape
        flat = cols.reshape(n * out_len, w * c_in)
        z = (flat @ p["kernel"].reshape(w * c_in, -1)).reshape(n, out_len, -1) + p["bias"]
        y = _activate(z, self.spec.activation)
        return y, (x.shape, flat, z, y), None

    def backward(self, dy, cache, p):
        x_shape, flat, z, y = cache
        dz = _activate_grad(dy, z, y, self.spec.activation)
        w, c_in, c_out = p["kernel"].shape
        n, out_len = dz.shape[:2]
        dz2 = dz.reshape(n * out_len, c_out)
        grads = {"kernel": (flat.T @ dz2).reshape(w, c_in, c_out), "bias": dz2.sum(axis=0)}
        dcols = (dz2 @ p["kernel"].reshape(w * c_in, c_out).T).reshape(n, out_len, w, c_in)
        dx = np.zeros(x_shape)
        stride = self.spec.stride
        span = (out_len - 1) * stride + 1
        for k in range(w):
            dx[:, k : k + span : stride] += dcols[:, :, k]
        return dx, grads


class BiLSTM(Layer):
    """Bidirectional LSTM; gate order (input, forget, cell, output).

    Returns the concatenated final hidden states ``(n, 2H)`` or, with
    ``return_sequences``, the per-step concatenation ``(n, steps, 2H)``.
    """

    kind = "bilstm"

    def build(self, in_shape):
        if len(in_shape) != 2:
            raise SpecError(f"bilstm needs (steps, channels) input, got {in_shape}")
        h = self.spec.units
        if not h:
            raise SpecError("bilstm needs units >= 1")
        d = in_shape[1]
        for side in ("fwd", "bwd"):
            self.params[f"{side}_kernel"] = (d, 4 * h)
            self.params[f"{side}_recurrent"] = (h, 4 * h)
            self.params[f"{side}_bias"] = (4 * h,)
        if self.spec.return_sequences:
            return (in_shape[0], 2 * h)
        return (2 * h,)

    def init(self, rng):
        h = self.spec.units
        d = self.in_shape[1]
        out = {}
        for side in ("fwd", "bwd"):
            out[f"{side}_kernel"] = _glorot(rng, (d, 4 * h), d, 4 * h)
            lim = 1.0 / np.sqrt(h)
            out[f"{side}_recurrent"] = rng.uniform(-lim, lim, size=(h, 4 * h))
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0
            out[f"{side}_bias"] = b
        return out

    def _run(self, x, wx, wh, b):
        n, steps, _ = x.shape
        h_dim = wh.shape[0]
        zx = x @ wx + b
        hs = np.zeros((n, steps + 1, h_dim))
        cs = np.zeros((n, steps + 1, h_dim))
        gates = np.empty((n, steps, 4 * h_dim))
        for t in range(steps):
            z = zx[:, t] + hs[:, t] @ wh
            g = np.empty_like(z)
            g[:, : 2 * h_dim] = _sigmoid(z[:, : 2 * h_dim])
            g[:, 2 * h_dim : 3 * h_dim] = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
            g[:, 3 * h_dim :] = _sigmoid(z[:, 3 * h_dim :])
            gates[:, t] = g
            cs[:, t + 1] = g[:, h_dim : 2 * h_dim] * cs[:, t] + g[:, :h_dim] * g[:, 2 * h_dim : 3 * h_dim]
            hs[:, t + 1] = g[:, 3 * h_dim :] * np.tanh(cs[:, t + 1])
        return hs, cs, gates

    def _bptt(self, dh_seq, x, hs, cs, gates, wx, wh):
        n, steps, d = x.shape
        h_dim = wh.shape[0]
        dz_all = np.empty((n, steps, 4 * h_dim))
        dwh = np.zeros_like(wh)
        dh_next = np.zeros((n, h_dim))
        dc_next = np.zeros((n, h_dim))
        for t in range(steps - 1, -1, -1):
            g = gates[:, t]
            i, f = g[:, :h_dim], g[:, h_dim : 2 * h_dim]
            c_hat, o = g[:, 2 * h_dim : 3 * h_dim], g[:, 3 * h_dim :]
            dh = dh_seq[:, t] + dh_next
            tc = np.tanh(cs[:, t + 1])
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :h_dim] = dc * c_hat * i * (1.0 - i)
            dz[:, h_dim : 2 * h_dim] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * h_dim : 3 * h_dim] = dc * i * (1.0 - c_hat * c_hat)
            dz[:, 3 * h_dim :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dwh += hs[:, t].T @ dz
            dh_next = dz @ wh.T
        flat = dz_all.reshape(n * steps, 4 * h_dim)
        dwx = x.reshape(n * steps, d).T @ flat
        db = flat.sum(axis=0)
        dx = dz_all @ wx.T
        return dx, dwx, dwh, db

    def forward(self, x, p, s, training, rng):
        xr = x[:, ::-1]
        f = self._run(x, p["fwd_kernel"], p["fwd_recurrent"], p["fwd_bias"])
        b = self._run(xr, p["bwd_kernel"], p["bwd_recurrent"], p["bwd_bias"])
        if self.spec.return_sequences:
            y = np.concatenate([f[0][:, 1:], b[0][:, 1:][:, ::-1]], axis=-1)
        else:
            y = np.concatenate([f[0][:, -1], b[0][:, -1]], axis=-1)
        return y, (x, xr, f, b), None

    def backward(self, dy, cache, p):
        x, xr, f, b = cache
        n, steps, _ = x.shape
        h = self.spec.units
        if self.spec.return_sequences:
            dh_f = dy[..., :h]
            dh_b = dy[..., h:][:, ::-1]
        else:
            dh_f = np.zeros((n, steps, h))
            dh_b = np.zeros((n, steps, h))
            dh_f[:, -1] = dy[:, :h]
            dh_b[:, -1] = dy[:, h:]
        dxf, *gf = self._bptt(dh_f, x, *f, p["fwd_kernel"], p["fwd_recurrent"])
        dxb, *gb = self._bptt(dh_b, xr, *b, p["bwd_kernel"], p["bwd_recurrent"])
        grads = {}
        for side, g in (("fwd", gf), ("bwd", gb)):
            grads[f"{side}_kernel"], grads[f"{side}_recurrent"], grads[f"{side}_bias"] = g
        return dxf + dxb[:, ::-1], grads


class BatchNorm(Layer):
    """Normalises each channel (last axis) over every other axis."""

    kind = "batchnorm"

    def build(self, in_shape):
        c = in_shape[-1]
        self.params = {"gamma": (c,), "beta": (c,)}
        self.states = {"moving_mean": (c,), "moving_var": (c,)}
        return in_shape

    def init(self, rng):
        c = self.in_shape[-1]
        return {"gamma": np.ones(c), "beta": np.zeros(c)}

    def init_state(self):
        c = self.in_shape[-1]
        return {"moving_mean": np.zeros(c), "moving_var": np.ones(c)}

    def forward(self, x, p, s, training, rng):
        eps, mom = self.spec.epsilon, self.spec.momentum
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            new_state = {
                "moving_mean": mom * s["moving_mean"] + (1.0 - mom) * mean,
                "moving_var": mom * s["moving_var"] + (1.0 - mom) * var,
            }
        else:
            mean, var, new_state = s["moving_mean"], s["moving_var"], None
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        return p["gamma"] * xhat + p["beta"], (xhat, inv_std, training), new_state

    def backward(self, dy, cache, p):
        xhat, inv_std, training = cache
        axes = tuple(range(dy.ndim - 1))
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * p["gamma"]
        if not training:
            return dxhat * inv_std, grads
        m = dy.size // dy.shape[-1]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    kind = "dropout"

    def build(self, in_shape):
        if not 0.0 <= self.spec.rate < 1.0:
            raise SpecError("dropout rate must lie in [0, 1)")
        return in_shape

    def forward(self, x, p, s, training, rng):
        rate = self.spec.rate
        if not training or rate == 0.0:
            return x, None, None
        if rng is None:
            raise SpecError("dropout in training mode needs an rng")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * mask, mask, None

    def backward(self, dy, cache, p):
        return (dy if cache is None else dy * cache), {}


class Activation(Layer):
    kind = "activation"

    def build(self, in_shape):
        if self.spec.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.spec.activation!r}")
        return in_shape

    def forward(self, x, p, s, training, rng):
        y = _activate(x, self.spec.activation)
        return y, (x, y), None

    def backward(self, dy, cache, p):
        x, y = cache
        return _activate_grad(dy, x, y, self.spec.activation), {}


class Flatten(Layer):
    kind = "flatten"

    def build(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, p, s, training, rng):
        return x.reshape(x.shape[0], -1), x.shape, None

    def backward(self, dy, cache, p):
        return dy.reshape(cache), {}


ACTIVATIONS = ("relu", "linear", "tanh")
LAYERS = {cls.kind: cls for cls in (Dense, Conv1D, BiLSTM, BatchNorm, Dropout, Activation, Flatten)}
