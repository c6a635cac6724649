"""Minimal CNN building blocks with explicit forward/backward passes.

Everything runs on plain numpy arrays in NHWC layout. Each layer implements
``forward`` and ``backward`` and exposes its parameters and gradients as
parallel lists of arrays, so an optimizer can update them in place. The
default dtype is float32; pass ``dtype=np.float64`` when building a network
that will be put through a finite-difference gradient check.

Convolutions gather their input windows into a cached column buffer (one
strided copy per kernel tap) and then run as a single GEMM per direction;
workspace buffers are reused across steps, which is what makes repeated
small-batch training steps cheap enough on a CPU.
"""

from __future__ import annotations

import numpy as np


class Layer:
    """Base layer: stateless by default, no parameters."""

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding (same output size).

    Input windows are gathered into a cached column buffer and the whole
    layer reduces to one GEMM per direction. ``need_input_grad=False`` skips
    the input-gradient scatter in backward, which is worthwhile for the
    first layer of a network.
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 dtype=np.float32, need_input_grad: bool = True):
        std = np.sqrt(2.0 / (9 * cin))
        self.W = rng.normal(0.0, std, size=(3, 3, cin, cout)).astype(dtype)
        self.b = np.full(cout, 0.01, dtype=dtype)  # see Dense: avoid dead ReLUs
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.need_input_grad = need_input_grad
        self._ws: dict = {}  # workspace buffers keyed by (name, shape)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def _buf(self, name: str, shape: tuple) -> np.ndarray:
        key = (name, shape)
        buf = self._ws.get(key)
        if buf is None:
            buf = np.empty(shape, dtype=self.W.dtype)
            self._ws[key] = buf
        return buf

    def forward(self, x, train=False):
        b, h, w, cin = x.shape
        if cin != self.W.shape[2]:
            raise ValueError(f"expected {self.W.shape[2]} input channels, got {cin}")
        cout = self.W.shape[3]
        xp = self._buf("xp", (b, h + 2, w + 2, cin))
        xp[:] = 0
        xp[:, 1:-1, 1:-1, :] = x
        cols = self._buf("cols", (b, h, w, 9, cin))
        for i in range(3):
            for j in range(3):
                cols[:, :, :, 3 * i + j, :] = xp[:, i:i + h, j:j + w, :]
        out = cols.reshape(-1, 9 * cin) @ self.W.reshape(9 * cin, cout)
        out += self.b
        if train:
            self._cols = cols
            self._in_shape = x.shape
        return out.reshape(b, h, w, cout)

    def backward(self, dout):
        b, h, w, cin = self._in_shape
        cout = self.W.shape[3]
        df = dout.reshape(-1, cout)
        self.db[:] = df.sum(axis=0)
        cols_flat = self._cols.reshape(-1, 9 * cin)
        self.dW[:] = (cols_flat.T @ df).reshape(3, 3, cin, cout)
        if not self.need_input_grad:
            return None
        dcols = (df @ self.W.reshape(9 * cin, cout).T).reshape(b, h, w, 9, cin)
        dxp = self._buf("dxp", (b, h + 2, w + 2, cin))
        dxp[:] = 0
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, 3 * i + j, :]
        return dxp[:, 1:-1, 1:-1, :]


class ReLU(Layer):
    def forward(self, x, train=False):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, dout):
        return dout * self._mask


class MaxPool2(Layer):
    """2x2 max pooling with stride 2. Requires even spatial dimensions.

    Ties are routed to the first maximum in window scan order (top-left,
    top-right, bottom-left, bottom-right), so backward is deterministic and
    each output routes to exactly one input.
    """

    def forward(self, x, train=False):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"MaxPool2 needs even spatial dims, got {h}x{w}")
        q = (x[:, 0::2, 0::2, :], x[:, 0::2, 1::2, :],
             x[:, 1::2, 0::2, :], x[:, 1::2, 1::2, :])
        out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        if train:
            self._x = x
            self._out = out
        return out

    def backward(self, dout):
        x = self._x
        out = self._out
        dx = np.zeros_like(x)
        taken = np.zeros(out.shape, dtype=bool)
        for qi, (si, sj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            quad = x[:, si::2, sj::2, :]
            route = (quad == out) & ~taken
            dx[:, si::2, sj::2, :] = dout * route
            taken |= route
        return dx


class GlobalAvgPool(Layer):
    """Average over the two spatial axes: (B,H,W,C) -> (B,C)."""

    def forward(self, x, train=False):
        if train:
            self._in_shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        b, h, w, c = self._in_shape
        scale = dout.dtype.type(1.0 / (h * w))
        return np.broadcast_to(dout[:, None, None, :] * scale, (b, h, w, c)).copy()


class Flatten(Layer):
    def forward(self, x, train=False):
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._in_shape)


class Dense(Layer):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator,
                 dtype=np.float32, init: str = "he"):
        if init == "he":
            std = np.sqrt(2.0 / nin)
            bias = 0.01  # keep ReLU units alive at the start
        else:  # final linear readout
            std = np.sqrt(1.0 / nin)
            bias = 0.0
        self.W = rng.normal(0.0, std, size=(nin, nout)).astype(dtype)
        self.b = np.full(nout, bias, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.W + self.b

    def backward(self, dout):
        self.dW[:] = self._x.T @ dout
        self.db[:] = dout.sum(axis=0)
        return dout @ self.W.T


class ActivityL2(Layer):
    """Pass-through layer that penalizes the L2 norm of its input activations.

    The penalty is the per-sample sum of squared activations averaged over
    the batch, scaled by ``lam``; it is accumulated during a training-mode
    forward pass and injected into the gradient on the way back.
    """

    def __init__(self, lam: float):
        self.lam = float(lam)
        self.last_penalty = 0.0

    def forward(self, x, train=False):
        if train:
            self._x = x
            self._batch = x.shape[0]
            self.last_penalty = float(self.lam * (x * x).sum() / self._batch)
        return x

    def backward(self, dout):
        if self.lam == 0.0:
            return dout
        return dout + (2.0 * self.lam / self._batch) * self._x


class Sequential:
    """A plain stack of layers with an extra hook for activity penalties."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout: np.ndarray) -> None:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
            if dout is None:
                break

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def activity_penalty(self) -> float:
        """Sum of activity penalties recorded on the last training forward."""
        return sum(l.last_penalty for l in self.layers if isinstance(l, ActivityL2))


def num_params(net: Sequential) -> int:
    return sum(p.size for p in net.params())
