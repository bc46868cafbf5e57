"""Stateful layers: forward caches what backward needs."""

from __future__ import annotations

import numpy as np

from . import ops


class Module:
    """Holds named parameters/gradients and child modules."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, input_grad: bool = True):
        """Accumulate parameter gradients; return dL/dx, or None if not input_grad."""
        raise NotImplementedError

    def has_params(self) -> bool:
        return bool(self.params) or any(c.has_params() for c in self.children.values())

    def __call__(self, x):
        return self.forward(x)

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, child in self.children.items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_gradients(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: self.grads[k] for k in self.params}
        for name, child in self.children.items():
            out.update(child.named_gradients(f"{prefix}{name}."))
        return out

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)
        for child in self.children.values():
            child.zero_grad()


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2D(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.kernel = kernel
        shape = (out_ch, in_ch, kernel, kernel)
        if rng is None:
            self.params["w"] = np.zeros(shape)
        else:
            self.params["w"] = he_normal(rng, shape, in_ch * kernel * kernel)
        self.params["b"] = np.zeros(out_ch)
        self.zero_grad()
        self._x = None

    @property
    def out_channels(self) -> int:
        return self.params["w"].shape[0]

    def forward(self, x):
        self._x = x
        return ops.conv2d(x, self.params["w"], self.params["b"])

    def backward(self, dy, input_grad: bool = True):
        dx, dw, db = ops.conv2d_backward(dy, self._x, self.params["w"], need_dx=input_grad)
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            self.params["w"] = np.zeros((n_out, n_in))
        else:
            self.params["w"] = he_normal(rng, (n_out, n_in), n_in)
        self.params["b"] = np.zeros(n_out)
        self.zero_grad()
        self._x = None

    def forward(self, x):
        self._x = x
        return ops.dense(x, self.params["w"], self.params["b"])

    def backward(self, dy, input_grad: bool = True):
        dx, dw, db = ops.dense_backward(dy, self._x, self.params["w"])
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx if input_grad else None


class MaxPool2D(Module):
    def __init__(self, size: int = 3):
        super().__init__()
        self.size = size
        self._x = self._y = None

    def forward(self, x):
        self._x = x
        self._y = ops.maxpool2d_max(x, self.size)
        return self._y

    def backward(self, dy, input_grad: bool = True):
        if not input_grad:
            return None
        arg = ops.maxpool2d_argmax(self._x, self._y, self.size)
        return ops.maxpool2d_backward(dy, arg, self.size)


class ReLU(Module):
    def forward(self, x):
        self._x = x
        return ops.relu(x)

    def backward(self, dy, input_grad: bool = True):
        return ops.relu_backward(dy, self._x) if input_grad else None


class Sigmoid(Module):
    def forward(self, x):
        self._y = ops.sigmoid(x)
        return self._y

    def backward(self, dy, input_grad: bool = True):
        return ops.sigmoid_backward(dy, self._y) if input_grad else None


class Flatten(Module):
    def forward(self, x):
        self._shape = x.shape
        return ops.flatten(x)

    def backward(self, dy, input_grad: bool = True):
        return dy.reshape(self._shape) if input_grad else None


class Sequential(Module):
    def __init__(self, *layers: tuple[str, Module]):
        super().__init__()
        for name, layer in layers:
            self.children[name] = layer

    def forward(self, x):
        for layer in self.children.values():
            x = layer.forward(x)
        return x

    def backward(self, dy, input_grad: bool = True):
        layers = list(self.children.values())
        for k in range(len(layers) - 1, -1, -1):
            # stop propagating once nothing upstream needs it
            need = input_grad or any(l.has_params() for l in layers[:k])
            if not need and not layers[k].has_params():
                return None
            dy = layers[k].backward(dy, input_grad=need)
        return dy


class Parallel(Module):
    """Feeds one input to every branch and concatenates outputs on the channel axis."""

    def __init__(self, *branches: tuple[str, Module]):
        super().__init__()
        for name, branch in branches:
            self.children[name] = branch
        self._sizes = None

    def forward(self, x):
        outs = [b.forward(x) for b in self.children.values()]
        self._sizes = [o.shape[1] for o in outs]
        return ops.concat(outs, axis=1)

    def backward(self, dy, input_grad: bool = True):
        pieces = ops.split(dy, self._sizes, axis=1)
        dx = None
        for branch, piece in zip(self.children.values(), pieces):
            g = branch.backward(piece, input_grad=input_grad)
            if input_grad:
                dx = g if dx is None else dx + g
        return dx
