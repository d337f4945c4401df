"""Layer building blocks on top of the autograd engine.

A Module tracks its parameters and persistent buffers by attribute
assignment; traversal order is insertion order, which keeps checkpoints and
optimizer state deterministic.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            self._children[name] = list(value)
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = dict()
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            if isinstance(child, list):
                for i, c in enumerate(child):
                    out.update(c.named_params(f"{prefix}{name}.{i}."))
            else:
                out.update(child.named_params(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = dict()
        for name, b in self._buffers.items():
            out[prefix + name] = b
        for name, child in self._children.items():
            if isinstance(child, list):
                for i, c in enumerate(child):
                    out.update(c.named_buffers(f"{prefix}{name}.{i}."))
            else:
                out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def set_buffer(self, name: str, value: np.ndarray):
        """Assign a (possibly nested) buffer in place by its qualified name."""
        parts = name.split(".")
        cur = self
        for part in parts[:-1]:
            if isinstance(cur, list):
                cur = cur[int(part)]
            else:
                nxt = cur._children.get(part)
                if nxt is None:
                    raise KeyError(name)
                cur = nxt
        if isinstance(cur, list) or parts[-1] not in cur._buffers:
            raise KeyError(name)
        cur._buffers[parts[-1]][...] = value

    def zero_grads(self):
        for p in self.named_params().values():
            p.zero_grad()

    def modules(self):
        yield self
        for child in self._children.values():
            if isinstance(child, list):
                for c in child:
                    yield from c.modules()
            else:
                yield from child.modules()


class Conv2d(Module):
    """Grouped convolution without bias (a BatchNorm always follows)."""

    def __init__(self, c_in, c_out, k, rng, stride=1, pad=None, groups=1):
        super().__init__()
        from .errors import ConfigurationError

        if c_in % groups or c_out % groups:
            raise ConfigurationError(
                f"groups={groups} must divide channels {c_in}->{c_out}")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride = stride
        self.pad = (k // 2) if pad is None else pad
        self.groups = groups
        fan_in = (c_in // groups) * k * k
        self.weight = Tensor(rng.normal(0, np.sqrt(2.0 / fan_in),
                                        (c_out, c_in // groups, k, k)).astype(np.float32),
                             requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ag.conv2d_grouped(x, self.weight, groups=self.groups,
                                 stride=self.stride, pad=self.pad)

    def out_hw(self, h, w):
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        return ho, wo

    def macs(self, h, w) -> int:
        ho, wo = self.out_hw(h, w)
        return self.c_out * (self.c_in // self.groups) * self.k * self.k * ho * wo


class BatchNorm(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.scale = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.offset = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.state = BatchNormState(channels)
        self.register_buffer("running_mean", self.state.running_mean)
        self.register_buffer("running_var", self.state.running_var)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return ag.batchnorm(x, self.scale, self.offset, self.state, training)


class Linear(Module):
    def __init__(self, c_in, c_out, rng, zero_init=False):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        if zero_init:
            w = np.zeros((c_in, c_out), dtype=np.float32)
        else:
            w = rng.normal(0, np.sqrt(1.0 / c_in), (c_in, c_out)).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ag.affine(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.c_in * self.c_out


def channel_gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Reorder axis 1 of an N×C×H×W tensor by a fixed index map."""
    n, c, h, w = x.shape
    flat = ag.reshape(x, (n, c, h * w))
    return ag.reshape(ag.gather_rows(flat, index), (n, c, h, w))
