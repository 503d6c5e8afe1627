"""Trainable layer building blocks on top of the tensor engine.

Modules hold parameters (tracked Tensors) and buffers (plain numpy arrays
such as batch-norm running statistics). Attribute insertion order defines
parameter naming and therefore the RNG consumption order at construction,
so building the same module tree from the same seed reproduces weights
bit for bit.
"""

import numpy as np

from .errors import ConfigurationError, ContractError
from .tensor import (
    Tensor,
    avgpool2d,
    batchnorm2d,
    channel_max,
    channel_mean,
    concat,
    conv2d,
    global_avg_pool,
    relu,
    sigmoid,
)


class Module:
    """Base class: parameter/buffer discovery, train/eval mode, call sugar."""

    _buffers = ()

    def __init__(self):
        self.training = True

    def children(self):
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def state_arrays(self):
        """Flat name -> array mapping of all parameters and buffers."""
        out = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_arrays(self, arrays):
        """Copy values back into parameters and buffers by name."""
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(arrays)
        extra = set(arrays) - (set(own) | set(bufs))
        if missing or extra:
            raise ContractError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in own.items():
            arr = np.asarray(arrays[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ContractError(
                    f"shape mismatch for {name}: have {p.data.shape}, got {arr.shape}"
                )
            p.data = arr.copy()
        for name, b in bufs.items():
            arr = np.asarray(arrays[name], dtype=np.float32)
            if arr.shape != b.shape:
                raise ContractError(
                    f"shape mismatch for {name}: have {b.shape}, got {arr.shape}"
                )
            b[...] = arr

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    """2-D convolution layer with Kaiming fan-in normal initialization."""

    def __init__(self, rng, cin, cout, k, stride=1, padding=0, bias=True):
        super().__init__()
        fan_in = cin * k * k
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(cout * cin * k * k, std=std).reshape(cout, cin, k, k)
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = (
            Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
            if bias else None
        )
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=np.float32),
                            requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32),
                           requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, self.training, self.momentum,
                           self.eps)


class ConvBnRelu(Module):
    """3x3 (by default) conv -> batch norm -> ReLU.

    The conv carries no bias; batch norm's shift makes it redundant.
    """

    def __init__(self, rng, cin, cout, k=3, padding=1):
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, k, padding=padding, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))


class ChannelGate(Module):
    """Squeeze-and-excitation channel attention, reduction 8.

    Global average pool -> 1x1 conv to C/8 -> ReLU -> 1x1 conv back to
    C -> sigmoid -> channelwise rescale of the input.
    """

    def __init__(self, rng, channels, reduction=8):
        super().__init__()
        if channels < reduction:
            raise ConfigurationError(
                f"channel attention needs at least {reduction} channels, got {channels}"
            )
        hidden = channels // reduction
        self.squeeze = Conv2d(rng, channels, hidden, 1)
        self.excite = Conv2d(rng, hidden, channels, 1)

    def forward(self, x):
        gate = sigmoid(self.excite(relu(self.squeeze(global_avg_pool(x)))))
        return x * gate


class SpatialGate(Module):
    """Spatial attention from pooled channel statistics.

    Channel-mean and channel-max maps are concatenated, convolved with a
    single 7x7 kernel (pad 3), squashed by a sigmoid, and used as a
    per-pixel gate on the input.
    """

    def __init__(self, rng):
        super().__init__()
        self.conv = Conv2d(rng, 2, 1, 7, padding=3)

    def forward(self, x):
        stats = concat([channel_mean(x), channel_max(x)], axis=1)
        return x * sigmoid(self.conv(stats))


class FeedbackFuse(Module):
    """Fuses full-resolution decoder output back into one encoder stage.

    The decoder features are average-pooled down to the stage's
    resolution, projected to the stage width with a 1x1 conv,
    concatenated with the stage's original features, and fused by a 3x3
    conv-bn-relu back to the stage width.
    """

    def __init__(self, rng, stage, stage_width, decoder_width):
        super().__init__()
        if stage not in (2, 3, 4):
            raise ContractError(
                f"feedback fusion is defined for stages 2-4, got stage {stage}"
            )
        self.stage = stage
        self.pool_factor = 2 ** (stage - 1)
        self.project = Conv2d(rng, decoder_width, stage_width, 1)
        self.fuse = ConvBnRelu(rng, 2 * stage_width, stage_width)

    def forward(self, stage_features, decoder_features):
        pooled = avgpool2d(decoder_features, self.pool_factor)
        projected = self.project(pooled)
        return self.fuse(concat([stage_features, projected], axis=1))
