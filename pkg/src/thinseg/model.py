"""Encoder-decoder segmentation network with iterative feedback.

A four-stage convolutional encoder (anti-aliased first reduction, max
pooling afterwards) feeds a three-stage bilinear-upsampling decoder
through attention-gated skips. The full-resolution decoder features are
fused back into encoder stages 2-4 and the decode repeats, producing one
set of logits per pass; all passes share weights and batch-norm state.

Stage 1 features are computed once per input: feedback touches only
stages 2-4, each fused from the ORIGINAL stage features and the previous
pass's decoder output (stages do not chain through fused features).
"""

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, SizingError
from .layers import (
    BatchNorm2d,
    ChannelGate,
    Conv2d,
    ConvBnRelu,
    FeedbackFuse,
    Module,
    SpatialGate,
)
from .tensor import Tensor, blurpool2d, concat, maxpool2d, softmax_channel, upsample_bilinear2x

SKIP_MODES = ("default", "none", "sa_all")


@dataclass
class ModelConfig:
    num_classes: int = 7
    base_width: int = 48
    T: int = 3
    use_luma_channels: bool = True
    skip_attention_mode: str = "default"
    use_ifm: bool = True

    def __post_init__(self):
        if self.T < 0:
            raise ConfigurationError(f"T must be >= 0, got {self.T}")
        if self.base_width < 8:
            raise ConfigurationError(
                f"base_width must be >= 8, got {self.base_width}"
            )
        if self.num_classes < 2:
            raise ConfigurationError(
                f"num_classes must be >= 2, got {self.num_classes}"
            )
        if self.skip_attention_mode not in SKIP_MODES:
            raise ConfigurationError(
                f"skip_attention_mode must be one of {SKIP_MODES}, "
                f"got {self.skip_attention_mode!r}"
            )

    @property
    def in_channels(self):
        return 5 if self.use_luma_channels else 3

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "base_width": self.base_width,
            "T": self.T,
            "use_luma_channels": self.use_luma_channels,
            "skip_attention_mode": self.skip_attention_mode,
            "use_ifm": self.use_ifm,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EncoderFeatures:
    e1: Tensor
    e2: Tensor
    e3: Tensor
    e4: Tensor


@dataclass
class GatedSkips:
    s1: Tensor
    s2: Tensor
    s3: Tensor


@dataclass
class IterationOutputs:
    """Logits and probabilities for every pass plus the final label map."""

    logits: list = field(default_factory=list)
    probs: list = field(default_factory=list)
    prediction: np.ndarray = None  # int64 (N, H, W), argmax of probs[-1]


def iteration_weights(T, w=0.1):
    """Per-pass supervision weights w*(t+1) for t = 0..T.

    Each weight is rounded once from the exact product of (t+1) and the
    decimal value of w, so a decimal step like w=0.1 yields the exact
    ladder [0.1, 0.2, 0.3, ...] instead of accumulating binary round-off
    (plain float arithmetic gives 0.1*3 == 0.30000000000000004).
    """
    if T < 0 or w <= 0:
        raise ConfigurationError(f"need T >= 0 and w > 0, got T={T}, w={w}")
    step = Decimal(repr(float(w)))
    return [float(step * (t + 1)) for t in range(T + 1)]


class FeedbackUNet(Module):
    """The full network; construct with a ModelConfig and an Rng for init."""

    def __init__(self, config: ModelConfig, rng):
        super().__init__()
        self.config = config
        b = config.base_width
        cin = config.in_channels

        self.enc1 = [ConvBnRelu(rng, cin, b), ConvBnRelu(rng, b, b)]
        self.enc2 = [ConvBnRelu(rng, b, 2 * b), ConvBnRelu(rng, 2 * b, 2 * b)]
        self.enc3 = [ConvBnRelu(rng, 2 * b, 4 * b), ConvBnRelu(rng, 4 * b, 4 * b)]
        self.enc4 = [ConvBnRelu(rng, 4 * b, 8 * b), ConvBnRelu(rng, 8 * b, 8 * b)]
        self.context = ConvBnRelu(rng, 8 * b, 8 * b)

        if config.skip_attention_mode != "none":
            self.ca1 = ChannelGate(rng, b)
            self.ca2 = ChannelGate(rng, 2 * b)
            self.ca3 = ChannelGate(rng, 4 * b)
            self.sa2 = SpatialGate(rng)
            self.sa3 = SpatialGate(rng)
            if config.skip_attention_mode == "sa_all":
                self.sa1 = SpatialGate(rng)

        self.ff2 = FeedbackFuse(rng, 2, 2 * b, b)
        self.ff3 = FeedbackFuse(rng, 3, 4 * b, b)
        self.ff4 = FeedbackFuse(rng, 4, 8 * b, b)

        self.dec3 = [ConvBnRelu(rng, 8 * b + 4 * b, 4 * b),
                     ConvBnRelu(rng, 4 * b, 4 * b)]
        self.dec2 = [ConvBnRelu(rng, 4 * b + 2 * b, 2 * b),
                     ConvBnRelu(rng, 2 * b, 2 * b)]
        self.dec1 = [ConvBnRelu(rng, 2 * b + b, b), ConvBnRelu(rng, b, b)]
        self.head = Conv2d(rng, b, config.num_classes, 1)

    # ------------------------------------------------------------------

    def encoder_forward(self, x: Tensor, feedback=None) -> EncoderFeatures:
        """Run the conv stack; a complete {2,3,4} feedback dict replaces
        those stage outputs (their convolutions are then skipped)."""
        if x.data.ndim != 4 or x.data.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"expected (N,{self.config.in_channels},H,W) input, "
                f"got shape {x.data.shape}"
            )
        h, w = x.data.shape[2], x.data.shape[3]
        if h % 8 or w % 8:
            raise SizingError(
                f"input extents {h}x{w} must each be a multiple of 8"
            )
        if feedback is not None and set(feedback) != {2, 3, 4}:
            raise ContractError(
                f"feedback must cover stages 2, 3 and 4; got {sorted(feedback)}"
            )
        e1 = self.enc1[1](self.enc1[0](x))
        if feedback is not None:
            return EncoderFeatures(e1, feedback[2], feedback[3], feedback[4])
        e2 = self.enc2[1](self.enc2[0](blurpool2d(e1)))
        e3 = self.enc3[1](self.enc3[0](maxpool2d(e2)))
        e4 = self.enc4[1](self.enc4[0](maxpool2d(e3)))
        return EncoderFeatures(e1, e2, e3, e4)

    def _gate1(self, e1):
        mode = self.config.skip_attention_mode
        if mode == "none":
            return e1
        if mode == "sa_all":
            return self.sa1(self.ca1(e1)) + e1
        return self.ca1(e1)

    def _gate23(self, e):
        if self.config.skip_attention_mode == "none":
            return e.e2, e.e3
        s2 = self.sa2(self.ca2(e.e2)) + e.e2
        s3 = self.sa3(self.ca3(e.e3)) + e.e3
        return s2, s3

    def gate_skips(self, e: EncoderFeatures) -> GatedSkips:
        s2, s3 = self._gate23(e)
        return GatedSkips(self._gate1(e.e1), s2, s3)

    def decoder_forward(self, e4_ctx, s3, s2, s1):
        x = e4_ctx
        for skip, stage in ((s3, self.dec3), (s2, self.dec2), (s1, self.dec1)):
            up = upsample_bilinear2x(x)
            if up.data.shape[2:] != skip.data.shape[2:]:
                raise DimensionError(
                    f"decoder pyramid mismatch: upsampled {up.data.shape} "
                    f"vs skip {skip.data.shape}"
                )
            x = stage[1](stage[0](concat([up, skip], axis=1)))
        return x

    def forward(self, x: Tensor) -> IterationOutputs:
        e0 = self.encoder_forward(x)
        s1 = self._gate1(e0.e1)
        s2, s3 = self._gate23(e0)
        passes = (self.config.T if self.config.use_ifm else 0) + 1
        logits = []
        d1 = None
        for t in range(passes):
            if t > 0:
                e = EncoderFeatures(
                    e0.e1,
                    self.ff2(e0.e2, d1),
                    self.ff3(e0.e3, d1),
                    self.ff4(e0.e4, d1),
                )
                s2, s3 = self._gate23(e)
            else:
                e = e0
            d1 = self.decoder_forward(self.context(e.e4), s3, s2, s1)
            logits.append(self.head(d1))
        probs = [softmax_channel(z) for z in logits]
        prediction = probs[-1].data.argmax(axis=1)
        return IterationOutputs(logits, probs, prediction)
