"""Network definitions: coded-layer generator, patch discriminator, cascade features.

The generator is an encoder-decoder with skip copies. Stride-2 stages halve
the input until the code is 1x1, a residual block produces the code
pre-activation, and the one-hot condition enters additively at that point,
after the parallel-classification tap, so classification gradients cannot
reach the condition path.
"""

from __future__ import annotations

import hashlib
import math
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError

LEAKY_SLOPE = 0.2


def _check_power_of_two(size: int) -> int:
    if size < 16 or (size & (size - 1)) != 0:
        raise ValueError(f"image size must be a power of two >= 16, got {size}")
    return size


def channel_plan(base_width: int, depth: int) -> list[int]:
    """Doubling channel widths capped at 8x base, pix2pix style."""
    return [min(base_width * 2 ** i, base_width * 8) for i in range(depth)]


def init_weights(module: nn.Module, gain: float = 0.02) -> None:
    """Normal(0, gain) init for conv layers, N(1, gain) for norm scales."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, gain)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, gain)
            nn.init.zeros_(m.bias)


def parameter_digest(module: nn.Module) -> str:
    """Hex digest over all parameters and buffers; stable across runs."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """HxWx3 or NxHxWx3 float array in [0,1] -> (N,3,H,W) float32 tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected HxWx3 or NxHxWx3 image array, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(N,3,H,W) tensor -> NxHxWx3 float32 array (squeezed when N == 1)."""
    arr = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return arr[0] if arr.shape[0] == 1 else arr


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with an identity addition, no trailing activation.

    No normalization: the block runs at 1x1 spatial extent where batch
    statistics degenerate.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        return x + self.conv2(h)


class _DownStage(nn.Module):
    def __init__(self, in_ch, out_ch, norm=True):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 4, 2, 1)
        self.norm = nn.BatchNorm2d(out_ch) if norm else None

    def forward(self, x):
        h = self.conv(x)
        if self.norm is not None:
            h = self.norm(h)
        return F.leaky_relu(h, LEAKY_SLOPE)


class _UpStage(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_ch, out_ch, 4, 2, 1)
        self.norm = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class Encoded(NamedTuple):
    """Result of an encoder pass: coded-layer activations plus skip features."""

    y_c1: torch.Tensor
    x_c1: torch.Tensor
    skips: list


class CodedGenerator(nn.Module):
    """Conditional encoder-decoder generator with a classification tap at the code.

    Stride-2 stages reduce the image to a 1x1 code, a residual block yields
    the pre-activation ``x_c1``, and two parallel coded layers follow:
    ``y_c1 = f(x_c1 + b_c1)`` feeds the class head, while
    ``y_c2 = f(x_c1 + w_c2 C + b_c2)`` feeds the decoder.
    """

    def __init__(self, image_size=64, num_classes=5, in_channels=3, base_width=64,
                 noise_mode="off", dropout_p=0.5):
        super().__init__()
        if noise_mode not in ("off", "dropout"):
            raise ValueError(f"noise_mode must be 'off' or 'dropout', got {noise_mode!r}")
        self.image_size = _check_power_of_two(image_size)
        self.num_classes = int(num_classes)
        self.in_channels = int(in_channels)
        self.base_width = int(base_width)
        self.noise_mode = noise_mode
        self.dropout_p = float(dropout_p)

        depth = int(math.log2(image_size))
        chs = channel_plan(base_width, depth)
        self.depth = depth

        stages = []
        prev = in_channels
        for i, ch in enumerate(chs):
            # no norm on the first stage (pix2pix lineage) nor the innermost
            # one, whose 1x1 output leaves batch statistics undefined
            stages.append(_DownStage(prev, ch, norm=(0 < i < depth - 1)))
            prev = ch
        self.encoder = nn.ModuleList(stages)

        code_ch = chs[-1]
        self.code_channels = code_ch
        self.bottleneck = ResidualBlock(code_ch)
        self.code_bias_1 = nn.Parameter(torch.zeros(code_ch))
        self.pc_head = nn.Linear(code_ch, num_classes)
        self.cond_inject = nn.Linear(num_classes, code_ch, bias=False)
        self.code_bias_2 = nn.Parameter(torch.zeros(code_ch))

        ups = []
        prev = code_ch
        for j in range(depth - 1, 0, -1):
            in_ch = prev if j == depth - 1 else prev + chs[j]
            ups.append(_UpStage(in_ch, chs[j - 1]))
            prev = chs[j - 1]
        self.decoder = nn.ModuleList(ups)
        self.final = nn.ConvTranspose2d(prev + chs[0], in_channels, 4, 2, 1)
        self.n_dropout_stages = min(3, depth - 1)

        init_weights(self)

    def config(self) -> dict:
        return {
            "image_size": self.image_size,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "noise_mode": self.noise_mode,
            "dropout_p": self.dropout_p,
        }

    def _check_image(self, image: torch.Tensor) -> None:
        expected = (self.in_channels, self.image_size, self.image_size)
        if image.dim() != 4 or tuple(image.shape[1:]) != expected:
            raise ValueError(
                f"expected image batch of shape (N, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {tuple(image.shape)}"
            )

    def _check_condition(self, condition: torch.Tensor) -> torch.Tensor:
        if condition.dim() != 2 or condition.shape[1] != self.num_classes:
            raise ValueError(
                f"condition must have shape (N, {self.num_classes}), got {tuple(condition.shape)}"
            )
        ok = ((condition == 0) | (condition == 1)).all() and (condition.sum(dim=1) <= 1).all()
        if not ok:
            raise ValueError("condition rows must be one-hot (or all-zero)")
        return condition

    def encode(self, image: torch.Tensor) -> Encoded:
        """Run the encoder and bottleneck; returns coded activations and skips."""
        self._check_image(image)
        if image.min() < 0 or image.max() > 1:
            raise ValueError("image values must lie in [0, 1]")
        h = image * 2.0 - 1.0
        feats = []
        for stage in self.encoder:
            h = stage(h)
            feats.append(h)
        x_c1 = self.bottleneck(feats[-1])
        y_c1 = F.leaky_relu(x_c1 + self.code_bias_1[None, :, None, None], LEAKY_SLOPE)
        return Encoded(y_c1=y_c1, x_c1=x_c1, skips=feats[:-1])

    def classify_code(self, y_c1: torch.Tensor) -> torch.Tensor:
        """K class logits from the pooled code; independent of the condition path."""
        if y_c1.dim() != 4 or y_c1.shape[1] != self.code_channels:
            raise ValueError(f"expected code of {self.code_channels} channels, got {tuple(y_c1.shape)}")
        return self.pc_head(y_c1.mean(dim=(2, 3)))

    def inject_condition(self, x_c1: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        """y_c2 = f(x_c1 + w_c2 C + b_c2), the condition broadcast over the code."""
        condition = self._check_condition(condition.to(x_c1.dtype))
        proj = self.cond_inject(condition)[:, :, None, None]
        return F.leaky_relu(x_c1 + proj + self.code_bias_2[None, :, None, None], LEAKY_SLOPE)

    def _dropout(self, h: torch.Tensor, rng) -> torch.Tensor:
        keep = 1.0 - self.dropout_p
        mask = (torch.rand(h.shape, generator=rng, device=h.device, dtype=h.dtype) < keep)
        return h * mask / keep

    def decode(self, y_c2: torch.Tensor, skips, rng=None) -> torch.Tensor:
        """Mirror the encoder back to image space, concatenating skip copies."""
        if len(skips) != self.depth - 1:
            raise ValueError(f"expected {self.depth - 1} skip features, got {len(skips)}")
        h = y_c2
        for i, stage in enumerate(self.decoder):
            if i > 0:
                skip = skips[self.depth - 1 - i]
                if skip.shape[2:] != h.shape[2:]:
                    raise ValueError(
                        f"skip resolution {tuple(skip.shape[2:])} does not match "
                        f"decoder feature {tuple(h.shape[2:])} at stage {i}"
                    )
                h = torch.cat([h, skip], dim=1)
            h = stage(h)
            if self.noise_mode == "dropout" and i < self.n_dropout_stages:
                h = self._dropout(h, rng)
        out = torch.tanh(self.final(torch.cat([h, skips[0]], dim=1)))
        return (out + 1.0) / 2.0

    def generate(self, image: torch.Tensor, condition, rng=None) -> torch.Tensor:
        """Full conditional translation: encode, inject the condition, decode."""
        condition = self.as_condition_tensor(condition, image.shape[0])
        enc = self.encode(image)
        y_c2 = self.inject_condition(enc.x_c1, condition)
        return self.decode(y_c2, enc.skips, rng=rng)

    def forward(self, image, condition, rng=None):
        return self.generate(image, condition, rng=rng)

    def as_condition_tensor(self, condition, batch_size: int) -> torch.Tensor:
        """Accepts a ConditionVector, an index, or an (N, K) tensor/array."""
        if hasattr(condition, "encoding"):
            vec = torch.from_numpy(condition.encoding)
            return vec[None, :].repeat(batch_size, 1)
        if isinstance(condition, int):
            vec = torch.zeros(self.num_classes)
            vec[condition] = 1.0
            return vec[None, :].repeat(batch_size, 1)
        t = torch.as_tensor(condition, dtype=torch.float32)
        if t.dim() == 1:
            t = t[None, :].repeat(batch_size, 1)
        return t


class PatchDiscriminator(nn.Module):
    """Conditional patch discriminator over channel-concatenated image pairs.

    No normalization layers: per-sample outputs must not depend on batch
    composition or the gradient penalty is ill-defined.
    """

    def __init__(self, image_size=64, in_channels=3, base_width=64):
        super().__init__()
        self.image_size = _check_power_of_two(image_size)
        self.in_channels = int(in_channels)
        self.base_width = int(base_width)

        depth = int(math.log2(image_size)) - 2
        chs = channel_plan(base_width, depth)
        layers = []
        prev = 2 * in_channels
        for ch in chs:
            layers.append(nn.Conv2d(prev, ch, 4, 2, 1))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            prev = ch
        layers.append(nn.Conv2d(prev, 1, 4, 1, 0))
        self.net = nn.Sequential(*layers)
        init_weights(self)

    def config(self) -> dict:
        return {
            "image_size": self.image_size,
            "in_channels": self.in_channels,
            "base_width": self.base_width,
        }

    def forward(self, condition_image: torch.Tensor, candidate_image: torch.Tensor) -> torch.Tensor:
        """Raw patch logit map; mean over the map is the scalar score."""
        if condition_image.shape != candidate_image.shape:
            raise ValueError(
                f"condition/candidate shape mismatch: {tuple(condition_image.shape)} "
                f"vs {tuple(candidate_image.shape)}"
            )
        if condition_image.shape[2] != self.image_size:
            raise ValueError(
                f"expected {self.image_size}px inputs, got {condition_image.shape[2]}px"
            )
        return self.net(torch.cat([condition_image, candidate_image], dim=1))


class CascadeFeatures(nn.Module):
    """Frozen five-stage convolutional feature pyramid for the cascade loss.

    Channel plan follows the 19-layer lineage; each stage halves resolution
    so the five maps have strictly decreasing spatial extent. Weights load
    from an archive when provided, otherwise seeded random features keep the
    loss exercisable offline.
    """

    CHANNELS = (64, 64, 128, 128, 256)

    def __init__(self, weights_path=None, seed: int = 0):
        super().__init__()
        self.weights_path = str(weights_path) if weights_path else None
        self.seed = int(seed)
        convs = []
        prev = 3
        for ch in self.CHANNELS:
            convs.append(nn.Conv2d(prev, ch, 3, 1, 1))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.pool = nn.AvgPool2d(2)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

        if weights_path is not None:
            try:
                state = torch.load(weights_path, map_location="cpu", weights_only=True)
                self.load_state_dict(state)
            except Exception as exc:
                raise CheckpointError(f"cannot load cascade weights from {weights_path}: {exc}") from exc
        else:
            g = torch.Generator().manual_seed(self.seed)
            for conv in self.convs:
                fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
                conv.weight.data = torch.randn(conv.weight.shape, generator=g) * math.sqrt(2.0 / fan_in)
                conv.bias.data.zero_()

        self.requires_grad_(False)
        super().train(False)

    @property
    def num_stages(self) -> int:
        return len(self.convs)

    def train(self, mode: bool = True):
        # permanently frozen: ignore mode flips from parent .train() calls
        return super().train(False)

    def forward(self, image: torch.Tensor) -> list:
        feats = []
        h = (image - self.mean.to(image.dtype)) / self.std.to(image.dtype)
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = self.pool(h)
            h = F.relu(conv(h))
            feats.append(h)
        return feats


class HybridCritic(nn.Module):
    """Bundle of the adversarial discriminator and the frozen cascade network."""

    def __init__(self, discriminator: PatchDiscriminator, cascade: CascadeFeatures):
        super().__init__()
        self.discriminator = discriminator
        self.cascade = cascade

    def forward(self, condition_image, candidate_image):
        return self.discriminator(condition_image, candidate_image)

    def cascade_features(self, image):
        return self.cascade(image)
