"""Fixed seeded convolutional feature extractors.

Two stacks with frozen random weights: a perceptual pyramid over a 4x
downsampled image (four taps at decreasing resolution) and a pooled
128-dimensional recognition embedding.  Random smooth-nonlinearity convnets
keep the locality structure the losses rely on without any training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .types import DTYPE, ContractError, RasterImage, as_tensor

RECOGNITION_DIM = 128


@dataclass
class FeaturePyramid:
    taps: list[torch.Tensor]  # 4 tensors (C_i, H_i, W_i)
    source_size: tuple[int, int]

    def distance(self, other: "FeaturePyramid") -> torch.Tensor:
        """Sum of squared tap differences (the perceptual discrepancy)."""
        total = torch.zeros((), dtype=DTYPE)
        for a, b in zip(self.taps, other.taps):
            total = total + ((a - b) ** 2).sum()
        return total


def _conv_weights(rng: np.random.Generator, c_in: int, c_out: int, k: int = 3):
    fan_in = c_in * k * k
    w = rng.standard_normal((c_out, c_in, k, k)) * (1.2 / np.sqrt(fan_in))
    b = rng.standard_normal(c_out) * 0.05
    return as_tensor(w), as_tensor(b)


@dataclass
class FeatureNets:
    """Frozen weights for both extractors, derived from one seed."""

    perceptual: list[tuple[torch.Tensor, torch.Tensor]]
    recognition: list[tuple[torch.Tensor, torch.Tensor]]
    seed: int

    @classmethod
    def build(cls, seed: int) -> "FeatureNets":
        ss = np.random.SeedSequence([int(seed), 0x66656174])
        r_per, r_rec = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2)]
        perceptual = [
            _conv_weights(r_per, 3, 8),
            _conv_weights(r_per, 8, 16),
            _conv_weights(r_per, 16, 24),
            _conv_weights(r_per, 24, 32),
        ]
        recognition = [
            _conv_weights(r_rec, 3, 8),
            _conv_weights(r_rec, 8, 16),
            _conv_weights(r_rec, 16, 32),
            _conv_weights(r_rec, 32, RECOGNITION_DIM),
        ]
        return cls(perceptual=perceptual, recognition=recognition, seed=int(seed))


def _to_nchw(image: RasterImage) -> torch.Tensor:
    return image.pixels.permute(2, 0, 1).unsqueeze(0)


def perceptual_features(nets: FeatureNets, image: RasterImage) -> FeaturePyramid:
    """Feature pyramid of the 4x-downsampled image; 4 taps, stride 2 apart."""
    h, w = image.height, image.width
    if h < 16 or w < 16:
        raise ContractError(f"image must be at least 16x16, got {h}x{w}")
    x = F.avg_pool2d(_to_nchw(image), kernel_size=4, stride=4)
    taps = []
    for i, (weight, bias) in enumerate(nets.perceptual):
        stride = 1 if i == 0 else 2
        x = F.conv2d(x, weight, bias, stride=stride, padding=1)
        taps.append(x.squeeze(0))
        x = torch.tanh(x)
    return FeaturePyramid(taps=taps, source_size=(h, w))


def recognition_features(nets: FeatureNets, image: RasterImage) -> torch.Tensor:
    """Pooled 128-dim embedding used for identity comparisons."""
    x = _to_nchw(image)
    for i, (weight, bias) in enumerate(nets.recognition):
        x = F.conv2d(x, weight, bias, stride=2, padding=1)
        if i < len(nets.recognition) - 1:
            x = torch.tanh(x)
    return x.mean(dim=(2, 3)).squeeze(0)


def recog_distance(nets: FeatureNets, a: RasterImage, b: RasterImage) -> torch.Tensor:
    """Squared norm of the recognition-embedding difference."""
    if (a.height, a.width) != (b.height, b.width):
        raise ContractError("images must have equal sizes")
    d = recognition_features(nets, a) - recognition_features(nets, b)
    return (d ** 2).sum()
