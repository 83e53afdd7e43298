"""Core value types shared across the package.

All numeric payloads are torch float64 tensors so that gradients can flow
through every operation that is declared differentiable.  numpy only appears
at the I/O boundaries (PNG files, serialization containers).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch

DTYPE = torch.float64

GAMMA_DIM = 27  # 9 spherical-harmonics bands x 3 color channels
POSE_DIM = 6    # 3 Euler angles + 3 translation
LANDMARK_COUNT = 66


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(ValueError):
    """A build/configuration parameter is out of its valid range."""


class DegenerateRenderError(RuntimeError):
    """The face mesh projects entirely outside the image."""


def as_tensor(x, shape=None) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=DTYPE)
    if shape is not None and tuple(t.shape) != tuple(shape):
        raise ContractError(f"expected shape {tuple(shape)}, got {tuple(t.shape)}")
    return t


@dataclass(frozen=True)
class ParamLayout:
    """Block structure of the face parameter vector.

    Order: phi(3), rho(3), alpha(A), delta(D), beta(B), gamma(27).
    """

    dim_alpha: int
    dim_delta: int
    dim_beta: int

    def __post_init__(self):
        if min(self.dim_alpha, self.dim_delta, self.dim_beta) <= 0:
            raise ConfigurationError("parameter block dims must be positive")

    @property
    def total(self) -> int:
        return POSE_DIM + self.dim_alpha + self.dim_delta + self.dim_beta + GAMMA_DIM

    # Slices into the flat vector, in documented field order.
    @property
    def phi(self) -> slice:
        return slice(0, 3)

    @property
    def rho(self) -> slice:
        return slice(3, 6)

    @property
    def alpha(self) -> slice:
        return slice(6, 6 + self.dim_alpha)

    @property
    def delta(self) -> slice:
        a = 6 + self.dim_alpha
        return slice(a, a + self.dim_delta)

    @property
    def beta(self) -> slice:
        a = 6 + self.dim_alpha + self.dim_delta
        return slice(a, a + self.dim_beta)

    @property
    def gamma(self) -> slice:
        return slice(self.total - GAMMA_DIM, self.total)

    def block(self, name: str) -> slice:
        return getattr(self, name)


class EditSelector(enum.Enum):
    """Which semantic component an edit targets; the complement is untouched."""

    POSE = "pose"
    EXPRESSION = "expression"
    ILLUMINATION = "illumination"

    def block_slice(self, layout: ParamLayout) -> slice:
        if self is EditSelector.POSE:
            return slice(0, POSE_DIM)
        if self is EditSelector.EXPRESSION:
            return layout.beta
        return layout.gamma

    def block_dim(self, layout: ParamLayout) -> int:
        s = self.block_slice(layout)
        return s.stop - s.start


@dataclass
class FaceParams:
    """Flat face parameter vector with named block views.

    ``values`` is a 1-D float64 tensor laid out per ``layout``; blocks are
    exposed as (differentiable) views.
    """

    layout: ParamLayout
    values: torch.Tensor

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim != 1 or self.values.numel() != self.layout.total:
            raise ContractError(
                f"parameter vector must have {self.layout.total} entries, "
                f"got shape {tuple(self.values.shape)}"
            )
        if not bool(torch.isfinite(self.values).all()):
            raise ContractError("parameter vector contains non-finite entries")

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "FaceParams":
        return cls(layout, torch.zeros(layout.total, dtype=DTYPE))

    @property
    def phi(self) -> torch.Tensor:
        return self.values[self.layout.phi]

    @property
    def rho(self) -> torch.Tensor:
        return self.values[self.layout.rho]

    @property
    def alpha(self) -> torch.Tensor:
        return self.values[self.layout.alpha]

    @property
    def delta(self) -> torch.Tensor:
        return self.values[self.layout.delta]

    @property
    def beta(self) -> torch.Tensor:
        return self.values[self.layout.beta]

    @property
    def gamma(self) -> torch.Tensor:
        return self.values[self.layout.gamma]

    def block(self, selector: EditSelector) -> torch.Tensor:
        return self.values[selector.block_slice(self.layout)]

    def replace_block(self, selector: EditSelector, block: torch.Tensor) -> "FaceParams":
        block = as_tensor(block)
        s = selector.block_slice(self.layout)
        if block.numel() != s.stop - s.start:
            raise ContractError(
                f"{selector.value} block needs {s.stop - s.start} entries, got {block.numel()}"
            )
        out = torch.cat([self.values[: s.start], block.reshape(-1), self.values[s.stop :]])
        return FaceParams(self.layout, out)

    def detach(self) -> "FaceParams":
        return FaceParams(self.layout, self.values.detach().clone())

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy().copy()


class Stage(enum.Enum):
    Z = "Z"
    W = "W"
    WPLUS = "Wplus"


@dataclass
class LatentCode:
    """Generator latent tagged with its hierarchy stage.

    Z and W codes are 1-D of length dZ == dW; Wplus codes are (L, dW).
    """

    stage: Stage
    values: torch.Tensor

    def __post_init__(self):
        self.values = as_tensor(self.values)
        expected_ndim = 2 if self.stage is Stage.WPLUS else 1
        if self.values.ndim != expected_ndim:
            raise ContractError(
                f"stage {self.stage.value} expects {expected_ndim}-D values, "
                f"got {self.values.ndim}-D"
            )
        if not bool(torch.isfinite(self.values).all()):
            raise ContractError("latent code contains non-finite entries")

    def require(self, *stages: Stage) -> "LatentCode":
        if self.stage not in stages:
            want = "/".join(s.value for s in stages)
            raise ContractError(f"expected a {want} code, got {self.stage.value}")
        return self

    def detach(self) -> "LatentCode":
        return LatentCode(self.stage, self.values.detach().clone())

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy().copy()


@dataclass
class RasterImage:
    """RGB float image in [0, 1]; renders additionally carry a coverage mask."""

    pixels: torch.Tensor
    mask: torch.Tensor | None = None

    def __post_init__(self):
        self.pixels = as_tensor(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ContractError(f"pixels must be HxWx3, got {tuple(self.pixels.shape)}")
        if self.mask is not None:
            self.mask = torch.as_tensor(self.mask, dtype=torch.bool)
            if tuple(self.mask.shape) != tuple(self.pixels.shape[:2]):
                raise ContractError("mask shape must match image HxW")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def detach(self) -> "RasterImage":
        m = None if self.mask is None else self.mask.clone()
        return RasterImage(self.pixels.detach().clone(), m)

    def numpy(self) -> np.ndarray:
        return self.pixels.detach().cpu().numpy().copy()


@dataclass
class LandmarkSet:
    """66 projected 2-D landmark positions in pixel coordinates."""

    points: torch.Tensor
    low_confidence: bool = False

    def __post_init__(self):
        self.points = as_tensor(self.points)
        if tuple(self.points.shape) != (LANDMARK_COUNT, 2):
            raise ContractError(
                f"landmarks must be {LANDMARK_COUNT}x2, got {tuple(self.points.shape)}"
            )
        if not bool(torch.isfinite(self.points).all()):
            raise ContractError("landmarks contain non-finite entries")

    def numpy(self) -> np.ndarray:
        return self.points.detach().cpu().numpy().copy()


@dataclass
class EnergyReport:
    """Per-term energy values for one evaluation of the embedding objective."""

    e_syn: float
    e_id: float
    e_edit: float
    e_inv: float
    e_recog: float
    total: float
    gradient_norm: float = float("nan")
    sample_seed: int = 0

    TERMS = ("e_syn", "e_id", "e_edit", "e_inv", "e_recog")

    def terms(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.TERMS}
