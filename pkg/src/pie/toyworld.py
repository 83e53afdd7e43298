"""Seeded stand-in generator with analytically known semantics.

The generator follows the usual latent hierarchy: a normal sample z maps
through a fixed perceptron to w, which broadcasts to a per-layer code w+.
The flattened w+ decodes *affinely* to face parameters, so every edit and
every property of the embedding energy has a closed-form ground truth.  A
seeded convolutional stack turns the same code into a smooth background, and
the face render is composited on top.

The rig mapping edits one semantic block: in exact mode it applies the
minimal-norm latent change realizing the requested block (a pseudo-inverse
step); perturbed mode adds a fixed seeded smooth residual, scaled up for
codes that stray from the sampling prior, to emulate an imperfectly trained
mapping that the feedback loop can then correct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .morphable import MorphableBasis, CameraModel, render
from .types import (
    DTYPE,
    ConfigurationError,
    ContractError,
    EditSelector,
    FaceParams,
    LatentCode,
    ParamLayout,
    RasterImage,
    Stage,
    as_tensor,
)

# Per-block scale of the affine decoder rows (radians / scene units / unitless).
BLOCK_SCALES = {
    "phi": 0.22,
    "rho": 0.10,
    "alpha": 1.0,
    "delta": 1.0,
    "beta": 1.0,
    "gamma": 0.12,
}

RIG_EPS_DEFAULT = 0.05
RIG_OFFPRIOR_GAIN = 4.0


@dataclass
class RigWeights:
    """Seeded smooth residual direction network for one selector."""

    w_code: torch.Tensor    # (n, n)
    w_target: torch.Tensor  # (n, k)
    bias: torch.Tensor      # (n,)


@dataclass
class GeneratorConfig:
    seed: int
    d_w: int
    layers: int
    image_size: tuple[int, int]
    layout: ParamLayout
    mapping: list[tuple[torch.Tensor, torch.Tensor]]
    background: list[tuple[torch.Tensor, torch.Tensor]]
    bg_input: tuple[torch.Tensor, torch.Tensor]
    decoder_matrix: torch.Tensor  # (m, layers*d_w)
    decoder_offset: torch.Tensor  # (m,)
    clamp_lo: torch.Tensor
    clamp_hi: torch.Tensor
    rig_weights: dict[str, RigWeights]
    rig_mode: str = "exact"
    rig_eps: float = RIG_EPS_DEFAULT
    w_rms_ref: float = 1.0
    _pinv_cache: dict[str, torch.Tensor] = field(default_factory=dict, repr=False)

    @property
    def flat_dim(self) -> int:
        return self.layers * self.d_w

    def block_sigma(self, name: str) -> float:
        """Reachable standard deviation of one parameter block."""
        return BLOCK_SCALES[name] * self.w_rms_ref

    def tau_rows(self, selector: EditSelector) -> tuple[torch.Tensor, torch.Tensor]:
        s = selector.block_slice(self.layout)
        return self.decoder_matrix[s], self.decoder_offset[s]

    def tau_pinv(self, selector: EditSelector) -> torch.Tensor:
        key = selector.value
        if key not in self._pinv_cache:
            rows, _ = self.tau_rows(selector)
            self._pinv_cache[key] = torch.linalg.pinv(rows)
        return self._pinv_cache[key]


def _mlp_weights(rng: np.random.Generator, sizes: list[int], out_gain: float):
    layers = []
    for i in range(len(sizes) - 1):
        fan_in = sizes[i]
        gain = out_gain if i == len(sizes) - 2 else 1.4
        w = rng.standard_normal((sizes[i + 1], fan_in)) * (gain / math.sqrt(fan_in))
        b = rng.standard_normal(sizes[i + 1]) * 0.05
        layers.append((as_tensor(w), as_tensor(b)))
    return layers


def build_generator(
    seed: int,
    layout: ParamLayout,
    d_w: int = 32,
    layers: int = 6,
    image_size: tuple[int, int] = (64, 64),
    rig_mode: str = "exact",
    rig_eps: float = RIG_EPS_DEFAULT,
) -> GeneratorConfig:
    """Deterministically build all fixed weights of the toy generator."""
    h, w = image_size
    if h % 8 != 0 or w % 8 != 0 or min(h, w) < 16:
        raise ConfigurationError("image size must be a multiple of 8, at least 16")
    m = layout.total
    n = layers * d_w
    if m > n:
        raise ConfigurationError("decoder needs layers*d_w >= parameter dimension")

    ss = np.random.SeedSequence([int(seed), 0x746F79])
    r_map, r_dec, r_bg, r_rig, r_ref = [
        np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(5)
    ]

    mapping = _mlp_weights(r_map, [d_w, 2 * d_w, 2 * d_w, d_w], out_gain=1.0)

    # Row-orthonormal decoder scaled per block: semantic blocks respond to
    # orthogonal latent directions, so block edits have no cross-talk and the
    # minimal-norm property of the rig step is exact.
    raw = r_dec.standard_normal((n, m))
    q, r = np.linalg.qr(raw)
    q = (q * np.sign(np.diag(r))).T  # (m, n), orthonormal rows
    scales = np.empty(m)
    for name, scale in BLOCK_SCALES.items():
        scales[layout.block(name)] = scale
    matrix = as_tensor(q * scales[:, None])

    offset = np.zeros(m)
    g0 = layout.gamma.start
    offset[g0 + 0 : g0 + 3] = 0.95   # band-0 ambient, per channel
    offset[g0 + 6 : g0 + 9] = 0.18   # band z: light slightly from the front
    offset = as_tensor(offset)

    # Estimate the typical mapped-code magnitude; used both for the clamp
    # bounds and for the off-prior scaling of the perturbed rig.
    probe = torch.from_numpy(r_ref.standard_normal((256, d_w)))
    with torch.no_grad():
        mapped = _apply_mlp(mapping, probe)
    w_rms_ref = float((mapped ** 2).mean().sqrt())

    reach = torch.from_numpy(scales) * (6.0 * w_rms_ref) + 0.30
    clamp_lo = offset - reach
    clamp_hi = offset + reach

    bg_c = 6
    bg_input = _mlp_weights(r_bg, [n, bg_c * (h // 8) * (w // 8)], out_gain=1.0)[0]
    background = [
        _conv(r_bg, bg_c, bg_c),
        _conv(r_bg, bg_c, bg_c),
        _conv(r_bg, bg_c, 3),
    ]

    rig_weights = {}
    for selector in EditSelector:
        k = selector.block_dim(layout)
        rig_weights[selector.value] = RigWeights(
            w_code=as_tensor(r_rig.standard_normal((n, n)) / math.sqrt(n)),
            w_target=as_tensor(r_rig.standard_normal((n, k)) / math.sqrt(k)),
            bias=as_tensor(r_rig.standard_normal(n) * 0.2),
        )

    return GeneratorConfig(
        seed=int(seed),
        d_w=d_w,
        layers=layers,
        image_size=(h, w),
        layout=layout,
        mapping=mapping,
        background=background,
        bg_input=bg_input,
        decoder_matrix=matrix,
        decoder_offset=offset,
        clamp_lo=clamp_lo,
        clamp_hi=clamp_hi,
        rig_weights=rig_weights,
        rig_mode=rig_mode,
        rig_eps=rig_eps,
        w_rms_ref=w_rms_ref,
    )


def _conv(rng: np.random.Generator, c_in: int, c_out: int):
    w = rng.standard_normal((c_out, c_in, 3, 3)) * (1.3 / math.sqrt(c_in * 9))
    b = rng.standard_normal(c_out) * 0.1
    return as_tensor(w), as_tensor(b)


def _apply_mlp(layers, x: torch.Tensor) -> torch.Tensor:
    for i, (w, b) in enumerate(layers):
        x = x @ w.T + b
        if i < len(layers) - 1:
            x = torch.tanh(x)
    return x


def sample_z(cfg: GeneratorConfig, rng: np.random.Generator) -> LatentCode:
    """Standard-normal stage-Z sample; advances ``rng`` deterministically."""
    return LatentCode(Stage.Z, torch.from_numpy(rng.standard_normal(cfg.d_w)))


def map_to_w(cfg: GeneratorConfig, z: LatentCode) -> LatentCode:
    """Fixed seeded 3-layer perceptron from Z to W."""
    z.require(Stage.Z)
    return LatentCode(Stage.W, _apply_mlp(cfg.mapping, z.values))


def broadcast(cfg: GeneratorConfig, w: LatentCode) -> LatentCode:
    """Replicate a W row into the per-layer W+ code."""
    w.require(Stage.W)
    return LatentCode(Stage.WPLUS, w.values.unsqueeze(0).expand(cfg.layers, cfg.d_w))


def _flat(cfg: GeneratorConfig, v: LatentCode) -> torch.Tensor:
    v.require(Stage.W, Stage.WPLUS)
    if v.stage is Stage.W:
        v = broadcast(cfg, v)
    return v.values.reshape(-1)


def decode_params(cfg: GeneratorConfig, v: LatentCode) -> FaceParams:
    """Ground-truth face parameters of a latent code (affine + wide clamp)."""
    vec = _flat(cfg, v)
    raw = cfg.decoder_matrix @ vec + cfg.decoder_offset
    return FaceParams(cfg.layout, torch.clamp(raw, cfg.clamp_lo, cfg.clamp_hi))


def background_image(cfg: GeneratorConfig, v: LatentCode) -> torch.Tensor:
    """Smooth seeded HxWx3 background decoded from the latent code."""
    h, w = cfg.image_size
    bg_c = cfg.background[0][0].shape[1]
    wt, bt = cfg.bg_input
    x = (wt @ _flat(cfg, v) + bt).reshape(1, bg_c, h // 8, w // 8)
    for i, (cw, cb) in enumerate(cfg.background):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.conv2d(torch.tanh(x), cw, cb, padding=1)
    return (0.5 + 0.45 * torch.tanh(x)).squeeze(0).permute(1, 2, 0)


def synthesize(
    cfg: GeneratorConfig,
    basis: MorphableBasis,
    camera: CameraModel,
    v: LatentCode,
    frozen_assignment: np.ndarray | None = None,
) -> RasterImage:
    """Generator image of a latent code: face render over decoded background."""
    theta = decode_params(cfg, v)
    face = render(basis, camera, theta, frozen_assignment=frozen_assignment)
    bg = background_image(cfg, v)
    mask = face.mask.unsqueeze(2)
    pixels = torch.where(mask, face.pixels, bg)
    return RasterImage(pixels, face.mask)


def transform_params(block: torch.Tensor, selector: EditSelector, layout: ParamLayout) -> torch.Tensor:
    """Network-input encoding of a semantic block (currently the identity)."""
    block = as_tensor(block).reshape(-1)
    expected = selector.block_dim(layout)
    if block.numel() != expected:
        raise ContractError(
            f"{selector.value} block needs {expected} entries, got {block.numel()}"
        )
    return block


def _off_prior(cfg: GeneratorConfig, vec: torch.Tensor) -> torch.Tensor:
    """Smooth measure of how far a code sits from the mapped-sample prior.

    Zero-ish for broadcast codes near typical magnitude; grows with per-layer
    spread and with radial excess.  Drives the perturbed-rig error up for
    off-manifold embeddings.
    """
    rows = vec.reshape(cfg.layers, cfg.d_w)
    mean_row = rows.mean(dim=0)
    spread = ((rows - mean_row) ** 2).mean().sqrt()
    radial = (mean_row ** 2).mean().sqrt() - cfg.w_rms_ref
    soft_radial = F.softplus(radial * 8.0 / cfg.w_rms_ref) / 8.0
    return spread / cfg.w_rms_ref + soft_radial


def rignet(
    cfg: GeneratorConfig,
    v: LatentCode,
    target_block: torch.Tensor,
    selector: EditSelector,
    mode: str | None = None,
) -> LatentCode:
    """Latent edit realizing ``target_block`` on the chosen semantic component.

    Exact mode returns the minimal-norm change ``v + pinv(A_tau) @ residual``;
    perturbed mode adds the seeded smooth residual of relative magnitude
    ``rig_eps`` scaled by the off-prior factor.  Always returns a W+ code.
    """
    mode = cfg.rig_mode if mode is None else mode
    if mode not in ("exact", "perturbed"):
        raise ContractError(f"unknown rig mode {mode!r}")
    vec = _flat(cfg, v)
    target = transform_params(target_block, selector, cfg.layout)
    rows, offset = cfg.tau_rows(selector)
    residual = target - (rows @ vec + offset)
    delta = cfg.tau_pinv(selector) @ residual
    out = vec + delta

    if mode == "perturbed":
        weights = cfg.rig_weights[selector.value]
        direction = torch.tanh(
            weights.w_code @ vec + weights.w_target @ target + weights.bias
        )
        direction = direction / torch.linalg.norm(direction).clamp_min(1e-9)
        gain = 1.0 + RIG_OFFPRIOR_GAIN * _off_prior(cfg, vec)
        out = out + cfg.rig_eps * torch.linalg.norm(delta) * gain * direction

    return LatentCode(Stage.WPLUS, out.reshape(cfg.layers, cfg.d_w))
