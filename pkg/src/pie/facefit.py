"""Analysis-by-synthesis parameter recovery from images.

``fit_params`` descends the photometric(+landmark) objective over the face
parameters with ADADELTA steps under an accept/reject rule, so the objective
is non-increasing across accepted iterations.  ``detect_landmarks`` runs a
coarse pose+identity fit and projects the model landmarks, standing in for an
external 2-D tracker.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F

from .adadelta import AdadeltaState, adadelta_step
from .morphable import CameraModel, landmarks, render
from .types import (
    ContractError,
    DegenerateRenderError,
    FaceParams,
    LandmarkSet,
    RasterImage,
)
from .world import World

ALL_BLOCKS = ("phi", "rho", "alpha", "delta", "beta", "gamma")


@dataclass
class FitConfig:
    max_iterations: int = 200
    step_size: float = 1.0
    photometric_weight: float = 1.0
    landmark_weight: float = 0.0
    # Quadratic prior pulling the coefficient blocks (not the pose) toward
    # the rest parameters; keeps the fit from repainting/deforming its way
    # out of pose errors.
    prior_weight: float = 0.05
    residual_pool: int = 1
    init_theta: FaceParams | None = None
    blocks: tuple[str, ...] = ALL_BLOCKS

    def __post_init__(self):
        if self.max_iterations <= 0 or self.step_size <= 0:
            raise ContractError("iterations and step size must be positive")
        if self.photometric_weight < 0 or self.landmark_weight < 0 or self.prior_weight < 0:
            raise ContractError("fit weights must be non-negative")


@dataclass
class FitResult:
    params: FaceParams
    converged: bool
    iterations: int
    objective: float
    initial_objective: float
    trace: list[float] = field(default_factory=list)


def photometric_landmark_loss(
    world: World,
    image: RasterImage,
    theta,
    weight_photo: float,
    weight_landmarks: float = 0.0,
    landmark_target: LandmarkSet | None = None,
    frozen_assignment=None,
    residual_pool: int = 1,
) -> torch.Tensor:
    """w_ph * |I - I(theta)|^2 over foreground pixels + w_lm * |L_I - L(theta)|_F^2.

    ``residual_pool > 1`` area-averages the masked residual over pool x pool
    blocks before squaring (a blurred objective for coarse-to-fine descent;
    its optimum for a rendered target stays at the true parameters).
    """
    total = torch.zeros((), dtype=torch.float64)
    if weight_photo != 0.0:
        rendered = render(world.basis, world.camera, theta,
                          frozen_assignment=frozen_assignment)
        if residual_pool > 1:
            diff = (image.pixels - rendered.pixels) * rendered.mask.unsqueeze(2)
            pooled = F.avg_pool2d(
                diff.permute(2, 0, 1).unsqueeze(0), residual_pool, residual_pool
            )
            photo = (pooled ** 2).sum() * residual_pool ** 2
        else:
            diff = (image.pixels - rendered.pixels)[rendered.mask]
            photo = (diff ** 2).sum()
        total = total + weight_photo * photo
    if weight_landmarks != 0.0 and landmark_target is not None:
        lm = landmarks(world.basis, world.camera, theta)
        total = total + weight_landmarks * ((lm.points - landmark_target.points) ** 2).sum()
    return total


def default_params(world: World) -> FaceParams:
    """Zero coefficients, face-forward pose, the generator's rest lighting."""
    lo, hi = world.generator.clamp_lo, world.generator.clamp_hi
    return FaceParams(world.layout, torch.clamp(world.generator.decoder_offset, lo, hi))


def _block_mask(world: World, blocks) -> torch.Tensor:
    mask = torch.zeros(world.layout.total, dtype=torch.float64)
    for name in blocks:
        if name not in ALL_BLOCKS:
            raise ContractError(f"unknown parameter block {name!r}")
        mask[world.layout.block(name)] = 1.0
    return mask


def _prior_weights(world: World, base: float) -> torch.Tensor:
    """Per-coordinate prior weights, inverse to each block's reachable variance.

    Normalized so an identity coefficient gets weight ``base``; the rotation
    angles stay unregularized.
    """
    ref = world.generator.block_sigma("alpha")
    weights = torch.zeros(world.layout.total, dtype=torch.float64)
    for name in ("rho", "alpha", "delta", "beta", "gamma"):
        sigma = world.generator.block_sigma(name)
        weights[world.layout.block(name)] = base * (ref / sigma) ** 2
    return weights


def fit_params(
    world: World,
    image: RasterImage,
    config: FitConfig | None = None,
    landmark_target: LandmarkSet | None = None,
) -> FitResult:
    """Recover face parameters for an image by gradient descent on the loss."""
    config = config or FitConfig()
    if (image.height, image.width) != world.image_size:
        raise ContractError("image size does not match the camera")
    init = config.init_theta or default_params(world)
    if init.layout != world.layout:
        raise ContractError("init parameters do not match the world layout")
    mask = _block_mask(world, config.blocks)

    x = init.values.detach().clone()
    state = AdadeltaState.fresh(x.shape, step_size=config.step_size)
    base_step = config.step_size

    rest = default_params(world).values
    prior = _prior_weights(world, config.prior_weight)

    def objective(values: torch.Tensor) -> torch.Tensor:
        loss = photometric_landmark_loss(
            world, image, values,
            weight_photo=config.photometric_weight,
            weight_landmarks=config.landmark_weight,
            landmark_target=landmark_target,
            residual_pool=config.residual_pool,
        )
        if config.prior_weight:
            loss = loss + (prior * (values - rest) ** 2).sum()
        return loss

    with torch.no_grad():
        current = float(objective(x))
    initial = current
    trace = [current]

    for _ in range(config.max_iterations):
        leaf = x.clone().requires_grad_(True)
        value = objective(leaf)
        (grad,) = torch.autograd.grad(value, leaf)
        delta = adadelta_step(state, grad * mask)
        candidate = x + delta
        try:
            with torch.no_grad():
                cand_loss = float(objective(candidate))
        except DegenerateRenderError:
            cand_loss = float("inf")
        if cand_loss <= current:
            x, current = candidate, cand_loss
            state.step_size = min(state.step_size * 1.25, base_step)
        else:
            state.step_size *= 0.5  # rejected step; retry smaller
        trace.append(current)

    tail = max(1, config.max_iterations // 10)
    before_tail = trace[-tail - 1]
    converged = (before_tail - current) > 1e-6 * max(abs(before_tail), 1e-12) or (
        current <= 1e-12
    )
    return FitResult(
        params=FaceParams(world.layout, x),
        converged=converged,
        iterations=config.max_iterations,
        objective=current,
        initial_objective=initial,
        trace=trace,
    )


def scaled_world(world: World, factor: int) -> World:
    """The same world seen through a camera downscaled by ``factor``."""
    cam = world.camera
    small = CameraModel(
        focal_length=cam.focal_length / factor,
        principal_point=(cam.principal_point[0] / factor, cam.principal_point[1] / factor),
        image_size=(cam.image_size[0] // factor, cam.image_size[1] // factor),
        face_distance=cam.face_distance,
    )
    return replace(world, camera=small)


def downsample_image(image: RasterImage, factor: int) -> RasterImage:
    x = image.pixels.permute(2, 0, 1).unsqueeze(0)
    x = F.avg_pool2d(x, kernel_size=factor, stride=factor)
    return RasterImage(x.squeeze(0).permute(1, 2, 0))


# Pose offsets (pitch, yaw) tried at the coarsest level before descending.
COARSE_STARTS = ((0.0, 0.0), (0.3, 0.0), (-0.3, 0.0), (0.0, 0.3), (0.0, -0.3))


def fit_cascade(
    world: World,
    image: RasterImage,
    blocks: tuple[str, ...],
    iterations: int,
    init_theta: FaceParams | None = None,
    landmark_target: LandmarkSet | None = None,
    landmark_weight: float = 0.0,
    multi_start: bool = True,
) -> FitResult:
    """Coarse-to-fine chain of fits over pooled-residual objectives.

    Blurring the residual smooths over the rasterization staircase that traps
    single-resolution descent, and a small deterministic pose multi-start at
    the coarsest level picks the right basin before refinement.  The pooled
    objectives share their optimum with the plain one, so the chain is an
    annealing schedule, not a different problem.
    """
    plan = [(4, 0.35, 6.0), (2, 0.3, 3.0), (1, 0.35, 1.5)]
    result: FitResult | None = None
    theta = init_theta
    for pool, share, step in plan:
        iters = max(1, int(round(iterations * share)))
        target = landmark_target if pool == 1 else None
        cfg = FitConfig(
            max_iterations=iters,
            step_size=step,
            blocks=blocks,
            init_theta=theta,
            residual_pool=pool,
            landmark_weight=landmark_weight if pool == 1 else 0.0,
        )
        if pool == plan[0][0] and multi_start:
            base = theta or default_params(world)
            best, best_fine = None, float("inf")
            for d_pitch, d_yaw in COARSE_STARTS:
                start = base.values.clone()
                start[0] += d_pitch
                start[1] += d_yaw
                cand = fit_params(
                    world, image, replace(cfg, init_theta=FaceParams(world.layout, start)),
                    landmark_target=target,
                )
                # Judge candidates on the unblurred residual.
                with torch.no_grad():
                    fine = float(
                        photometric_landmark_loss(world, image, cand.params.values, 1.0)
                    )
                if best is None or fine < best_fine:
                    best, best_fine = cand, fine
            result = best
        else:
            result = fit_params(world, image, cfg, landmark_target=target)
        theta = result.params
    return result


def detect_landmarks(
    world: World, image: RasterImage, iterations: int = 200
) -> tuple[LandmarkSet, FitResult]:
    """Landmarks via a coarse photometric fit, then projection.

    Pose, identity, and illumination are estimated (illumination must be
    co-estimated here: a wrong-lighting render biases the pose pull); the
    returned set carries ``low_confidence=True`` when the fit did not
    converge.
    """
    result = fit_cascade(
        world, image, blocks=("phi", "rho", "alpha", "gamma"), iterations=iterations
    )
    lm = landmarks(world.basis, world.camera, result.params)
    lm.low_confidence = not result.converged
    return lm, result
