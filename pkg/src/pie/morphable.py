"""Differentiable morphable face model: mesh assembly, SH shading, rendering.

The model follows the classic linear parameterization: vertex positions are
``mean + geometry_basis @ alpha + expression_basis @ beta`` rigidly posed by
Euler angles and a translation, vertex colors are a reflectance model shaded
by second-order real spherical harmonics, and the image is a z-buffered
perspective rasterization with Gouraud interpolation.

Bases are procedurally generated smooth random fields on an icosphere,
orthonormalized so every basis column has unit Frobenius norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .icosphere import farthest_point_sample, icosphere
from .rasterize import assign_triangles, interpolate
from .types import (
    DTYPE,
    ConfigurationError,
    ContractError,
    DegenerateRenderError,
    FaceParams,
    LandmarkSet,
    ParamLayout,
    RasterImage,
    as_tensor,
)

LANDMARK_COUNT = 66

# Head is slightly taller than wide and flattened front-to-back.
MEAN_AXES = (0.95, 1.15, 0.90)

# Fixed feature bumps (direction on the unit sphere, angular width, height):
# nose, brow ridge, chin, cheekbones.  They break the rotational symmetry of
# the ellipsoid so head pose is observable from the silhouette and shading.
MEAN_FEATURES = (
    ((0.0, -0.05, 1.0), 0.30, 0.34),
    ((0.0, 0.45, 0.95), 0.45, 0.14),
    ((0.0, -0.85, 0.65), 0.35, 0.18),
    ((0.55, -0.25, 0.85), 0.28, 0.12),
    ((-0.55, -0.25, 0.85), 0.28, 0.12),
)

# Sharp albedo marks (direction, angular width, RGB delta): eyes, brows,
# mouth.  Localized high-contrast spots that the smooth reflectance basis
# cannot imitate; they pin the pose photometrically the way tracked
# fiducials would.
ALBEDO_MARKS = (
    ((0.38, 0.22, 1.0), 0.13, (-0.52, -0.40, -0.30)),
    ((-0.38, 0.22, 1.0), 0.13, (-0.52, -0.40, -0.30)),
    ((0.40, 0.40, 0.95), 0.10, (-0.30, -0.25, -0.20)),
    ((-0.40, 0.40, 0.95), 0.10, (-0.30, -0.25, -0.20)),
    ((0.18, -0.52, 0.92), 0.12, (-0.35, -0.30, -0.18)),
    ((-0.18, -0.52, 0.92), 0.12, (-0.35, -0.30, -0.18)),
    ((0.0, -0.50, 0.95), 0.12, (-0.38, -0.32, -0.20)),
)

# Real SH: Y = [1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2] with these scales,
# and the Lambertian irradiance convolution constants per band.
SH_SCALE = (0.282095, 0.488603, 0.488603, 0.488603,
            1.092548, 1.092548, 0.315392, 1.092548, 0.546274)
SH_CONV = (math.pi,
           2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0,
           math.pi / 4.0, math.pi / 4.0, math.pi / 4.0, math.pi / 4.0,
           math.pi / 4.0)


@dataclass
class MorphableBasis:
    """Procedural linear face model on an icosphere topology."""

    mean_shape: torch.Tensor        # (V, 3)
    geometry_basis: torch.Tensor    # (V, 3, A)
    expression_basis: torch.Tensor  # (V, 3, B)
    mean_albedo: torch.Tensor       # (V, 3)
    reflectance_basis: torch.Tensor  # (V, 3, D)
    faces: np.ndarray               # (F, 3) int64
    landmark_indices: np.ndarray    # (66,) int64
    seed: int
    mesh_level: int

    @property
    def vertex_count(self) -> int:
        return self.mean_shape.shape[0]

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(
            dim_alpha=self.geometry_basis.shape[2],
            dim_delta=self.reflectance_basis.shape[2],
            dim_beta=self.expression_basis.shape[2],
        )


@dataclass
class CameraModel:
    """Pinhole camera at (0, 0, face_distance) looking toward the origin."""

    focal_length: float
    principal_point: tuple[float, float]
    image_size: tuple[int, int]  # (H, W)
    face_distance: float = 4.0

    def __post_init__(self):
        h, w = self.image_size
        if self.focal_length <= 0 or h <= 0 or w <= 0:
            raise ConfigurationError("camera needs positive focal length and image size")

    @classmethod
    def default(cls, image_size: tuple[int, int]) -> "CameraModel":
        h, w = image_size
        return cls(
            focal_length=1.2 * h,
            principal_point=(w / 2.0, h / 2.0),
            image_size=(h, w),
        )


def _monomial_fields(unit_verts: np.ndarray, degree: int) -> np.ndarray:
    """All monomials x^i y^j z^k with i+j+k <= degree, evaluated per vertex."""
    x, y, z = unit_verts[:, 0], unit_verts[:, 1], unit_verts[:, 2]
    cols = []
    for total in range(degree + 1):
        for i in range(total + 1):
            for j in range(total - i + 1):
                k = total - i - j
                cols.append((x ** i) * (y ** j) * (z ** k))
    return np.stack(cols, axis=1)


def _smooth_orthonormal_basis(
    rng: np.random.Generator, unit_verts: np.ndarray, count: int
) -> np.ndarray:
    """(V, 3, count) basis; columns orthonormal as vectors in R^(3V)."""
    v = unit_verts.shape[0]
    degree = 2
    while ((degree + 1) * (degree + 2) * (degree + 3)) // 6 * 3 < count + 4:
        degree += 1
    fields = _monomial_fields(unit_verts, degree)  # (V, M)
    m = fields.shape[1]
    coeffs = rng.standard_normal((m, 3, count))
    raw = np.einsum("vm,mct->vct", fields, coeffs).reshape(3 * v, count)
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    return q.reshape(v, 3, count)


def build_basis(seed: int, dims: dict[str, int], mesh_level: int) -> MorphableBasis:
    """Deterministically generate a morphable basis.

    ``dims`` carries the identity/expression/reflectance dimensions under the
    keys A, B, D.  Landmark vertices are farthest-point sampled on the
    forward-facing (+z) hemisphere.
    """
    if not (1 <= mesh_level <= 4):
        raise ConfigurationError(f"mesh level must be in [1, 4], got {mesh_level}")
    dim_a, dim_b, dim_d = int(dims["A"]), int(dims["B"]), int(dims["D"])
    if min(dim_a, dim_b, dim_d) <= 0:
        raise ConfigurationError("basis dims must be positive")

    unit_verts, faces = icosphere(mesh_level)
    v = unit_verts.shape[0]
    ss = np.random.SeedSequence([int(seed), 0x6D6F7270])
    r_geo, r_exp, r_alb, r_ref = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(4)]

    bump = np.zeros(v)
    for direction, width, height in MEAN_FEATURES:
        d = np.asarray(direction) / np.linalg.norm(direction)
        angle = np.arccos(np.clip(unit_verts @ d, -1.0, 1.0))
        bump += height * np.exp(-((angle / width) ** 2))
    mean_shape = unit_verts * np.asarray(MEAN_AXES) + unit_verts * bump[:, None]

    geometry = _smooth_orthonormal_basis(r_geo, unit_verts, dim_a)
    expression = _smooth_orthonormal_basis(r_exp, unit_verts, dim_b)
    reflectance = _smooth_orthonormal_basis(r_ref, unit_verts, dim_d)

    # Albedo: skin-like tone, smooth seeded mottling, plus the fixed sharp
    # feature marks that make pose photometrically observable.
    fields = _monomial_fields(unit_verts, 3)
    alb_coeff = r_alb.standard_normal((fields.shape[1], 3)) / np.sqrt(fields.shape[1])
    mottle = fields @ alb_coeff
    mottle = 0.30 * mottle / max(np.abs(mottle).max(), 1e-9)
    albedo = np.array([0.74, 0.56, 0.46]) + mottle
    for direction, width, color in ALBEDO_MARKS:
        d = np.asarray(direction) / np.linalg.norm(direction)
        angle = np.arccos(np.clip(unit_verts @ d, -1.0, 1.0))
        albedo += np.outer(np.exp(-((angle / width) ** 2)), np.asarray(color))
    albedo = np.clip(albedo, 0.05, 0.95)

    forward = np.nonzero(unit_verts[:, 2] > 0.15)[0]
    landmark_idx = farthest_point_sample(unit_verts, LANDMARK_COUNT, forward)

    return MorphableBasis(
        mean_shape=as_tensor(mean_shape),
        geometry_basis=as_tensor(geometry),
        expression_basis=as_tensor(expression),
        mean_albedo=as_tensor(albedo),
        reflectance_basis=as_tensor(reflectance),
        faces=faces,
        landmark_indices=np.sort(landmark_idx),
        seed=int(seed),
        mesh_level=int(mesh_level),
    )


def rotation_matrix(phi: torch.Tensor) -> torch.Tensor:
    """Intrinsic X(pitch)-Y(yaw)-Z(roll) rotation, R = Rx @ Ry @ Rz."""
    pitch, yaw, roll = phi[0], phi[1], phi[2]
    one = torch.ones((), dtype=phi.dtype)
    zero = torch.zeros((), dtype=phi.dtype)
    cx, sx = torch.cos(pitch), torch.sin(pitch)
    cy, sy = torch.cos(yaw), torch.sin(yaw)
    cz, sz = torch.cos(roll), torch.sin(roll)
    rx = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    rz = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    return rx @ ry @ rz


def _theta_values(basis: MorphableBasis, theta) -> torch.Tensor:
    if isinstance(theta, FaceParams):
        if theta.layout != basis.layout:
            raise ContractError("parameter layout does not match basis dims")
        return theta.values
    t = as_tensor(theta)
    if t.numel() != basis.layout.total:
        raise ContractError(
            f"parameter vector must have {basis.layout.total} entries, got {t.numel()}"
        )
    return t


def assemble_geometry(basis: MorphableBasis, theta) -> tuple[torch.Tensor, torch.Tensor]:
    """Posed vertex positions and unit area-weighted vertex normals."""
    layout = basis.layout
    values = _theta_values(basis, theta)
    alpha = values[layout.alpha]
    beta = values[layout.beta]
    phi = values[layout.phi]
    rho = values[layout.rho]

    shape = (
        basis.mean_shape
        + torch.einsum("vca,a->vc", basis.geometry_basis, alpha)
        + torch.einsum("vcb,b->vc", basis.expression_basis, beta)
    )
    rot = rotation_matrix(phi)
    positions = shape @ rot.T + rho

    tri = positions[torch.from_numpy(basis.faces)]
    face_n = torch.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0], dim=1)
    normals = torch.zeros_like(positions)
    for corner in range(3):
        normals = normals.index_add(0, torch.from_numpy(basis.faces[:, corner]), face_n)
    normals = normals / torch.linalg.norm(normals, dim=1, keepdim=True).clamp_min(1e-12)
    return positions, normals


def shade_sh(
    normals: torch.Tensor,
    albedo: torch.Tensor,
    gamma: torch.Tensor,
    clamp: bool = True,
) -> torch.Tensor:
    """Per-vertex Lambertian RGB radiance under 9-band SH illumination.

    ``gamma`` is the 27-vector of per-band, per-channel coefficients; the
    irradiance convolution constants are folded in, so a pure band-0 light g
    yields ``albedo * g * 0.282095 * pi``.
    """
    gamma = as_tensor(gamma)
    if gamma.numel() != 27:
        raise ContractError(f"gamma must have 27 entries, got {gamma.numel()}")
    norms = torch.linalg.norm(normals.detach(), dim=1)
    if bool((torch.abs(norms - 1.0) > 1e-5).any()):
        raise ContractError("normals must be unit length")

    x, y, z = normals[:, 0], normals[:, 1], normals[:, 2]
    basis = torch.stack(
        [
            torch.ones_like(x), y, z, x,
            x * y, y * z, 3.0 * z * z - 1.0, x * z, x * x - y * y,
        ],
        dim=1,
    )
    weights = torch.tensor(
        [s * a for s, a in zip(SH_SCALE, SH_CONV)], dtype=normals.dtype
    )
    irradiance = (basis * weights) @ gamma.reshape(9, 3)
    radiance = albedo * irradiance
    return radiance.clamp_min(0.0) if clamp else radiance


def project(camera: CameraModel, positions: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Perspective projection to pixel coordinates plus view depth."""
    depth = camera.face_distance - positions[:, 2]
    if bool((depth.detach() <= 1e-3).any()):
        raise DegenerateRenderError("geometry reaches behind the camera")
    cx, cy = camera.principal_point
    u = cx + camera.focal_length * positions[:, 0] / depth
    v = cy - camera.focal_length * positions[:, 1] / depth
    return torch.stack([u, v], dim=1), depth


def _vertex_colors(basis: MorphableBasis, values: torch.Tensor, normals, clamp: bool):
    layout = basis.layout
    albedo = basis.mean_albedo + torch.einsum(
        "vcd,d->vc", basis.reflectance_basis, values[layout.delta]
    )
    return shade_sh(normals, albedo, values[layout.gamma], clamp=clamp)


def render(
    basis: MorphableBasis,
    camera: CameraModel,
    theta,
    frozen_assignment: np.ndarray | None = None,
    unclamped: bool = False,
) -> RasterImage:
    """Rasterize the posed, shaded face; the mask marks covered pixels.

    Differentiable with respect to every parameter component, with triangle
    visibility held constant per evaluation.  Passing ``frozen_assignment``
    (from :func:`triangle_assignment`) re-evaluates the image on a fixed
    visibility map, which is the function the analytic gradient differentiates.
    """
    values = _theta_values(basis, theta)
    positions, normals = assemble_geometry(basis, values)
    colors = _vertex_colors(basis, values, normals, clamp=not unclamped)
    xy, depth = project(camera, positions)

    if frozen_assignment is None:
        assignment = _assignment(basis, camera, xy, depth, normals, positions)
    else:
        assignment = frozen_assignment
    if not (assignment >= 0).any():
        raise DegenerateRenderError("face projects entirely outside the image")

    image, mask = interpolate(xy, colors, basis.faces, assignment)
    if not unclamped:
        image = image.clamp(0.0, 1.0)
    return RasterImage(image, mask)


def triangle_assignment(basis: MorphableBasis, camera: CameraModel, theta) -> np.ndarray:
    """The per-pixel visibility map ``render`` would use for ``theta``."""
    values = _theta_values(basis, theta)
    positions, normals = assemble_geometry(basis, values)
    xy, depth = project(camera, positions)
    return _assignment(basis, camera, xy, depth, normals, positions)


def _assignment(basis, camera, xy, depth, normals, positions) -> np.ndarray:
    cam_pos = np.array([0.0, 0.0, camera.face_distance])
    pos_np = positions.detach().numpy()
    nrm_np = normals.detach().numpy()
    tri_centers = pos_np[basis.faces].mean(axis=1)
    tri_normals = nrm_np[basis.faces].mean(axis=1)
    front = np.einsum("ij,ij->i", tri_normals, cam_pos - tri_centers) > 0.0
    h, w = camera.image_size
    return assign_triangles(
        xy.detach().numpy(), depth.detach().numpy(), basis.faces, h, w, front
    )


def landmarks(basis: MorphableBasis, camera: CameraModel, theta) -> LandmarkSet:
    """The 66 landmark vertices projected to pixel coordinates."""
    values = _theta_values(basis, theta)
    positions, _ = assemble_geometry(basis, values)
    xy, _ = project(camera, positions)
    return LandmarkSet(xy[torch.from_numpy(basis.landmark_indices)])
