"""Aggregation of every seeded component into one working context.

A ``World`` carries the morphable basis, camera, generator, and feature nets
that all higher-level operations (fitting, energy, embedding, editing,
benchmarks, the service) share.  Everything is a pure function of
``(seed, dims, image size)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureNets
from .morphable import CameraModel, MorphableBasis, build_basis
from .toyworld import GeneratorConfig, build_generator
from .types import ParamLayout

DESK_DIMS = {"A": 8, "B": 6, "D": 8}
DESK_D_W = 32
DESK_LAYERS = 6
DESK_IMAGE = 64


@dataclass
class World:
    basis: MorphableBasis
    camera: CameraModel
    generator: GeneratorConfig
    features: FeatureNets
    seed: int

    @property
    def layout(self) -> ParamLayout:
        return self.basis.layout

    @property
    def image_size(self) -> tuple[int, int]:
        return self.camera.image_size

    @classmethod
    def build(
        cls,
        seed: int = 0,
        dims: dict[str, int] | None = None,
        mesh_level: int = 3,
        d_w: int = DESK_D_W,
        layers: int = DESK_LAYERS,
        image_size: int | tuple[int, int] = DESK_IMAGE,
        rig_mode: str = "exact",
        rig_eps: float = 0.05,
    ) -> "World":
        dims = dict(DESK_DIMS if dims is None else dims)
        if isinstance(image_size, int):
            image_size = (image_size, image_size)
        basis = build_basis(seed, dims, mesh_level)
        camera = CameraModel.default(image_size)
        generator = build_generator(
            seed,
            basis.layout,
            d_w=d_w,
            layers=layers,
            image_size=image_size,
            rig_mode=rig_mode,
            rig_eps=rig_eps,
        )
        features = FeatureNets.build(seed)
        return cls(basis=basis, camera=camera, generator=generator,
                   features=features, seed=int(seed))

    @classmethod
    def desk(cls, seed: int = 0, rig_mode: str = "exact", rig_eps: float = 0.05) -> "World":
        """The default desk-scale configuration every test runs at."""
        return cls.build(seed=seed, rig_mode=rig_mode, rig_eps=rig_eps)

    def rng(self, salt: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64([self.seed, salt]))
