"""Avatar state: template + shape + attribute maps + derived anchors and weight field.

Instances are treated as immutable snapshots: edits return a new Avatar (or
new maps), so renders running concurrently with edits always see a consistent
state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .skinning import WeightVolume, build_weight_volume, query_weights
from .template import BodyTemplate, apply_shape
from .uvgauss import AnchorTable, GaussianAttributeMaps, GaussianSet, build_anchor_table, decode_gaussians, default_maps

DEFAULT_UV_RESOLUTION = 256
DEFAULT_VOLUME_RESOLUTION = 64


@dataclass
class Avatar:
    template: BodyTemplate
    beta: np.ndarray
    maps: GaussianAttributeMaps
    shaped_vertices: np.ndarray
    anchors: AnchorTable
    volume: WeightVolume
    background: np.ndarray

    @classmethod
    def build(cls, template: BodyTemplate, beta=None, maps: GaussianAttributeMaps | None = None,
              uv_resolution: int | tuple[int, int] = DEFAULT_UV_RESOLUTION,
              volume_resolution: int | tuple[int, int, int] = DEFAULT_VOLUME_RESOLUTION,
              background=(0.0, 0.0, 0.0), base_color=(0.5, 0.5, 0.5)) -> "Avatar":
        if beta is None:
            beta = np.zeros(template.shape_dim)
        beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        if isinstance(uv_resolution, int):
            uv_resolution = (uv_resolution, uv_resolution)
        if isinstance(volume_resolution, int):
            volume_resolution = (volume_resolution,) * 3
        shaped = apply_shape(template, beta)
        anchors = build_anchor_table(template, shaped, uv_resolution)
        volume = build_weight_volume(template, shaped, volume_resolution)
        if maps is None:
            maps = default_maps(anchors, base_color)
        return cls(template=template, beta=beta, maps=maps, shaped_vertices=shaped,
                   anchors=anchors, volume=volume,
                   background=np.asarray(background, dtype=np.float64).reshape(3))

    def with_maps(self, maps: GaussianAttributeMaps) -> "Avatar":
        return replace(self, maps=maps)

    def with_shape(self, beta) -> "Avatar":
        """Re-anchor on the newly shaped surface; attribute maps ride along unchanged."""
        beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        shaped = apply_shape(self.template, beta)
        anchors = build_anchor_table(self.template, shaped, (self.anchors.width, self.anchors.height))
        volume = build_weight_volume(self.template, shaped, self.volume.resolution)
        return replace(self, beta=beta, shaped_vertices=shaped, anchors=anchors, volume=volume)

    def canonical_gaussians(self) -> GaussianSet:
        """Decode the maps and attach skinning weights (volume for body, anchors for hand/face)."""
        decoded = decode_gaussians(self.anchors, self.maps)
        return query_weights(self.volume, self.anchors, decoded)
