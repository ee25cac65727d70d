"""Mesh value types shared across the pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ImageBuffer


@dataclass
class Mesh:
    """Triangle mesh: vertices (V, 3) float64, faces (F, 3) int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        if len(self.faces) and self.faces.min() < 0:
            raise ValueError("negative face index")

    def __len__(self) -> int:
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(norms, 1e-30)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy())


@dataclass
class TexturedMesh(Mesh):
    """Mesh with per-vertex UVs in [0, 1]^2 and a texture image.

    `chart_ids` records which atlas chart each face belongs to.
    """

    uvs: np.ndarray = field(default=None)
    texture: ImageBuffer | None = None
    chart_ids: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.uvs is None:
            raise ValueError("textured mesh requires per-vertex UVs")
        self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        if len(self.uvs) != len(self.vertices):
            raise ValueError("one UV per vertex required")
        if self.chart_ids is not None:
            self.chart_ids = np.asarray(self.chart_ids, dtype=np.int64).reshape(-1)

    def copy(self) -> "TexturedMesh":
        return TexturedMesh(
            self.vertices.copy(),
            self.faces.copy(),
            uvs=self.uvs.copy(),
            texture=ImageBuffer(self.texture.data.copy()) if self.texture else None,
            chart_ids=None if self.chart_ids is None else self.chart_ids.copy(),
        )
