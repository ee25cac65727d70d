"""Gaussian scene -> textured triangle mesh pipeline.

Stages: block-partitioned density field, Marching Cubes surface
extraction, decimation/smoothing/cleanup, planar-projection UV atlas,
multi-view color back-projection, and oracle-guided texture refinement.
"""

from .density import DensityGrid, build_density_grid, global_density, query_density
from .surface import connected_components, extract_surface, is_watertight
from .decimate import laplacian_smooth, postprocess_mesh, qem_decimate, remove_dust
from .types import Mesh, TexturedMesh
from .uv import unwrap_uv
from .raster import render_mesh
from .texture import (
    IdentityRefiner,
    RefineOracle,
    StylizeRefiner,
    backproject_colors,
    builtin_refiners,
    refine_texture,
    render_depth,
)

__all__ = [
    "DensityGrid",
    "IdentityRefiner",
    "Mesh",
    "RefineOracle",
    "StylizeRefiner",
    "TexturedMesh",
    "backproject_colors",
    "build_density_grid",
    "builtin_refiners",
    "global_density",
    "render_depth",
    "connected_components",
    "extract_surface",
    "is_watertight",
    "laplacian_smooth",
    "postprocess_mesh",
    "qem_decimate",
    "query_density",
    "refine_texture",
    "remove_dust",
    "render_mesh",
    "unwrap_uv",
]
