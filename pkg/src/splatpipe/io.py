"""File formats: splat PLY, OBJ/MTL/PNG meshes, PNG renders, and configs.

The splat PLY layout follows the common Gaussian-splatting interchange
convention: binary little-endian, one vertex element with float32
properties x,y,z, opacity (logit), scale_0..2 (log), rot_0..3 (wxyz),
f_dc_0..2, and optional f_rest_* for SH degrees >= 1 (channel-major:
f_rest_[c*(K-1)+j] holds coefficient j+1 of channel c).
"""

from __future__ import annotations

import configparser
import io as _io
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .cameras import Camera, CameraRig, build_camera_rig
from .core import ImageBuffer, Scene
from .edit import EditConfig
from .mesh.types import Mesh, TexturedMesh
from .optim import ReconConfig

PLY_BASE_PROPERTIES = (
    "x",
    "y",
    "z",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
    "f_dc_0",
    "f_dc_1",
    "f_dc_2",
)

DEFAULT_RIG_RINGS = 10
DEFAULT_RIG_ELEVATIONS = (15.0, -15.0)
DEFAULT_RIG_RADIUS = 2.5
DEFAULT_FOV_Y = 49.0
DEFAULT_IMAGE_SIZE = 128


def default_rig(image_size: int = DEFAULT_IMAGE_SIZE) -> CameraRig:
    """The standard 20-camera orbit used across the pipeline."""
    return build_camera_rig(
        DEFAULT_RIG_RINGS,
        list(DEFAULT_RIG_ELEVATIONS),
        DEFAULT_RIG_RADIUS,
        DEFAULT_FOV_Y,
        (image_size, image_size),
    )


# ---------------------------------------------------------------------------
# Splat PLY


def save_scene(scene: Scene, path: str) -> None:
    n = len(scene)
    k = scene.sh.shape[2]
    props = list(PLY_BASE_PROPERTIES) + [f"f_rest_{i}" for i in range(3 * (k - 1))]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")

    data = np.empty((n, len(props)), dtype="<f4")
    data[:, 0:3] = scene.positions
    data[:, 3] = scene.opacity_logits
    data[:, 4:7] = scene.log_scales
    data[:, 7:11] = scene.rotations
    data[:, 11:14] = scene.sh[:, :, 0]
    if k > 1:
        data[:, 14:] = scene.sh[:, :, 1:].reshape(n, 3 * (k - 1))
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def load_scene(path: str) -> Scene:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ValueError("malformed PLY: missing end_header")
    header_lines = blob[:end].decode("ascii", "replace").splitlines()
    if not header_lines or header_lines[0].strip() != "ply":
        raise ValueError("malformed PLY: missing 'ply' magic")

    n = None
    fmt = None
    props: list[str] = []
    for line in header_lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element" and parts[1] == "vertex":
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise ValueError(f"unsupported property type {parts[1]!r}")
            props.append(parts[2])
    if fmt != "binary_little_endian":
        raise ValueError(f"unsupported PLY format {fmt!r}")
    if n is None:
        raise ValueError("malformed PLY: no vertex element")
    for required in PLY_BASE_PROPERTIES:
        if required not in props:
            raise ValueError(f"missing property {required}")

    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest % 3:
        raise ValueError("f_rest property count must be a multiple of 3")
    k = 1 + n_rest // 3
    degree = int(round(np.sqrt(k))) - 1
    if (degree + 1) ** 2 != k or degree > 3:
        raise ValueError(f"unsupported SH coefficient count {k}")

    payload = blob[end + len(b"end_header\n") :]
    expected = n * len(props) * 4
    if len(payload) < expected:
        raise ValueError("truncated PLY payload")
    table = np.frombuffer(payload, dtype="<f4", count=n * len(props)).reshape(
        n, len(props)
    )
    if not np.all(np.isfinite(table)):
        raise ValueError("PLY payload contains non-finite values")
    col = {p: i for i, p in enumerate(props)}

    def take(names):
        return table[:, [col[p] for p in names]].astype(np.float64)

    sh = np.zeros((n, 3, k))
    sh[:, :, 0] = take(["f_dc_0", "f_dc_1", "f_dc_2"])
    if k > 1:
        rest = take([f"f_rest_{i}" for i in range(3 * (k - 1))])
        sh[:, :, 1:] = rest.reshape(n, 3, k - 1)
    return Scene(
        positions=take(["x", "y", "z"]),
        rotations=take(["rot_0", "rot_1", "rot_2", "rot_3"]),
        log_scales=take(["scale_0", "scale_1", "scale_2"]),
        opacity_logits=take(["opacity"])[:, 0],
        sh=sh,
        sh_degree=degree,
    )


# ---------------------------------------------------------------------------
# Images


def save_png(image: ImageBuffer, path: str) -> None:
    """8-bit PNG (RGB or RGBA)."""
    arr = np.clip(np.round(image.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGBA" if image.channels == 4 else "RGB").save(path)


def load_png(path: str) -> ImageBuffer:
    img = Image.open(path)
    if img.mode not in ("RGB", "RGBA"):
        img = img.convert("RGB")
    return ImageBuffer(np.asarray(img, dtype=np.float64) / 255.0)


# ---------------------------------------------------------------------------
# OBJ meshes


def save_mesh(mesh: TexturedMesh, path: str) -> None:
    """OBJ + MTL + PNG texture (v/vt faces, y-up right-handed)."""
    base, _ = os.path.splitext(path)
    name = os.path.basename(base)
    mtl_path = base + ".mtl"
    tex_path = base + ".png"

    lines = [f"mtllib {name}.mtl", "usemtl material0"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for uv in mesh.uvs:
        lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
    for f in mesh.faces:
        a, b, c = f + 1
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    with open(mtl_path, "w") as fh:
        fh.write(
            "newmtl material0\nKd 1 1 1\nKa 0 0 0\nKs 0 0 0\n"
            f"map_Kd {name}.png\n"
        )
    if mesh.texture is None:
        raise ValueError("textured mesh has no texture image")
    save_png(mesh.texture, tex_path)


def load_obj(path: str):
    """Parse an OBJ file.

    Returns (vertices, faces, uvs or None, face_uv_indices or None,
    vertex_colors or None, texture_file or None).
    """
    verts, uvs, colors = [], [], []
    faces, face_uvs = [], []
    mtllib = None
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    colors.append([float(x) for x in parts[4:7]])
            elif parts[0] == "vt":
                uvs.append([float(parts[1]), float(parts[2])])
            elif parts[0] == "mtllib":
                mtllib = parts[1]
            elif parts[0] == "f":
                refs = [p.split("/") for p in parts[1:]]
                for i in range(1, len(refs) - 1):  # fan triangulation
                    tri = [refs[0], refs[i], refs[i + 1]]
                    faces.append([int(r[0]) - 1 for r in tri])
                    if all(len(r) > 1 and r[1] for r in tri):
                        face_uvs.append([int(r[1]) - 1 for r in tri])

    texture_file = None
    if mtllib:
        mtl_path = os.path.join(base_dir, mtllib)
        if not os.path.exists(mtl_path):
            raise FileNotFoundError(f"referenced material file not found: {mtllib}")
        with open(mtl_path) as fh:
            for line in fh:
                parts = line.split()
                if parts and parts[0] == "map_Kd":
                    texture_file = os.path.join(base_dir, parts[1])
                    if not os.path.exists(texture_file):
                        raise FileNotFoundError(
                            f"referenced texture not found: {parts[1]}"
                        )
    if not verts or not faces:
        raise ValueError(f"no usable geometry in {path}")
    return (
        np.asarray(verts, dtype=np.float64),
        np.asarray(faces, dtype=np.int64),
        np.asarray(uvs, dtype=np.float64) if uvs else None,
        np.asarray(face_uvs, dtype=np.int64) if face_uvs else None,
        np.asarray(colors, dtype=np.float64) if colors else None,
        texture_file,
    )


def load_mesh_input(path: str, image_size: int = DEFAULT_IMAGE_SIZE):
    """Ground-truth views from a textured or vertex-colored OBJ.

    The mesh is normalized to the unit sphere and rasterized from every
    camera of the standard rig over a white background.
    """
    verts, faces, uvs, face_uvs, colors, texture_file = load_obj(path)

    center = 0.5 * (verts.max(axis=0) + verts.min(axis=0))
    verts = verts - center
    radius = np.linalg.norm(verts, axis=1).max()
    verts /= max(radius, 1e-12)

    from .mesh.raster import render_mesh

    rig = default_rig(image_size)
    if uvs is not None and face_uvs is not None and texture_file is not None:
        # Re-index so each vertex carries one UV (duplicate where needed).
        key_map: dict = {}
        new_verts, new_uvs, new_faces = [], [], []
        for tri_v, tri_t in zip(faces, face_uvs):
            tri = []
            for vi, ti in zip(tri_v, tri_t):
                key = (int(vi), int(ti))
                if key not in key_map:
                    key_map[key] = len(new_verts)
                    new_verts.append(verts[vi])
                    new_uvs.append(uvs[ti])
                tri.append(key_map[key])
            new_faces.append(tri)
        mesh = TexturedMesh(
            np.asarray(new_verts),
            np.asarray(new_faces),
            uvs=np.asarray(new_uvs),
            texture=load_png(texture_file),
        )
        return [(cam, render_mesh(mesh, cam)) for cam in rig.cameras]

    mesh = Mesh(verts, faces)
    vertex_colors = colors if colors is not None else np.full((len(verts), 3), 0.5)
    return [
        (cam, render_mesh(mesh, cam, vertex_colors=vertex_colors))
        for cam in rig.cameras
    ]


# ---------------------------------------------------------------------------
# Pipeline configuration


@dataclass
class PipelineConfig:
    """Everything a full pipeline run needs, file- and flag-configurable."""

    recon: ReconConfig = field(default_factory=ReconConfig)
    edit: EditConfig = field(default_factory=EditConfig)
    mesh_threshold: float = 1.0
    mesh_target_faces: int = 5000
    texture_size: int = 512
    refine_steps: int = 100
    refine_t_start: float = 0.4
    rig_n_per_ring: int = DEFAULT_RIG_RINGS
    rig_elevations: tuple = DEFAULT_RIG_ELEVATIONS
    rig_radius: float = DEFAULT_RIG_RADIUS
    fov_y: float = DEFAULT_FOV_Y
    image_size: int = DEFAULT_IMAGE_SIZE
    oracle: str = "identity"
    refiner: str = "identity"
    embedder: str = "toy"
    seed: int = 0
    out_dir: str = "out"

    def rig(self) -> CameraRig:
        return build_camera_rig(
            self.rig_n_per_ring,
            list(self.rig_elevations),
            self.rig_radius,
            self.fov_y,
            (self.image_size, self.image_size),
        )


_SECTION_FIELDS = {
    "pipeline": {
        "mesh_threshold": float,
        "mesh_target_faces": int,
        "texture_size": int,
        "refine_steps": int,
        "refine_t_start": float,
        "oracle": str,
        "refiner": str,
        "embedder": str,
        "seed": int,
        "out_dir": str,
    },
    "rig": {
        "rig_n_per_ring": int,
        "rig_elevations": "floats",
        "rig_radius": float,
        "fov_y": float,
        "image_size": int,
    },
    "reconstruct": {
        "n_initial": int,
        "n_steps": int,
        "densify_interval": int,
        "prune_opacity": float,
        "split_scale_factor": float,
        "densify_grad_threshold": float,
        "loss_lambda": float,
        "sh_degree": int,
        "seed": int,
    },
    "edit": {
        "n_edit_steps": int,
        "t_min": float,
        "t_max": float,
        "s_text": float,
        "s_image": float,
        "convergence_window": int,
        "convergence_threshold": float,
        "oracle_retries": int,
        "weight_mode": str,
        "seed": int,
    },
}


def parse_config(path_or_text: str, from_text: bool = False) -> PipelineConfig:
    """Read an INI-style config; unknown sections/keys are rejected by name."""
    parser = configparser.ConfigParser()
    if from_text:
        parser.read_string(path_or_text)
    else:
        with open(path_or_text) as fh:
            parser.read_file(fh)

    cfg = PipelineConfig()
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ValueError(f"unknown config section [{section}]")
        spec = _SECTION_FIELDS[section]
        for key, raw in parser.items(section):
            if key not in spec:
                raise ValueError(f"unknown config key '{key}' in section [{section}]")
            conv = spec[key]
            value = (
                tuple(float(x) for x in raw.split(","))
                if conv == "floats"
                else conv(raw)
            )
            if section == "reconstruct":
                setattr(cfg.recon, key, value)
            elif section == "edit":
                setattr(cfg.edit, key, value)
            else:
                setattr(cfg, key, value)
    cfg.recon.__post_init__()
    cfg.edit.__post_init__()
    return cfg


def serialize_config(cfg: PipelineConfig) -> str:
    """Canonical INI text; parse(serialize(cfg)) round-trips."""
    parser = configparser.ConfigParser()
    for section, spec in _SECTION_FIELDS.items():
        parser[section] = {}
        for key, conv in spec.items():
            if section == "reconstruct":
                value = getattr(cfg.recon, key)
            elif section == "edit":
                value = getattr(cfg.edit, key)
            else:
                value = getattr(cfg, key)
            if conv == "floats":
                parser[section][key] = ",".join(repr(float(v)) for v in value)
            else:
                parser[section][key] = repr(value) if isinstance(value, float) else str(value)
    out = _io.StringIO()
    parser.write(out)
    return out.getvalue()
