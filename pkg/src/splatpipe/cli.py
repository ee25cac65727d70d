"""Command-line surface tying the pipeline stages together.

Subcommands: reconstruct, edit, extract-mesh, refine-texture, render,
metrics, pipeline. Exit status 0 on success, 1 on validation/usage
errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import io as spio
from .core import ImageBuffer, Scene
from .edit import EditConfig, IdentityCodec, OracleError, builtin_oracles, edit
from .mesh import (
    TexturedMesh,
    backproject_colors,
    builtin_refiners,
    extract_surface,
    postprocess_mesh,
    refine_texture,
    unwrap_uv,
)
from .metrics import MetricReport, evaluate_edit, toy_embedder
from .optim import reconstruct
from .raster import render


def _parse_oracle_spec(spec: str):
    """`name[:params]` -> (name, params dict).

    Params are comma-separated `key=value` pairs; a bare leading token is
    the oracle's main parameter (e.g. `hue_shift:red`). `remote:URL`
    treats everything after the first colon as the endpoint URL.
    """
    if ":" not in spec:
        return spec, {}
    name, rest = spec.split(":", 1)
    if name == "remote":
        return name, {"url": rest}
    params: dict = {}
    main_keys = {"hue_shift": "target", "brightness": "delta", "region_darken": "factor"}
    for token in rest.split(","):
        if not token:
            continue
        if "=" in token:
            key, value = token.split("=", 1)
            params[key] = value
        elif name in main_keys:
            params[main_keys[name]] = token
        else:
            raise ValueError(f"cannot interpret oracle parameter {token!r}")
    return name, params


def make_oracle(spec: str):
    name, params = _parse_oracle_spec(spec)
    return builtin_oracles(name, params)


def make_embedder(spec: str):
    if spec == "toy":
        return toy_embedder()
    if spec.startswith("remote:"):
        from .remote import RemoteEmbeddingProvider

        return RemoteEmbeddingProvider(spec[len("remote:") :])
    raise ValueError(f"unknown embedder {spec!r} (expected 'toy' or 'remote:URL')")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatpipe",
        description="Gaussian-splat reconstruction, text-driven editing, and mesh export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scene=False, needs_input=False, prompt=False):
        if needs_input:
            p.add_argument("--input", required=True, help="input file (OBJ mesh)")
        if scene:
            p.add_argument("--scene", required=True, help="splat scene PLY")
        if prompt:
            p.add_argument("--prompt", default="", help="edit prompt")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="global random seed")
        p.add_argument("--steps", type=int, help="iteration count for this stage")
        p.add_argument(
            "--print-config",
            action="store_true",
            help="print the resolved configuration and exit",
        )

    def edit_flags(p):
        p.add_argument("--oracle", help="edit oracle: name[:params] or remote:URL")
        p.add_argument("--tmax", type=float, help="upper timestep bound (default 0.98)")
        p.add_argument("--tmin", type=float, help="lower timestep bound (default 0.02)")
        p.add_argument("--st", type=float, help="text guidance scale (default 100)")
        p.add_argument("--si", type=float, help="image guidance scale (default 10)")

    p = sub.add_parser("reconstruct", help="fit a splat scene to mesh renders")
    common(p, needs_input=True)

    p = sub.add_parser("edit", help="apply a text-conditioned edit to a scene")
    common(p, scene=True, prompt=True)
    edit_flags(p)

    p = sub.add_parser("extract-mesh", help="extract a textured mesh from a scene")
    common(p, scene=True)

    p = sub.add_parser("refine-texture", help="polish a baked mesh texture")
    common(p, needs_input=True, prompt=False)
    p.add_argument("--refine-prompt", default="", help="texture refinement prompt")
    p.add_argument("--refiner", help="refinement oracle: name[:params]")

    p = sub.add_parser("render", help="render PNG turntable frames of a scene")
    common(p, scene=True)
    p.add_argument("--frames", type=int, default=20, help="number of frames")

    p = sub.add_parser("metrics", help="embedding-space metrics for an edit")
    common(p, scene=True, prompt=True)
    p.add_argument("--edited", required=True, help="edited scene PLY")
    p.add_argument("--source-prompt", default="an object", help="source description")
    p.add_argument("--embedder", help="embedding provider: toy or remote:URL")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings")

    p = sub.add_parser("pipeline", help="reconstruct, edit, extract, refine, report")
    common(p, needs_input=True, prompt=True)
    edit_flags(p)
    p.add_argument("--refine-prompt", default="", help="texture refinement prompt")
    p.add_argument("--refiner", help="refinement oracle: name[:params]")
    p.add_argument("--embedder", help="embedding provider: toy or remote:URL")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings")
    return parser


def _resolve_config(args) -> spio.PipelineConfig:
    """Defaults <- config file <- explicit CLI flags."""
    if getattr(args, "config", None):
        cfg = spio.parse_config(args.config)
    else:
        cfg = spio.PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.recon.seed = args.seed
        cfg.edit.seed = args.seed
    if getattr(args, "steps", None) is not None:
        if args.command in ("reconstruct", "pipeline"):
            cfg.recon.n_steps = args.steps
        if args.command == "edit":
            cfg.edit.n_edit_steps = args.steps
        if args.command == "refine-texture":
            cfg.refine_steps = args.steps
    for flag, attr in (("tmax", "t_max"), ("tmin", "t_min"), ("st", "s_text"), ("si", "s_image")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg.edit, attr, value)
    if getattr(args, "oracle", None):
        cfg.oracle = args.oracle
    if getattr(args, "refiner", None):
        cfg.refiner = args.refiner
    if getattr(args, "embedder", None):
        cfg.embedder = args.embedder
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    cfg.recon.__post_init__()
    cfg.edit.__post_init__()
    return cfg


def _extract_textured(scene: Scene, cfg: spio.PipelineConfig) -> TexturedMesh:
    mesh = extract_surface(scene, threshold=cfg.mesh_threshold)
    if mesh.is_empty:
        raise RuntimeError("surface extraction produced an empty mesh")
    mesh = postprocess_mesh(mesh, target_faces=cfg.mesh_target_faces)
    textured = unwrap_uv(mesh, texture_size=cfg.texture_size)
    textured.texture = backproject_colors(
        textured, scene, cfg.rig(), texture_size=cfg.texture_size
    )
    return textured


def _render_views(scene: Scene, cfg: spio.PipelineConfig) -> list[ImageBuffer]:
    return [render(scene, cam) for cam in cfg.rig().cameras]


def _run(args) -> int:
    cfg = _resolve_config(args)
    if getattr(args, "print_config", False):
        sys.stdout.write(spio.serialize_config(cfg))
        return 0
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    timings: dict[str, float] = {}

    def staged(name, fn):
        start = time.perf_counter()
        result = fn()
        timings[name] = time.perf_counter() - start
        return result

    if args.command == "reconstruct":
        targets = spio.load_mesh_input(args.input, image_size=cfg.image_size)
        scene = staged("reconstruct", lambda: reconstruct(targets, cfg.recon))
        spio.save_scene(scene, os.path.join(out_dir, "scene.ply"))
        return 0

    if args.command == "edit":
        scene = spio.load_scene(args.scene)
        oracle = make_oracle(cfg.oracle)
        edited = staged(
            "edit",
            lambda: edit(scene, cfg.rig(), oracle, IdentityCodec(), args.prompt, cfg.edit),
        )
        spio.save_scene(edited, os.path.join(out_dir, "edited.ply"))
        return 0

    if args.command == "extract-mesh":
        scene = spio.load_scene(args.scene)
        textured = staged("extract_mesh", lambda: _extract_textured(scene, cfg))
        spio.save_mesh(textured, os.path.join(out_dir, "mesh.obj"))
        return 0

    if args.command == "refine-texture":
        verts, faces, uvs, _, _, tex_file = spio.load_obj(args.input)
        if uvs is None or tex_file is None:
            raise ValueError("refine-texture needs a textured OBJ (UVs + map_Kd)")
        if len(uvs) != len(verts):
            raise ValueError("refine-texture expects one UV per vertex")
        mesh = TexturedMesh(verts, faces, uvs=uvs, texture=spio.load_png(tex_file))
        refiner_name, refiner_params = _parse_oracle_spec(cfg.refiner)
        refiner = builtin_refiners(refiner_name, refiner_params)
        refined = staged(
            "refine_texture",
            lambda: refine_texture(
                mesh,
                refiner,
                args.refine_prompt,
                n_steps=cfg.refine_steps,
                t_start=cfg.refine_t_start,
                rig=cfg.rig(),
                seed=cfg.seed,
            ),
        )
        spio.save_mesh(refined, os.path.join(out_dir, "mesh.obj"))
        return 0

    if args.command == "render":
        scene = spio.load_scene(args.scene)
        if args.frames < 1:
            raise ValueError("--frames must be positive")
        rig = spio.build_camera_rig(
            args.frames,
            [cfg.rig_elevations[0]],
            cfg.rig_radius,
            cfg.fov_y,
            (cfg.image_size, cfg.image_size),
        )
        for i, cam in enumerate(rig.cameras):
            spio.save_png(render(scene, cam), os.path.join(out_dir, f"frame_{i:03d}.png"))
        return 0

    if args.command == "metrics":
        scene = spio.load_scene(args.scene)
        edited_scene = spio.load_scene(args.edited)
        provider = make_embedder(cfg.embedder)
        originals = staged("render_original", lambda: _render_views(scene, cfg))
        edited_views = staged("render_edited", lambda: _render_views(edited_scene, cfg))
        report = staged(
            "metrics",
            lambda: evaluate_edit(
                originals, edited_views, args.source_prompt, args.prompt, args.prompt, provider
            ),
        )
        report.timings_s = timings
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(report.to_json(include_timings=args.timings) + "\n")
        return 0

    if args.command == "pipeline":
        targets = spio.load_mesh_input(args.input, image_size=cfg.image_size)
        scene = staged("reconstruct", lambda: reconstruct(targets, cfg.recon))
        spio.save_scene(scene, os.path.join(out_dir, "scene.ply"))

        oracle = make_oracle(cfg.oracle)
        edited_scene = staged(
            "edit",
            lambda: edit(scene, cfg.rig(), oracle, IdentityCodec(), args.prompt, cfg.edit),
        )
        spio.save_scene(edited_scene, os.path.join(out_dir, "edited.ply"))

        textured = staged("extract_mesh", lambda: _extract_textured(edited_scene, cfg))
        refiner_name, refiner_params = _parse_oracle_spec(cfg.refiner)
        refiner = builtin_refiners(refiner_name, refiner_params)
        textured = staged(
            "refine_texture",
            lambda: refine_texture(
                textured,
                refiner,
                args.refine_prompt or args.prompt,
                n_steps=cfg.refine_steps,
                t_start=cfg.refine_t_start,
                rig=cfg.rig(),
                seed=cfg.seed,
            ),
        )
        spio.save_mesh(textured, os.path.join(out_dir, "mesh.obj"))

        provider = make_embedder(cfg.embedder)
        originals = staged("render_original", lambda: _render_views(scene, cfg))
        edited_views = staged("render_edited", lambda: _render_views(edited_scene, cfg))
        report = staged(
            "metrics",
            lambda: evaluate_edit(
                originals, edited_views, "an object", args.prompt, args.prompt, provider
            ),
        )
        report.timings_s = timings
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(report.to_json(include_timings=args.timings) + "\n")
        return 0

    raise ValueError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help; fold usage
        # errors into the validation status.
        return 0 if exc.code in (0, None) else 1
    try:
        return _run(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OracleError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
