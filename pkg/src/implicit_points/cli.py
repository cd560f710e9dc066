"""Command-line entry point: genscene, render, bench, distill-env, tonemap, verify.

Every run writes ``manifest.json`` into its output directory holding the
resolved configuration, the code revision and all seeds. Wall-clock timings
go to separate CSV files; they are the only outputs that vary between runs.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import statistics
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import io as fio
from .envmap import (ConstantBackground, DistillConfig, SHBackground, distill_env, psnr,
                     random_directions, sample_env)
from .raster import rasterize
from .raster.tiled import MODES, SORTS
from .sampling import (DEFAULT_RING_CAPACITY, RingBuffer, global_extract, ring_assemble,
                       ring_push, sample_view)
from .scene import AppearanceOracle, FeatureImage
from .scenes import DEFAULT_CAMERAS, DEFAULT_RESOLUTION, KINDS, camera_ring, make_field
from .tonemap import ResponseCurve, tonemap_forward, tonemap_inverse

log = logging.getLogger("implicit_points")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SAMPLERS = ("resample", "ring", "global")
SUITES = ("gradcheck", "sampling", "tonemap", "envmap")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved options of one command; serialized verbatim into the manifest."""

    subcommand: str
    out: str = "out"
    seed: int = 0
    threads: int = 1
    # genscene
    kind: str = "boxes"
    resolution: int = DEFAULT_RESOLUTION
    cameras: int = DEFAULT_CAMERAS
    width: int = 128
    height: int = 96
    # render
    scene: Optional[str] = None
    trajectory: str = "ring"       # "ring" (scene cameras in order) or "static" (camera 0)
    frames: int = 8
    points: int = 1 << 16
    splat: str = "bilinear"
    sort: str = "two-stage"
    sampler: str = "resample"
    buffer: int = DEFAULT_RING_CAPACITY
    exponent: float = 2.0
    env: Optional[str] = None
    preview: str = "png"
    # bench
    bench_points: int = 1 << 18
    bench_width: int = 1920
    bench_height: int = 1080
    tiles_samples: int = 1_000_000
    repeats: int = 5
    # distill-env
    oracle: str = "sh"
    size: int = 256
    iters: int = 1000
    batch: int = 1 << 16
    lr_start: float = 0.01
    lr_end: float = 0.001
    optimizer: str = "adam"
    # tonemap
    input: Optional[str] = None
    output: Optional[str] = None
    direction: str = "forward"
    params: Optional[str] = None
    ev: float = 0.0
    # verify
    suites: List[str] = field(default_factory=lambda: list(SUITES))
    quick: bool = False

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise UsageError(msg)
        need(self.threads >= 1, "--threads must be >= 1")
        need(self.kind in KINDS, f"--kind must be one of {KINDS}")
        need(self.resolution >= 2 and self.cameras >= 1, "bad scene size")
        need(self.width >= 1 and self.height >= 1, "bad image size")
        need(self.splat in MODES, f"--splat must be one of {MODES}")
        need(self.sort in SORTS, f"--sort must be one of {SORTS}")
        need(self.sampler in SAMPLERS, f"--sampler must be one of {SAMPLERS}")
        need(self.trajectory in ("ring", "static"), "--trajectory must be ring or static")
        need(self.buffer >= 1, "--buffer must be >= 1")
        need(self.points >= 1 and self.frames >= 1, "--points and --frames must be >= 1")
        need(self.preview in ("png", "ppm", "none"), "--preview must be png, ppm or none")
        need(self.oracle in ("sh", "constant"), "--oracle must be sh or constant")
        need(self.size >= 1 and self.iters >= 1 and self.batch >= 1, "bad distillation sizes")
        need(self.optimizer in ("adam", "sgd"), "--optimizer must be adam or sgd")
        need(self.direction in ("forward", "inverse"), "--direction must be forward or inverse")
        need(all(s in SUITES for s in self.suites), f"suites must be drawn from {SUITES}")
        if self.subcommand == "render":
            need(self.scene is not None, "render needs --scene")
        if self.subcommand == "tonemap":
            need(self.input is not None and self.output is not None,
                 "tonemap needs --input and --output")
        return self


def git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                           text=True, cwd=Path(__file__).resolve().parent, timeout=10)
        if r.returncode == 0 and r.stdout.strip():
            return r.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"unknown (version {__version__})"


def write_manifest(out: Path, cfg: RunConfig, seeds: dict, outputs: dict) -> None:
    doc = {"tool": "implicit-points", "version": __version__, "git": git_describe(),
           "config": dataclasses.asdict(cfg), "seeds": seeds, "outputs": outputs}
    (out / "manifest.json").write_text(fio.dumps_json(doc) + "\n")


def sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def frame_seed(seed: int, frame: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(frame)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_genscene(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fld = make_field(cfg.kind, cfg.seed, cfg.resolution)
    cams = camera_ring(cfg.kind, cfg.cameras, cfg.width, cfg.height)
    meta = {"kind": cfg.kind, "seed": cfg.seed,
            "oracle": {"type": "sinusoid", "seed": cfg.seed, "n_terms": 6}}
    path = out / "scene.ips"
    fio.write_scene(path, fio.SceneFile(fld, None, cams, meta))
    write_manifest(out, cfg, {"scene": cfg.seed, "oracle": cfg.seed},
                   {"scene": path.name, "voxels": len(fld), "cameras": len(cams)})
    print(f"wrote {path} ({len(fld)} voxels, {len(cams)} cameras)")
    return EXIT_OK


def _background(cfg: RunConfig):
    if cfg.env is None:
        return None
    return fio.read_env_map(cfg.env)


def render_frames(cfg: RunConfig):
    """Yield ``(frame, camera, image, seconds, n_points, ring_clouds)``; the core of ``render``."""
    scene = fio.read_scene(cfg.scene)
    if scene.field is None or not scene.cameras:
        raise UsageError(f"{cfg.scene}: scene needs a probability field and cameras")
    o = scene.meta.get("oracle", {})
    oracle = AppearanceOracle(int(o.get("seed", 0)), int(o.get("n_terms", 6)))
    bg = _background(cfg)
    ring = RingBuffer(cfg.buffer)
    cloud = None
    if cfg.sampler == "global":
        cloud = global_extract(scene.field, scene.cameras, oracle, cfg.points, cfg.seed,
                               cfg.exponent)
    for f in range(cfg.frames):
        cam = scene.cameras[0 if cfg.trajectory == "static" else f % len(scene.cameras)]
        t0 = time.perf_counter()
        if cfg.sampler == "resample":
            cloud = sample_view(scene.field, cam, oracle, cfg.points, frame_seed(cfg.seed, f),
                                cfg.exponent)
        elif cfg.sampler == "ring":
            share = max(1, cfg.points // cfg.buffer)
            ring_push(ring, sample_view(scene.field, cam, oracle, share,
                                        frame_seed(cfg.seed, f), cfg.exponent), f)
            cloud = ring_assemble(ring)
        state = rasterize(cloud, cam, bg, cfg.splat, cfg.sort, cfg.threads)
        yield f, cam, state.image, time.perf_counter() - t0, len(cloud), len(ring)


def cmd_render(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    timing = [("frame", "seconds", "points", "threads")]
    for f, cam, img, secs, n, held in render_frames(cfg):
        stem = out / f"frame_{f:04d}"
        fio.write_feature_image(stem, img, {"frame": f, "splat": cfg.splat,
                                            "channels_meaning": "pseudo-RGB + 1 extra feature"})
        if cfg.preview != "none":
            fio.write_preview(stem.with_suffix("." + cfg.preview), img)
        frames.append({"frame": f, "points": n, "ring_clouds": held,
                       "features_sha256": sha256(img.features.astype("<f4")),
                       "transmittance_sha256": sha256(img.transmittance.astype("<f4"))})
        timing.append((f, f"{secs:.6f}", n, cfg.threads))
    _write_csv(out / "timing.csv", timing)
    seeds = {"base": cfg.seed,
             "frames": [frame_seed(cfg.seed, f) for f in range(cfg.frames)]}
    write_manifest(out, cfg, seeds, {"frames": frames, "timing": "timing.csv"})
    print(f"rendered {cfg.frames} frames into {out}")
    return EXIT_OK


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_bench(cfg: RunConfig) -> int:
    from .bench import cost_report, tiles_per_splat_mc, time_sorts
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = cost_report(cfg.bench_points, cfg.bench_width, cfg.bench_height, cfg.seed)
    tps = tiles_per_splat_mc(cfg.tiles_samples, cfg.seed)
    md = rep.to_markdown() + f"\nMonte Carlo tiles per splat ({cfg.tiles_samples} placements): {tps:.4f}\n"
    (out / "cost.csv").write_text(rep.to_csv() + f"tiles per splat monte carlo,{tps:.6f},1.270000\n")
    (out / "cost.md").write_text(md)
    t = time_sorts(cfg.bench_points, cfg.bench_width, cfg.bench_height, cfg.seed, cfg.repeats)
    rows = [("pipeline", "threads", "median_seconds")]
    rows += [("single64", 1, f"{t['single64_s']:.6f}"), ("two-stage", 1, f"{t['two_stage_s']:.6f}")]
    rows += _threaded_render_timing(cfg, t["max_threads"])
    _write_csv(out / "timing.csv", rows)
    write_manifest(out, cfg, {"load": cfg.seed, "tiles": cfg.seed},
                   {"cost": "cost.csv", "table": "cost.md", "timing": "timing.csv"})
    print(md, end="")
    return EXIT_OK


def _threaded_render_timing(cfg: RunConfig, max_threads: int):
    """Median full-render time at 1 and max threads on a random point load."""
    from .verify import random_scene
    pts, cam, bg = random_scene(cfg.seed, 20000, 256, 192)
    rows = []
    for th in sorted({1, max_threads}):
        ts = []
        for _ in range(cfg.repeats + 1):
            t0 = time.perf_counter()
            rasterize(pts, cam, bg, cfg.splat, "two-stage", th)
            ts.append(time.perf_counter() - t0)
        rows.append(("render-two-stage", th, f"{statistics.median(ts[1:]):.6f}"))
    return rows


def cmd_distill_env(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    oracle = (SHBackground.from_seed(cfg.seed) if cfg.oracle == "sh"
              else ConstantBackground((0.5, 0.5, 0.5, 0.5)))
    dc = DistillConfig(height=cfg.size, width=2 * cfg.size, iterations=cfg.iters, batch=cfg.batch,
                       lr_start=cfg.lr_start, lr_end=cfg.lr_end, seed=cfg.seed,
                       optimizer=cfg.optimizer)
    t0 = time.perf_counter()
    res = distill_env(oracle, dc)
    secs = time.perf_counter() - t0
    held = random_directions(np.random.default_rng([cfg.seed, 0x7E57]), 100_000)
    score = psnr(sample_env(res.env, held), oracle(held))
    fio.write_env_map(out / "env", res.env, {"oracle": cfg.oracle, "psnr_db": score})
    _write_csv(out / "losses.csv", [("iteration", "loss")] +
               [(i, repr(v)) for i, v in enumerate(res.losses)])
    _write_csv(out / "timing.csv", [("seconds",), (f"{secs:.3f}",)])
    write_manifest(out, cfg, {"distill": cfg.seed, "heldout": [cfg.seed, 0x7E57]},
                   {"env": "env.json", "losses": "losses.csv", "psnr_db": score})
    print(f"held-out PSNR {score:.2f} dB after {cfg.iters} iterations ({secs:.1f} s)")
    return EXIT_OK


def cmd_tonemap(cfg: RunConfig) -> int:
    if cfg.params:
        curve, ev = fio.read_tonemapper(cfg.params)
    else:
        curve, ev = ResponseCurve.identity(), cfg.ev
    img = fio.read_feature_image(cfg.input)
    fn = tonemap_forward if cfg.direction == "forward" else tonemap_inverse
    feats = fn(img.features, ev, curve)
    outstem = Path(cfg.output)
    outstem.parent.mkdir(parents=True, exist_ok=True)
    fio.write_feature_image(outstem, FeatureImage(feats, img.transmittance),
                            {"tonemap": cfg.direction, "ev": ev})
    write_manifest(outstem.parent, cfg, {}, {"image": outstem.name + ".json"})
    print(f"wrote {outstem}.f32")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import run_suite
    ok = True
    report = []
    for name in cfg.suites:
        for check, passed, detail in run_suite(name, cfg.quick):
            ok &= bool(passed)
            line = f"[{'PASS' if passed else 'FAIL'}] {name}: {check} ({detail})"
            report.append(line)
            print(line, flush=True)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text("\n".join(report) + "\n")
        write_manifest(out, cfg, {"suites": 0}, {"report": "verify.txt", "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"genscene": cmd_genscene, "render": cmd_render, "bench": cmd_bench,
            "distill-env": cmd_distill_env, "tonemap": cmd_tonemap, "verify": cmd_verify}


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _int(text: str) -> int:
    """Integers, also written as powers such as ``2^20``."""
    t = text.strip()
    if "^" in t:
        b, e = t.split("^", 1)
        return int(b) ** int(e)
    return int(t)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="implicit-points", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    g = common(sub.add_parser("genscene", help="write a synthetic scene container"))
    g.add_argument("kind", nargs="?", choices=KINDS)
    g.add_argument("--resolution", type=int)
    g.add_argument("--cameras", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)

    r = common(sub.add_parser("render", help="render a camera trajectory"))
    r.add_argument("--scene")
    r.add_argument("--trajectory", choices=("ring", "static"))
    r.add_argument("--frames", type=int)
    r.add_argument("--points", type=_int)
    r.add_argument("--splat", choices=MODES)
    r.add_argument("--sort", choices=SORTS)
    r.add_argument("--sampler", choices=SAMPLERS)
    r.add_argument("--buffer", type=int)
    r.add_argument("--exponent", type=float)
    r.add_argument("--env", help="environment map stem written by distill-env")
    r.add_argument("--preview", choices=("png", "ppm", "none"))

    b = common(sub.add_parser("bench", help="sort cost accounting and timings"))
    b.add_argument("--points", dest="bench_points", type=_int)
    b.add_argument("--width", dest="bench_width", type=int)
    b.add_argument("--height", dest="bench_height", type=int)
    b.add_argument("--tiles-samples", type=_int)
    b.add_argument("--repeats", type=int)
    b.add_argument("--splat", choices=MODES)

    d = common(sub.add_parser("distill-env", help="distill a background into an env map"))
    d.add_argument("--oracle", choices=("sh", "constant"))
    d.add_argument("--size", type=int, help="map height; width is twice this")
    d.add_argument("--iters", type=int)
    d.add_argument("--batch", type=_int)
    d.add_argument("--lr-start", type=float)
    d.add_argument("--lr-end", type=float)
    d.add_argument("--optimizer", choices=("adam", "sgd"))

    t = common(sub.add_parser("tonemap", help="tonemap a feature-image dump"))
    t.add_argument("--input", help="input stem (reads STEM.json)")
    t.add_argument("--output", help="output stem")
    t.add_argument("--direction", choices=("forward", "inverse"))
    t.add_argument("--params", help="tonemapper JSON with ev and curve")
    t.add_argument("--ev", type=float)

    v = common(sub.add_parser("verify", help="run property suites"))
    v.add_argument("suites", nargs="*", help=f"any of {', '.join(SUITES)}; default all")
    v.add_argument("--quick", action="store_true", help="smaller sample counts")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        if not isinstance(base, dict):
            raise UsageError("--config must hold a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(base) - names
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    base["subcommand"] = args.subcommand
    for k, v in vars(args).items():
        if k in names and v is not None and k != "subcommand":
            if k == "suites" and not v:
                continue
            base[k] = v
    if "out" not in base:
        base["out"] = "out" if args.subcommand != "verify" else ""
    return RunConfig(**base).validate()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.subcommand](cfg)
    except (OSError, json.JSONDecodeError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # bad flags, or inputs the library rejects (e.g. too few samples)
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
