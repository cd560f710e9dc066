"""File formats: scene container, feature dumps, previews, env maps.

Scene container layout (all integers little-endian)::

    magic   8 bytes  b"IPSCENE\\0"
    version u32
    flags   u32      (reserved, 0)
    hlen    u64      byte length of the JSON header
    header  hlen     UTF-8 JSON, padded with spaces to a multiple of 8
    data             section payloads; offsets in the header are relative
                     to the start of this block

The header carries bounds, seeds, format version and a section table
``[{name, dtype, shape, offset, nbytes}]``. Payloads are raw little-endian
arrays, so float64 values round-trip bit-exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .envmap import EnvironmentMap
from .scene import (CAMERA_RECORD_LEN, NUM_CHANNELS, NUM_SH, CameraView, FeatureImage,
                    PointSet, ProbabilityField)
from .tonemap import ResponseCurve, tonemap_forward

MAGIC = b"IPSCENE\0"
FORMAT_VERSION = 1


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=1)


class SceneFile:
    """In-memory contents of a scene container."""

    def __init__(self, field: Optional[ProbabilityField] = None,
                 points: Optional[PointSet] = None,
                 cameras: Optional[List[CameraView]] = None,
                 meta: Optional[dict] = None):
        self.field = field
        self.points = points
        self.cameras = list(cameras or [])
        self.meta = dict(meta or {})

    def sections(self) -> Dict[str, np.ndarray]:
        out = {}
        if self.field is not None:
            out["field.indices"] = self.field.indices.astype("<i8")
            out["field.weights"] = self.field.weights.astype("<f8")
        if self.points is not None:
            out["points.positions"] = self.points.positions.astype("<f8")
            out["points.opacities"] = self.points.opacities.astype("<f8")
            out["points.sh_coeffs"] = self.points.sh_coeffs.astype("<f8")
        if self.cameras:
            out["cameras"] = np.stack([c.as_array() for c in self.cameras]).astype("<f8")
        return out


def write_scene(path, scene: SceneFile) -> None:
    sections = scene.sections()
    table = []
    offset = 0
    for name, arr in sections.items():
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes + (-arr.nbytes) % 8
    header = dict(scene.meta)
    header["format_version"] = FORMAT_VERSION
    header["sections"] = table
    if scene.field is not None:
        header["field"] = {"resolution": scene.field.resolution,
                           "bounds_min": scene.field.bounds_min.tolist(),
                           "bounds_max": scene.field.bounds_max.tolist()}
    text = dumps_json(header).encode("utf-8")
    text += b" " * ((-len(text)) % 8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, 0, len(text)))
        fh.write(text)
        for name, arr in sections.items():
            data = np.ascontiguousarray(arr).tobytes()
            fh.write(data)
            fh.write(b"\0" * ((-len(data)) % 8))


def read_scene(path) -> SceneFile:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a scene container")
    version, _, hlen = struct.unpack("<IIQ", raw[8:24])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[24:24 + hlen].decode("utf-8"))
    base = 24 + hlen
    arrays = {}
    for s in header.pop("sections"):
        start = base + s["offset"]
        buf = raw[start:start + s["nbytes"]]
        arrays[s["name"]] = np.frombuffer(buf, dtype=np.dtype(s["dtype"])).reshape(s["shape"])
    fmeta = header.pop("field", None)
    header.pop("format_version", None)
    field = None
    if fmeta is not None:
        field = ProbabilityField(fmeta["resolution"], np.array(fmeta["bounds_min"]),
                                 np.array(fmeta["bounds_max"]), arrays["field.indices"],
                                 arrays["field.weights"])
    points = None
    if "points.positions" in arrays:
        points = PointSet(arrays["points.positions"], arrays["points.opacities"],
                          arrays["points.sh_coeffs"].reshape(-1, NUM_CHANNELS, NUM_SH))
    cams = [CameraView.from_array(r) for r in arrays.get("cameras", np.zeros((0, CAMERA_RECORD_LEN)))]
    return SceneFile(field, points, cams, header)


# --------------------------------------------------------------------------
# Feature images
# --------------------------------------------------------------------------

def write_feature_image(stem, image: FeatureImage, extra: Optional[dict] = None) -> dict:
    """Write ``stem.f32`` (HxWx4), ``stem_T.f32`` (HxW) and the ``stem.json`` sidecar."""
    stem = Path(stem)
    feat = stem.with_suffix(".f32")
    trans = stem.parent / (stem.name + "_T.f32")
    image.features.astype("<f4").tofile(feat)
    image.transmittance.astype("<f4").tofile(trans)
    side = {"width": image.width, "height": image.height, "channels": NUM_CHANNELS,
            "dtype": "<f4", "layout": "HWC", "features": feat.name,
            "transmittance": trans.name}
    if extra:
        side.update(extra)
    stem.with_suffix(".json").write_text(dumps_json(side) + "\n")
    return side


def read_feature_image(stem) -> FeatureImage:
    stem = Path(stem)
    side = json.loads(stem.with_suffix(".json").read_text())
    H, W = side["height"], side["width"]
    f = np.fromfile(stem.parent / side["features"], dtype=side["dtype"]).reshape(H, W, NUM_CHANNELS)
    t_path = stem.parent / side.get("transmittance", "")
    if side.get("transmittance") and t_path.exists():
        t = np.fromfile(t_path, dtype=side["dtype"]).reshape(H, W)
    else:
        t = np.ones((H, W))
    return FeatureImage(f.astype(np.float64), np.clip(t.astype(np.float64), 0, 1))


def preview_rgb(image: FeatureImage) -> np.ndarray:
    """Channels 0-2 through the identity-curve tonemapper, as 8-bit RGB."""
    rgb = tonemap_forward(image.features[..., :3], 0.0, ResponseCurve.identity())
    return np.round(rgb * 255.0).astype(np.uint8)


def write_preview(path, image: FeatureImage) -> None:
    path = Path(path)
    rgb = preview_rgb(image)
    if path.suffix.lower() == ".ppm":
        H, W = rgb.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
            fh.write(rgb.tobytes())
    else:
        from PIL import Image
        Image.fromarray(rgb, "RGB").save(path, format="PNG")


# --------------------------------------------------------------------------
# Environment maps
# --------------------------------------------------------------------------

def write_env_map(stem, env: EnvironmentMap, extra: Optional[dict] = None) -> None:
    stem = Path(stem)
    env.texels.astype("<f4").tofile(stem.with_suffix(".f32"))
    head = {"height": env.height, "width": env.width, "channels": NUM_CHANNELS,
            "dtype": "<f4", "layout": "HWC", "data": stem.with_suffix(".f32").name,
            "parameterization": "equirectangular, y up, u = atan2(x, z)"}
    if extra:
        head.update(extra)
    stem.with_suffix(".json").write_text(dumps_json(head) + "\n")


def read_env_map(stem) -> EnvironmentMap:
    stem = Path(stem)
    head = json.loads(stem.with_suffix(".json").read_text())
    t = np.fromfile(stem.parent / head["data"], dtype=head["dtype"])
    return EnvironmentMap(t.reshape(head["height"], head["width"], NUM_CHANNELS).astype(np.float64))


# --------------------------------------------------------------------------
# Tonemapper parameters
# --------------------------------------------------------------------------

def write_tonemapper(path, curve: ResponseCurve, ev: float) -> None:
    Path(path).write_text(dumps_json({"ev": float(ev), "curve": {
        "knots": curve.knots, "values": curve.values.tolist()}}) + "\n")


def read_tonemapper(path):
    d = json.loads(Path(path).read_text())
    return ResponseCurve(np.asarray(d["curve"]["values"], dtype=np.float64)), float(d.get("ev", 0.0))
