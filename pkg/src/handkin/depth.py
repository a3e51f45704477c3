"""Depth-frame preprocessing, online augmentation and raster-space normalization.

Processed images live in the rotated, COM-relative frame. Pixels are laid out
orthographically: with ``k = cube_size / out_size`` mm per pixel, the center
of pixel column ``c`` sits at ``x = (c + 0.5) * k - cube_size / 2`` (rows map
to ``y`` the same way). A pixel value ``v`` encodes ``z = v * cube_size / 2``;
background is exactly +1.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateInputError, InvalidArgumentError
from .geometry import TransformState, gt_transform_params, make_state, rot_z, to_normalized_frame
from .topology import KinematicTopology

BACKGROUND = 1.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(vals)) or self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError("intrinsics must be finite with positive focal lengths")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class DepthFrame:
    depth: np.ndarray  # (height, width) mm, 0 = missing
    intrinsics: Intrinsics

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.ndim != 2:
            raise InvalidArgumentError("depth must be a 2-D raster")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise InvalidArgumentError("depth values must be finite and >= 0")
        object.__setattr__(self, "depth", d)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class PipelineConfig:
    cube_size: float = 300.0  # mm
    out_size: int = 176
    crop_size: int = 128
    median: bool = True
    min_weight: float = 0.5  # bilinear weight a resampled pixel needs to stay foreground

    def __post_init__(self):
        if not self.cube_size > 0:
            raise InvalidArgumentError("cube_size must be positive")
        if not 0 < self.crop_size <= self.out_size:
            raise InvalidArgumentError("crop_size must lie in (0, out_size]")
        if not 0 < self.min_weight <= 1:
            raise InvalidArgumentError("min_weight must lie in (0, 1]")

    @property
    def pixel_mm(self) -> float:
        return self.cube_size / self.out_size


@dataclass
class ProcessedSample:
    image: np.ndarray  # (S, S) normalized depth in [-1, 1]
    state: TransformState
    joints_gt: np.ndarray  # (21, 3) mm, rotated COM-relative frame
    sample_id: int
    provenance: dict = field(default_factory=dict)


# ------------------------------------------------------------------ geometry


def project_points(points, intr: Intrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to (u, v) pixels."""
    p = np.asarray(getattr(points, "positions", points), dtype=float)
    if np.any(p[..., 2] <= 0):
        raise InvalidArgumentError("points must lie in front of the camera")
    return np.stack([p[..., 0] * intr.fx / p[..., 2] + intr.cx, p[..., 1] * intr.fy / p[..., 2] + intr.cy], axis=-1)


def back_project(frame: DepthFrame) -> np.ndarray:
    """Camera-frame points of every valid pixel, in row-major pixel order."""
    v, u = np.nonzero(frame.depth > 0)
    z = frame.depth[v, u]
    intr = frame.intrinsics
    return np.stack([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z], axis=1)


def _two_means(z: np.ndarray, iters: int = 100) -> float:
    """Mean of the nearer cluster of a 1-D two-means split."""
    lo, hi = float(z.min()), float(z.max())
    if hi - lo <= 1e-9 * max(1.0, abs(hi)):
        return float(z.mean())
    for _ in range(iters):
        near = z < 0.5 * (lo + hi)
        new_lo, new_hi = float(z[near].mean()), float(z[~near].mean())
        if new_lo == lo and new_hi == hi:
            break
        lo, hi = new_lo, new_hi
    return lo


def compute_com(joints_gt, frame: DepthFrame) -> np.ndarray:
    """Hand center: joint bounding-box center in the image, depth from the near cluster."""
    intr = frame.intrinsics
    uv = project_points(joints_gt, intr).reshape(-1, 2)
    u0, v0 = np.floor(uv.min(axis=0)).astype(int)
    u1, v1 = np.ceil(uv.max(axis=0)).astype(int)
    u0, v0 = max(u0, 0), max(v0, 0)
    u1, v1 = min(u1, frame.width - 1), min(v1, frame.height - 1)
    box = frame.depth[v0 : v1 + 1, u0 : u1 + 1] if (u1 >= u0 and v1 >= v0) else np.zeros(0)
    z = box[box > 0]
    if z.size == 0:
        raise DegenerateInputError("no valid depth inside the joint bounding box")
    depth = _two_means(z)
    uc, vc = 0.5 * (uv.min(axis=0) + uv.max(axis=0))
    return np.array([(uc - intr.cx) * depth / intr.fx, (vc - intr.cy) * depth / intr.fy, depth])


def extract_cube(frame: DepthFrame, com, cube_size: float) -> np.ndarray:
    """Valid points rotated by ``camera_rotation(com)`` that fall inside the cube around the COM.

    Points are returned in the rotated camera frame (the COM depth is not
    subtracted), in row-major pixel order.
    """
    if not cube_size > 0:
        raise InvalidArgumentError("cube_size must be positive")
    state = make_state(com)
    pts = back_project(frame) @ state.r_cam.T
    rel = pts - np.array([0.0, 0.0, state.com_depth])
    keep = np.all(np.abs(rel) <= 0.5 * cube_size, axis=1)
    return pts[keep]


def render_points_to_image(points, out_size: int, cube_size: float, median: bool = True) -> np.ndarray:
    """Orthographic z-buffer of COM-relative points, 3x3 median, normalized to [-1, 1].

    The median only looks at foreground pixels: background neither votes
    nor gets filled in, so isolated points survive and silhouettes keep
    their shape.
    """
    if not cube_size > 0:
        raise InvalidArgumentError("cube_size must be positive")
    if out_size < 1:
        raise InvalidArgumentError("out_size must be positive")
    p = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    zbuf = kernels.splat_min(p, int(out_size), float(cube_size))
    valid = np.isfinite(zbuf)
    img = np.where(valid, zbuf, 0.0)
    if median:
        img = kernels.masked_median3x3(img, valid)
    out = np.clip(img / (0.5 * cube_size), -1.0, 1.0)
    out[~valid] = BACKGROUND
    return out


def preprocess_frame(
    frame: DepthFrame,
    joints_cam,
    sample_id: int = 0,
    config: PipelineConfig | None = None,
    topo: KinematicTopology | None = None,
    reference_sum: float | None = None,
) -> ProcessedSample:
    """Camera frame plus camera-frame joints -> normalized image, joints and state."""
    cfg = config or PipelineConfig()
    joints_cam = np.asarray(getattr(joints_cam, "positions", joints_cam), dtype=float).reshape(21, 3)
    com = compute_com(joints_cam, frame)
    state = make_state(com)
    pts = extract_cube(frame, com, cfg.cube_size)
    pts[:, 2] -= state.com_depth
    image = render_points_to_image(pts, cfg.out_size, cfg.cube_size, cfg.median)
    joints = to_normalized_frame(joints_cam, state)
    t, a, s = gt_transform_params(joints, topo, reference_sum)
    return ProcessedSample(image, state.replace(t=t, alpha_z=a, s=s), joints, int(sample_id), {"frame": int(sample_id)})


# --------------------------------------------------------------- raster warps


def warp_image(image, linear, shift_mm, depth_scale, depth_shift, pixel_mm: float, min_weight: float = 0.5):
    """Resample ``out(x') = depth_scale * in(x) + depth_shift`` with ``x' = linear @ x + shift``.

    ``x`` are in-plane mm about the raster center; depth values are in
    normalized units. Background never blends into the foreground and stays +1.
    """
    image = np.asarray(image, dtype=float)
    n = image.shape[0]
    if image.shape != (n, n):
        raise InvalidArgumentError("expected a square raster")
    linear = np.asarray(linear, dtype=float).reshape(2, 2)
    inv = np.linalg.inv(linear)
    c0 = 0.5 - 0.5 * n  # pixel index -> centered pixel units offset
    offset = inv @ (np.full(2, c0) - np.asarray(shift_mm, dtype=float).reshape(2) / pixel_mm) - c0
    affine = np.ascontiguousarray(np.column_stack([inv, offset]))
    valid = image < BACKGROUND
    out, out_valid = kernels.warp_bilinear(np.ascontiguousarray(image), valid, affine, n, n, float(min_weight))
    out = np.clip(depth_scale * out + depth_shift, -1.0, 1.0)
    out[~out_valid] = BACKGROUND
    return out


def rotate_raster(image, alpha_z: float, pixel_mm: float, min_weight: float = 0.5):
    """Rotate image content by ``-alpha_z`` about the raster center."""
    return warp_image(image, rot_z(-alpha_z)[:2, :2], (0.0, 0.0), 1.0, 0.0, pixel_mm, min_weight)


def rescale_raster(image, s: float, pixel_mm: float, min_weight: float = 0.5):
    """Shrink the content by ``1/s`` in all three directions about the center."""
    if not s > 0:
        raise InvalidArgumentError("scale must be positive")
    return warp_image(image, np.eye(2) / s, (0.0, 0.0), 1.0 / s, 0.0, pixel_mm, min_weight)


@dataclass(frozen=True)
class CropResult:
    image: np.ndarray
    offset_px: tuple  # (col, row) of the window's top-left corner in the source
    center_mm: np.ndarray  # (3,) source-frame position of the crop's center and depth origin
    clamped: bool


def crop_recenter_raster(image, t_est, cube_size: float = 300.0, crop_size: int = 128) -> CropResult:
    """Crop a ``crop_size`` window centered on ``t_est`` and re-center depth on ``t_est[2]``.

    The in-plane shift is rounded to whole pixels; ``center_mm`` records the
    center actually used. A window that would leave the raster is clamped
    and flagged.
    """
    image = np.asarray(image, dtype=float)
    n = image.shape[0]
    if image.shape != (n, n) or not 0 < crop_size <= n:
        raise InvalidArgumentError("expected a square raster at least crop_size wide")
    t = np.asarray(t_est, dtype=float).reshape(3)
    if not np.all(np.isfinite(t)):
        raise InvalidArgumentError("t_est must be finite")
    k = cube_size / n
    shift = np.rint(t[:2] / k).astype(int)
    start = (n - crop_size) // 2 + shift
    lo, hi = 0, n - crop_size
    clamped = bool(np.any(start < lo) or np.any(start > hi))
    start = np.clip(start, lo, hi)
    c, r = int(start[0]), int(start[1])
    win = image[r : r + crop_size, c : c + crop_size].copy()
    valid = win < BACKGROUND
    win[valid] = np.clip(win[valid] - t[2] / (0.5 * cube_size), -1.0, 1.0)
    center = np.array([(c - (n - crop_size) // 2) * k, (r - (n - crop_size) // 2) * k, t[2]])
    return CropResult(win, (c, r), center, clamped)


def downsample(image, factor: int):
    """Block-mean pooling by an integer factor over the last two axes."""
    image = np.asarray(image, dtype=float)
    if factor == 1:
        return image
    h, w = image.shape[-2:]
    if h % factor or w % factor:
        raise InvalidArgumentError(f"raster {h}x{w} not divisible by {factor}")
    return image.reshape(*image.shape[:-2], h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


# -------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentDraws:
    scale: float = 1.0
    rotation: float = 0.0  # rad
    translation: tuple = (0.0, 0.0, 0.0)  # mm

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.rotation == 0.0 and not any(self.translation)


SCALE_MEAN, SCALE_STD, SCALE_RANGE = 1.0, 0.075, (0.75, 1.25)
TRANSLATION_STD, TRANSLATION_RANGE = 4.0, (-15.0, 15.0)


def draw_augmentation(rng: np.random.Generator) -> AugmentDraws:
    """Scale ~ N(1, 0.075) clipped to [0.75, 1.25]; rotation ~ U(-pi, pi);
    translation per axis ~ N(0, 4 mm) clipped to [-15, 15] mm."""
    scale = float(np.clip(rng.normal(SCALE_MEAN, SCALE_STD), *SCALE_RANGE))
    rotation = float(rng.uniform(-np.pi, np.pi))
    translation = tuple(float(x) for x in np.clip(rng.normal(0.0, TRANSLATION_STD, 3), *TRANSLATION_RANGE))
    return AugmentDraws(scale, rotation, translation)


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    """Per-sample stream, independent of processing order."""
    return np.random.default_rng([int(seed), int(sample_id)])


def augment(
    sample: ProcessedSample,
    rng: np.random.Generator | None = None,
    draws: AugmentDraws | None = None,
    config: PipelineConfig | None = None,
    topo: KinematicTopology | None = None,
    reference_sum: float | None = None,
) -> ProcessedSample:
    """Apply ``j' = Rz(phi) @ (sigma * j) + tau`` to image and joints alike.

    Ground-truth transform parameters are recomputed from the new joints.
    Either ``rng`` or explicit ``draws`` must be given.
    """
    cfg = config or PipelineConfig()
    if draws is None:
        if rng is None:
            raise InvalidArgumentError("augment needs an rng or explicit draws")
        draws = draw_augmentation(rng)
    prov = dict(sample.provenance, augment={"scale": draws.scale, "rotation": draws.rotation, "translation": list(draws.translation)})
    if draws.is_identity:
        return ProcessedSample(sample.image.copy(), sample.state, sample.joints_gt.copy(), sample.sample_id, prov)
    rz = rot_z(draws.rotation)
    tau = np.asarray(draws.translation, dtype=float)
    half = 0.5 * cfg.cube_size
    pixel_mm = cfg.cube_size / sample.image.shape[0]
    image = warp_image(sample.image, draws.scale * rz[:2, :2], tau[:2], draws.scale, tau[2] / half, pixel_mm, cfg.min_weight)
    joints = (draws.scale * sample.joints_gt) @ rz.T + tau
    t, a, s = gt_transform_params(joints, topo, reference_sum)
    return ProcessedSample(image, sample.state.replace(t=t, alpha_z=a, s=s), joints, sample.sample_id, prov)


# --------------------------------------------------------------------- disk IO

HKD1_MAGIC = b"HKD1"


def write_hkd1(path, depth) -> None:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise InvalidArgumentError("depth must be a 2-D raster")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(HKD1_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_hkd1(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != HKD1_MAGIC:
        raise InvalidArgumentError(f"{path}: not an HKD1 raster")
    w, h = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * w * h:
        raise InvalidArgumentError(f"{path}: expected {w}x{h} float32 payload")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).astype(float)


def file_digest(paths) -> str:
    """SHA-256 over the concatenated contents of ``paths`` in the given order."""
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


@dataclass
class DatasetRecord:
    sample_id: int
    frame: DepthFrame
    joints: np.ndarray  # (21, 3) camera mm
    params: np.ndarray | None  # (61,) when synthetic
    split: str
    profile: str | None


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: dataset manifest not found") from None


def load_dataset(root, splits=None):
    """Yield :class:`DatasetRecord` for every sample (optionally restricted to ``splits``)."""
    root = Path(root)
    manifest = load_manifest(root)
    intr = Intrinsics(**manifest["camera"]["intrinsics"])
    annotations = {}
    with open(root / manifest["annotations"]) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                annotations[rec["id"]] = rec
    for entry in manifest["samples"]:
        if splits is not None and entry["split"] not in splits:
            continue
        ann = annotations[entry["id"]]
        params = ann.get("params")
        yield DatasetRecord(
            entry["id"],
            DepthFrame(read_hkd1(root / entry["file"]), intr),
            np.asarray(ann["joints_mm"], dtype=float).reshape(21, 3),
            None if params is None else np.asarray(params, dtype=float),
            entry["split"],
            entry.get("profile"),
        )
