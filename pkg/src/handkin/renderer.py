"""Synthetic labeled depth data from the kinematic hand model.

Hands are drawn as unions of capsules (one per finger bone plus palm
capsules) and ray-traced analytically against a pinhole camera.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from ._accel import worker_count
from .depth import DepthFrame, Intrinsics, file_digest, write_hkd1
from .errors import InvalidArgumentError
from .hand_model import HandParameters, fkine_batch
from .topology import (
    BASE_ORIENTATION,
    BASE_TRANSLATION,
    BONE_LENGTHS,
    FINGER_VECTORS,
    FINGERS,
    JOINT_ANGLES,
    N_PARAMS,
    VECTOR_FINGERS,
    WRIST_VECTOR,
    KinematicTopology,
    default_topology,
    joint_index,
)

MARGIN_RAD = np.radians(2.0)


@dataclass(frozen=True)
class HandShapeProfile:
    name: str
    bone_lengths: np.ndarray  # (15,) mm, finger-major
    finger_vectors: np.ndarray  # (4, 3) mm, T I R P
    wrist_vector: np.ndarray  # (3,) mm
    bone_std: np.ndarray  # (15,) mm
    vector_std: float  # mm, applied to every base-vector component
    bone_radii: np.ndarray  # (15,) mm
    palm_radius: float  # mm
    split: str = "seen"

    def __post_init__(self):
        for name, shape in (("bone_lengths", (15,)), ("finger_vectors", (4, 3)), ("wrist_vector", (3,)), ("bone_std", (15,)), ("bone_radii", (15,))):
            a = np.array(getattr(self, name), dtype=float).reshape(shape)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not np.all(self.bone_lengths > 0) or not np.all(self.bone_radii > 0) or not self.palm_radius > 0:
            raise InvalidArgumentError(f"profile {self.name}: lengths and radii must be positive")
        if np.any(self.bone_std < 0) or self.vector_std < 0:
            raise InvalidArgumentError(f"profile {self.name}: standard deviations must be >= 0")

    @classmethod
    def from_dict(cls, d) -> "HandShapeProfile":
        bones = np.array([d["bone_lengths_mm"][f] for f in FINGERS], dtype=float).ravel()
        if "bone_std_mm" in d:
            std = np.broadcast_to(np.asarray(d["bone_std_mm"], dtype=float), (15,))
        else:
            std = d.get("bone_std_rel", 0.0) * bones
        return cls(
            name=d["name"],
            bone_lengths=bones,
            finger_vectors=np.array([d["finger_vectors_mm"][f] for f in VECTOR_FINGERS], dtype=float),
            wrist_vector=d["wrist_vector_mm"],
            bone_std=std,
            vector_std=float(d.get("vector_std_mm", 0.0)),
            bone_radii=np.array([d["bone_radii_mm"][f] for f in FINGERS], dtype=float).ravel(),
            palm_radius=float(d["palm_radius_mm"]),
            split=d.get("split", "seen"),
        )

    def to_dict(self) -> dict:
        b, r = self.bone_lengths.reshape(5, 3), self.bone_radii.reshape(5, 3)
        return {
            "name": self.name,
            "split": self.split,
            "bone_lengths_mm": {f: b[i].tolist() for i, f in enumerate(FINGERS)},
            "finger_vectors_mm": {f: self.finger_vectors[i].tolist() for i, f in enumerate(VECTOR_FINGERS)},
            "wrist_vector_mm": self.wrist_vector.tolist(),
            "bone_std_mm": self.bone_std.tolist(),
            "vector_std_mm": self.vector_std,
            "bone_radii_mm": {f: r[i].tolist() for i, f in enumerate(FINGERS)},
            "palm_radius_mm": self.palm_radius,
        }


def load_profiles(path=None) -> list[HandShapeProfile]:
    if path is None:
        text = resources.files("handkin").joinpath("data/default_profiles.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    profiles = [HandShapeProfile.from_dict(p) for p in doc["profiles"]]
    if len({p.name for p in profiles}) != len(profiles):
        raise InvalidArgumentError("profile names must be unique")
    return profiles


@lru_cache(maxsize=1)
def default_profiles() -> tuple:
    return tuple(load_profiles())


@dataclass(frozen=True)
class Camera:
    width: int = 320
    height: int = 240
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(420.0, 420.0, 160.0, 120.0))

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "intrinsics": self.intrinsics.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "Camera":
        return cls(int(d["width"]), int(d["height"]), Intrinsics(**d["intrinsics"]))


@dataclass(frozen=True)
class PoseRegion:
    """Camera-facing sampling box for the base pose (mm, rad)."""

    xy_mm: float = 30.0
    z_mm: tuple = (500.0, 650.0)
    yaw_center: float = -np.pi / 2  # fingers pointing up in the image
    yaw_range: float = np.pi / 3
    tilt_range: float = 0.35


def sample_hand(
    profile: HandShapeProfile,
    limits,
    rng: np.random.Generator,
    region: PoseRegion | None = None,
) -> HandParameters:
    """Shape ~ N(profile mean, std) (bones floored at 1 mm); angles uniform 2 deg inside the limits."""
    region = region or PoseRegion()
    low, up = (np.asarray(x, dtype=float) for x in limits)
    lam = np.zeros(N_PARAMS)
    lam[BASE_TRANSLATION] = [
        rng.uniform(-region.xy_mm, region.xy_mm),
        rng.uniform(-region.xy_mm, region.xy_mm),
        rng.uniform(*region.z_mm),
    ]
    lam[BASE_ORIENTATION] = [
        region.yaw_center + rng.uniform(-region.yaw_range, region.yaw_range),
        rng.uniform(-region.tilt_range, region.tilt_range),
        rng.uniform(-region.tilt_range, region.tilt_range),
    ]
    lam[FINGER_VECTORS] = (profile.finger_vectors + profile.vector_std * rng.standard_normal((4, 3))).ravel()
    lam[WRIST_VECTOR] = profile.wrist_vector + profile.vector_std * rng.standard_normal(3)
    lam[BONE_LENGTHS] = np.maximum(profile.bone_lengths + profile.bone_std * rng.standard_normal(15), 1.0)
    lam[JOINT_ANGLES] = rng.uniform(low + MARGIN_RAD, up - MARGIN_RAD)
    return HandParameters.from_vector(lam)


def hand_capsules(joints, profile: HandShapeProfile):
    """Segment endpoints (K, 3), (K, 3) and radii (K,) for one hand."""
    j = np.asarray(getattr(joints, "positions", joints), dtype=float)
    a, b, r = [], [], []
    for fi, f in enumerate(FINGERS):
        idx = [joint_index(f, k) for k in ("MCP", "PIP", "DIP", "TIP")]
        for s in range(3):
            a.append(j[idx[s]])
            b.append(j[idx[s + 1]])
            r.append(profile.bone_radii[3 * fi + s])
    mcps = [j[joint_index(f, "MCP")] for f in FINGERS]
    for m in mcps:
        a.append(j[0])
        b.append(m)
        r.append(profile.palm_radius)
    for m0, m1 in zip(mcps[1:-1], mcps[2:]):
        a.append(m0)
        b.append(m1)
        r.append(profile.palm_radius)
    return np.array(a), np.array(b), np.array(r)


def render_capsules(seg_a, seg_b, radii, camera: Camera | None = None) -> DepthFrame:
    """Nearest-surface depth of a union of capsules; no hit = 0."""
    camera = camera or Camera()
    intr = camera.intrinsics
    seg_a = np.ascontiguousarray(np.asarray(seg_a, dtype=float).reshape(-1, 3))
    seg_b = np.ascontiguousarray(np.asarray(seg_b, dtype=float).reshape(-1, 3))
    radii = np.ascontiguousarray(np.asarray(radii, dtype=float).reshape(-1))
    if not (seg_a.shape == seg_b.shape and radii.shape[0] == seg_a.shape[0]):
        raise InvalidArgumentError("segment and radius counts differ")
    if np.any(radii <= 0):
        raise InvalidArgumentError("radii must be positive")
    k = seg_a.shape[0]
    if k and np.any(np.minimum(seg_a[:, 2], seg_b[:, 2]) - radii <= 0):
        raise InvalidArgumentError("geometry must lie entirely in front of the camera")
    boxes = np.zeros((k, 4), dtype=np.int64)
    for i in range(k):
        lo = np.minimum(seg_a[i], seg_b[i]) - radii[i]
        hi = np.maximum(seg_a[i], seg_b[i]) + radii[i]
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        u = corners[:, 0] * intr.fx / corners[:, 2] + intr.cx
        v = corners[:, 1] * intr.fy / corners[:, 2] + intr.cy
        boxes[i] = [
            max(int(np.floor(u.min())), 0),
            min(int(np.ceil(u.max())), camera.width - 1),
            max(int(np.floor(v.min())), 0),
            min(int(np.ceil(v.max())), camera.height - 1),
        ]
    depth = kernels.render_capsules(
        camera.height, camera.width, intr.fx, intr.fy, intr.cx, intr.cy, seg_a, seg_b, radii, boxes
    )
    return DepthFrame(depth, intr)


def render_depth(
    params,
    profile: HandShapeProfile,
    camera: Camera | None = None,
    topo: KinematicTopology | None = None,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> DepthFrame:
    """Depth frame of the capsule hand for ``params`` with the profile's radii."""
    lam = params.to_vector() if isinstance(params, HandParameters) else np.asarray(params, dtype=float)
    joints = fkine_batch(lam[None], topo)[0]
    frame = render_capsules(*hand_capsules(joints, profile), camera)
    if noise_std > 0:
        if rng is None:
            raise InvalidArgumentError("depth noise needs an rng")
        d = frame.depth.copy()
        hit = d > 0
        d[hit] = np.maximum(d[hit] + noise_std * rng.standard_normal(int(hit.sum())), 1e-3)
        frame = DepthFrame(d, frame.intrinsics)
    return frame


# ------------------------------------------------------------------- datasets

SPLIT_FRACTIONS = {"train": 0.8, "validation": 0.1, "test": 0.1}


def split_plan(n: int) -> list[str]:
    """Contiguous train / validation / test assignment by sample index."""
    n_train = int(round(SPLIT_FRACTIONS["train"] * n))
    n_val = int(round(SPLIT_FRACTIONS["validation"] * n))
    n_train = max(min(n_train, n), 1 if n else 0)
    n_val = min(n_val, n - n_train)
    return ["train"] * n_train + ["validation"] * n_val + ["test"] * (n - n_train - n_val)


@dataclass
class SyntheticSample:
    sample_id: int
    split: str
    profile: str
    params: np.ndarray  # (61,)
    joints: np.ndarray  # (21, 3) camera mm
    frame: DepthFrame


def synthesize(
    sample_id: int,
    split: str,
    profiles,
    seed: int,
    camera: Camera | None = None,
    region: PoseRegion | None = None,
    topo: KinematicTopology | None = None,
    noise_std: float = 0.0,
) -> SyntheticSample:
    """One labeled frame, a pure function of ``(seed, sample_id, split)``.

    Train and validation samples use seen profiles; test samples draw from
    every profile.
    """
    topo = topo or default_topology()
    rng = np.random.default_rng([int(seed), int(sample_id)])
    pool = [p for p in profiles if split == "test" or p.split == "seen"]
    if not pool:
        raise InvalidArgumentError(f"no profile available for split {split!r}")
    profile = pool[int(rng.integers(len(pool)))]
    params = sample_hand(profile, topo.limits, rng, region).to_vector()
    joints = fkine_batch(params[None], topo)[0]
    frame = render_depth(params, profile, camera, topo, noise_std, rng)
    return SyntheticSample(int(sample_id), split, profile.name, params, joints, frame)


def iter_synthetic(n, profiles=None, seed=42, camera=None, region=None, topo=None, noise_std=0.0, workers=None):
    """Yield ``n`` samples in index order, rendering with up to ``workers`` threads."""
    if n <= 0:
        raise InvalidArgumentError("n must be positive")
    profiles = list(profiles or default_profiles())
    plan = split_plan(n)
    workers = workers or worker_count()

    def job(i):
        return synthesize(i, plan[i], profiles, seed, camera, region, topo, noise_std)

    if workers == 1:
        for i in range(n):
            yield job(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(job, range(n))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def generate_dataset(
    n: int,
    profiles=None,
    seed: int = 42,
    out_dir=".",
    camera: Camera | None = None,
    region: PoseRegion | None = None,
    topo: KinematicTopology | None = None,
    noise_std: float = 0.0,
    workers: int | None = None,
) -> dict:
    """Write ``n`` frames, ``annotations.jsonl`` and ``manifest.json`` under ``out_dir``.

    The manifest is written last, so its presence marks a complete dataset.
    Its checksum covers every frame and the annotation file, in order.
    """
    camera = camera or Camera()
    profiles = list(profiles or default_profiles())
    out = Path(out_dir)
    frames_dir = out / "frames"
    try:
        frames_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{frames_dir}: {exc.strerror}") from exc
    entries, lines, files = [], [], []
    for smp in iter_synthetic(n, profiles, seed, camera, region, topo, noise_std, workers):
        rel = f"frames/{smp.sample_id:06d}.hkd"
        path = out / rel
        try:
            write_hkd1(path, smp.frame.depth)
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror}") from exc
        files.append(path)
        entries.append({"id": smp.sample_id, "file": rel, "split": smp.split, "profile": smp.profile})
        lines.append(
            json.dumps(
                {
                    "id": smp.sample_id,
                    "joints_mm": smp.joints.tolist(),
                    "params": smp.params.tolist(),
                    "profile": smp.profile,
                    "split": smp.split,
                }
            )
        )
    ann = out / "annotations.jsonl"
    ann.write_text("\n".join(lines) + "\n")
    files.append(ann)
    manifest = {
        "schema": "handkin.dataset/1",
        "units": "mm",
        "seed": int(seed),
        "n": int(n),
        "camera": camera.to_dict(),
        "noise_std_mm": float(noise_std),
        "profiles": [p.to_dict() for p in profiles],
        "splits": {s: [e["id"] for e in entries if e["split"] == s] for s in SPLIT_FRACTIONS},
        "annotations": "annotations.jsonl",
        "samples": entries,
        "checksum": {"algorithm": "sha256", "value": file_digest(files)},
    }
    _atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    return manifest


def verify_dataset(root) -> bool:
    """Recompute the manifest checksum."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    files = [root / e["file"] for e in manifest["samples"]] + [root / manifest["annotations"]]
    return file_digest(files) == manifest["checksum"]["value"]
