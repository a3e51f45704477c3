"""JSON run configuration: one file per run, sections mapped onto dataclasses.

Recognised sections: ``pipeline``, ``train``, ``network``, ``renderer``.
Unknown keys are rejected so typos fail loudly instead of silently
falling back to defaults.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .depth import Intrinsics, PipelineConfig
from .errors import InvalidArgumentError
from .nn import ConvStage
from .renderer import Camera, PoseRegion
from .training import TrainConfig

SECTIONS = ("pipeline", "train", "network", "renderer")


def load_config(path=None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise InvalidArgumentError(f"{path}: top level must be an object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise InvalidArgumentError(f"{path}: unknown sections {sorted(unknown)}")
    return doc


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise InvalidArgumentError(f"[{where}] unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidArgumentError(f"[{where}] {exc}") from None


def pipeline_config(cfg: dict) -> PipelineConfig:
    return _build(PipelineConfig, cfg.get("pipeline", {}), "pipeline")


def train_config(cfg: dict, **overrides) -> TrainConfig:
    values = dict(cfg.get("train", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return _build(TrainConfig, values, "train")


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    """Backbone shared by every network; ``downsample`` maps raster size to input size."""

    conv: tuple = ((8, 5, 4), (16, 5, 4))
    fc: tuple = (512,)
    downsample: int = 4

    def stages(self) -> tuple:
        return tuple(ConvStage(**c) if isinstance(c, dict) else ConvStage(*c) for c in self.conv)


def network_config(cfg: dict) -> NetworkConfig:
    net = _build(NetworkConfig, cfg.get("network", {}), "network")
    if net.downsample < 1:
        raise InvalidArgumentError("[network] downsample must be >= 1")
    net.stages()  # validates
    return net


@dataclasses.dataclass(frozen=True)
class RendererConfig:
    camera: Camera = dataclasses.field(default_factory=Camera)
    region: PoseRegion = dataclasses.field(default_factory=PoseRegion)
    noise_std_mm: float = 0.0
    profiles: str | None = None  # path to a profile JSON; None = built-in profiles


def renderer_config(cfg: dict) -> RendererConfig:
    values = dict(cfg.get("renderer", {}))
    unknown = set(values) - {"camera", "region", "noise_std_mm", "profiles"}
    if unknown:
        raise InvalidArgumentError(f"[renderer] unknown keys {sorted(unknown)}")
    cam = values.get("camera")
    if cam is not None:
        try:
            cam = Camera(int(cam["width"]), int(cam["height"]), Intrinsics(**cam["intrinsics"]))
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"[renderer.camera] {exc}") from None
        if cam.width < 1 or cam.height < 1:
            raise InvalidArgumentError("[renderer.camera] frame size must be positive")
    region = values.get("region")
    if region is not None:
        region = _build(PoseRegion, {k: tuple(v) if isinstance(v, list) else v for k, v in region.items()}, "renderer.region")
    noise = float(values.get("noise_std_mm", 0.0))
    if noise < 0:
        raise InvalidArgumentError("[renderer] noise_std_mm must be >= 0")
    return RendererConfig(cam or Camera(), region or PoseRegion(), noise, values.get("profiles"))
