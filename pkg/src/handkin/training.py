"""Desk-scale training: the Box/Rot/Scale cascade and PoseNet in three modes."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace

from pathlib import Path

import numpy as np

from .autodiff import loss_gradient_batch
from .depth import (
    PipelineConfig,
    ProcessedSample,
    augment,
    crop_recenter_raster,
    downsample,
    load_dataset,
    preprocess_frame,
    rotate_raster,
)
from .errors import InvalidArgumentError
from .geometry import TransformState
from .hand_model import fkine_batch, transform_parameters
from .losses import wrap_angle
from .metrics import e_joint, ik_angles_batch, violation_stats
from .nn import AdamConfig, AdamState, Network, NetworkSpec, adam_step, backward, forward, init_weights
from .topology import (
    BONE_LENGTHS,
    FINGER_VECTORS,
    FINGERS,
    JOINT_ANGLES,
    N_PARAMS,
    WRIST_VECTOR,
    KinematicTopology,
    default_topology,
    joint_index,
)

MODES = ("variable_hand", "fixed_hand", "direct")
MODE_OUTPUTS = {"variable_hand": N_PARAMS, "fixed_hand": 31, "direct": 63}
POSE_COLUMNS = np.r_[np.arange(0, 6), np.arange(36, 61)]  # base pose + angles


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    lambda_constr: float = 1.0
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    augment: bool = True
    lr_final: float | None = None  # geometric per-epoch decay target; None keeps the rate constant

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning rate must be positive")
        if self.lr_final is not None and not self.lr_final > 0:
            raise InvalidArgumentError("lr_final must be positive")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.lambda_constr < 0:
            raise InvalidArgumentError("lambda_constr must be >= 0")

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon)

    def learning_rate_at(self, epoch: int) -> float:
        """Rate for a 1-based epoch: ``learning_rate`` decaying geometrically to ``lr_final``."""
        if self.lr_final is None or self.epochs <= 1:
            return self.learning_rate
        frac = (epoch - 1) / (self.epochs - 1)
        return float(self.learning_rate * (self.lr_final / self.learning_rate) ** frac)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingSet:
    """Preprocessed samples as stacked arrays (rotated COM-relative frame)."""

    images: np.ndarray  # (N, S, S)
    joints: np.ndarray  # (N, 21, 3) mm
    t: np.ndarray  # (N, 3) mm
    alpha: np.ndarray  # (N,) rad
    s: np.ndarray  # (N,)
    ids: np.ndarray  # (N,) int
    params: np.ndarray | None = None  # (N, 61) ground-truth Λ in the same frame
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_samples(cls, samples, params_cam=None, pipeline: PipelineConfig | None = None) -> "TrainingSet":
        samples = list(samples)
        if not samples:
            raise InvalidArgumentError("empty sample list")
        params = None
        if params_cam is not None:
            params = np.stack(
                [
                    transform_parameters(p, s.state.r_cam, np.array([0.0, 0.0, -s.state.com_depth]))
                    for p, s in zip(params_cam, samples)
                ]
            )
        return cls(
            images=np.stack([s.image for s in samples]).astype(np.float32),
            joints=np.stack([s.joints_gt for s in samples]),
            t=np.stack([s.state.t for s in samples]),
            alpha=np.array([s.state.alpha_z for s in samples]),
            s=np.array([s.state.s for s in samples]),
            ids=np.array([s.sample_id for s in samples], dtype=np.int64),
            params=params,
            pipeline=pipeline or PipelineConfig(),
        )

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return replace(
            self,
            images=self.images[idx],
            joints=self.joints[idx],
            t=self.t[idx],
            alpha=self.alpha[idx],
            s=self.s[idx],
            ids=self.ids[idx],
            params=None if self.params is None else self.params[idx],
        )

    def sample(self, i: int) -> ProcessedSample:
        state = TransformState.identity().replace(t=self.t[i], alpha_z=self.alpha[i], s=self.s[i])
        return ProcessedSample(self.images[i].astype(float), state, self.joints[i], int(self.ids[i]))

    def augmented(self, idx, seed: int, epoch: int):
        """Augmented images, joints and (t, alpha, s) for rows ``idx``; one stream per (seed, epoch, id)."""
        imgs, joints, t, a, s = [], [], [], [], []
        for i in idx:
            rng = np.random.default_rng([int(seed), int(epoch), int(self.ids[i])])
            smp = augment(self.sample(i), rng, config=self.pipeline)
            imgs.append(smp.image)
            joints.append(smp.joints_gt)
            t.append(smp.state.t)
            a.append(smp.state.alpha_z)
            s.append(smp.state.s)
        return np.stack(imgs), np.stack(joints), np.stack(t), np.array(a), np.array(s)

    def batch(self, idx, config: TrainConfig, epoch: int):
        if config.augment:
            return self.augmented(idx, config.seed, epoch)
        idx = np.asarray(idx)
        return self.images[idx].astype(float), self.joints[idx], self.t[idx], self.alpha[idx], self.s[idx]


# ------------------------------------------------------------------ inputs


def _factor(source: int, spec: NetworkSpec) -> int:
    if source % spec.input_size:
        raise InvalidArgumentError(f"input size {spec.input_size} does not divide raster size {source}")
    return source // spec.input_size


def full_input(images, spec: NetworkSpec):
    images = np.asarray(images, dtype=float)
    return downsample(images, _factor(images.shape[-1], spec))


def recentered(images, t_est, pipeline: PipelineConfig):
    return np.stack(
        [crop_recenter_raster(im, t, pipeline.cube_size, pipeline.crop_size).image for im, t in zip(images, t_est)]
    )


def derotated(crops, alpha_est, pipeline: PipelineConfig):
    return np.stack([rotate_raster(c, a, pipeline.pixel_mm, pipeline.min_weight) for c, a in zip(crops, alpha_est)])


# ------------------------------------------------------------ optimization


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    e_joint_mm: float = float("nan")
    violated_fraction: float = float("nan")
    extra: dict = field(default_factory=dict)


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "e_joint_mm", "violated_fraction"])
            for r in self.records:
                w.writerow([r.epoch, repr(float(r.loss)), repr(float(r.e_joint_mm)), repr(float(r.violated_fraction))])


def _fit(net: Network, n: int, batch_fn, loss_fn, config: TrainConfig, on_epoch=None, tag: int = 0) -> list[EpochRecord]:
    """Mini-batch Adam over ``n`` rows; ``batch_fn(idx, epoch) -> (x, target)``.

    ``loss_fn(y, target) -> (loss, dL/dy)`` works on de-standardized outputs.
    The permutation stream is seeded from ``(seed, tag)``.
    """
    state = AdamState.zeros_like(net.params)
    order_rng = np.random.default_rng([config.seed, tag])
    records = []
    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(n)
        adam = replace(config.adam, learning_rate=config.learning_rate_at(epoch))
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            x, target = batch_fn(idx, epoch)
            raw, cache = forward(net.params, net.spec, x, return_cache=True)
            y = net.out_mean + net.out_std * raw
            loss, dy = loss_fn(y, target)
            grads = backward(net.params, net.spec, x, dy * net.out_std, cache)
            net.params, state = adam_step(net.params, grads, state, adam)
            total += loss
        rec = EpochRecord(epoch, total / n)
        if on_epoch is not None:
            on_epoch(rec, net)
        records.append(rec)
    return records


def _standardizer(values, floor=1e-6):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    return values.mean(axis=0), np.maximum(values.std(axis=0), floor)


# ------------------------------------------------------------------ cascade


def translation_loss(y, target):
    d = y - target
    return 0.5 * float(np.sum(d * d)), d


def rotation_angle(y):
    """In-plane angle from RotNet's ``(cos, sin)``-like output pair."""
    y = np.asarray(y, dtype=float)
    return np.arctan2(y[:, 1], y[:, 0])


def rotation_loss_batch(y, target):
    """Squared wrapped angle error of ``atan2(y1, y0)`` with its gradient in ``y``."""
    d = wrap_angle(rotation_angle(y) - target)
    r2 = np.maximum(y[:, 0] ** 2 + y[:, 1] ** 2, 1e-12)
    grad = np.column_stack([-y[:, 1] / r2, y[:, 0] / r2]) * d[:, None]
    return 0.5 * float(np.sum(d * d)), grad


def scale_loss(y, target):
    d = y[:, 0] - target
    return 0.5 * float(np.sum(d * d)), d[:, None]


@dataclass
class Cascade:
    box: Network
    rot: Network
    scale: Network
    pipeline: PipelineConfig

    def estimate(self, images):
        """Per-stage estimates ``(t, alpha_z, s)`` for 176 px images."""
        images = np.asarray(images, dtype=float)
        t = self.box.predict(full_input(images, self.box.spec))
        crops = recentered(images, t, self.pipeline)
        a = rotation_angle(self.rot.predict(full_input(crops, self.rot.spec)))
        rot = derotated(crops, a, self.pipeline)
        s = self.scale.predict(full_input(rot, self.scale.spec))[:, 0]
        return t, a, s

    def networks(self) -> dict:
        return {"box": self.box, "rot": self.rot, "scale": self.scale}


def default_specs(pipeline: PipelineConfig | None = None, factor: int = 4, conv=None, fc=None) -> dict:
    """Box/Rot/Scale specs on ``factor``-downsampled inputs; ``conv``/``fc`` override the default backbone."""
    p = pipeline or PipelineConfig()
    kw = {k: v for k, v in (("conv", conv), ("fc", fc)) if v is not None}
    return {
        "box": NetworkSpec(p.out_size // factor, 3, **kw),
        "rot": NetworkSpec(p.crop_size // factor, 2, **kw),
        "scale": NetworkSpec(p.crop_size // factor, 1, **kw),
    }


def _stage_eval(val: TrainingSet | None, config: TrainConfig, fn):
    if val is None or len(val) == 0:
        return None
    imgs, _, t, a, s = val.batch(np.arange(len(val)), config, epoch=0)
    return fn(imgs, t, a, s)


def train_boxnet(train: TrainingSet, spec: NetworkSpec, config: TrainConfig, tag: int = 1):
    """BoxNet regressing the ground-truth translation ``t`` from full 176 px images."""
    box = Network(spec, init_weights(spec, np.random.default_rng([config.seed, tag])), *_standardizer(train.t))

    def batch_fn(idx, epoch):
        imgs, _, t, _, _ = train.batch(idx, config, epoch)
        return full_input(imgs, spec), t

    return box, _fit(box, len(train), batch_fn, translation_loss, config, tag=tag)


def train_rotnet(train: TrainingSet, spec: NetworkSpec, config: TrainConfig, box: Network | None = None, tag: int = 2):
    """RotNet on 128 px crops centered on BoxNet's estimate (or the COM when ``box`` is None).

    The network emits a 2-vector read as ``atan2(y1, y0)``, so the angle has no seam at ±π.
    """
    if spec.output != 2:
        raise InvalidArgumentError(f"RotNet needs 2 outputs, got {spec.output}")
    rng = np.random.default_rng([config.seed, tag])
    net = Network(spec, init_weights(spec, rng), np.zeros(2), np.ones(2))
    pl = train.pipeline

    def inputs(imgs):
        t = box.predict(full_input(imgs, box.spec)) if box is not None else np.zeros((len(imgs), 3))
        return full_input(recentered(imgs, t, pl), spec)

    def batch_fn(idx, epoch):
        imgs, _, _, a, _ = train.batch(idx, config, epoch)
        return inputs(imgs), a

    records = _fit(net, len(train), batch_fn, rotation_loss_batch, config, tag=tag)
    return net, records, inputs


def rotation_error_deg(net: Network, inputs, val: TrainingSet, config: TrainConfig) -> float:
    imgs, _, _, a, _ = val.batch(np.arange(len(val)), config, epoch=0)
    est = rotation_angle(net.predict(inputs(imgs)))
    return float(np.degrees(np.mean(np.abs(wrap_angle(est - a)))))


def train_cascade(train: TrainingSet, val: TrainingSet | None, specs: dict | None, config: TrainConfig):
    """BoxNet, then RotNet on BoxNet crops, then ScaleNet on de-rotated crops.

    Each stage trains on ground-truth targets while earlier stages stay
    frozen. Validation uses the same augmentation with epoch index 0.
    Returns ``(Cascade, report dict)``.
    """
    if len(train) == 0:
        raise InvalidArgumentError("empty training set")
    for name in ("t", "alpha", "s"):
        v = getattr(train, name)
        if v is None or not np.all(np.isfinite(v)):
            raise InvalidArgumentError(f"training set lacks ground-truth {name}")
    specs = specs or default_specs(train.pipeline)
    pl = train.pipeline
    report = {"stages": []}

    box, recs = train_boxnet(train, specs["box"], config)
    err = _stage_eval(val, config, lambda im, t, a, s: float(np.mean(np.linalg.norm(box.predict(full_input(im, box.spec)) - t, axis=1))))
    report["stages"].append({"stage": "box", "loss": [r.loss for r in recs], "val_error_mm": err})
    box_frozen = [p.copy() for p in box.params]

    # RotNet on top of the frozen BoxNet
    rot, recs, rot_inputs = train_rotnet(train, specs["rot"], config, box=box, tag=2)
    err = rotation_error_deg(rot, rot_inputs, val, config) if val is not None and len(val) else None
    report["stages"].append({"stage": "rot", "loss": [r.loss for r in recs], "val_error_deg": err})
    rot_frozen = [p.copy() for p in rot.params]

    # ScaleNet on top of both
    scale = Network(specs["scale"], init_weights(specs["scale"], np.random.default_rng([config.seed, 3])), *_standardizer(train.s))
    cascade = Cascade(box, rot, scale, pl)

    def scale_inputs(imgs):
        t = box.predict(full_input(imgs, box.spec))
        crops = recentered(imgs, t, pl)
        a = rotation_angle(rot.predict(full_input(crops, rot.spec)))
        return full_input(derotated(crops, a, pl), scale.spec)

    def scale_batch(idx, epoch):
        imgs, _, _, _, s = train.batch(idx, config, epoch)
        return scale_inputs(imgs), s

    recs = _fit(scale, len(train), scale_batch, scale_loss, config, tag=3)
    err = _stage_eval(val, config, lambda im, t, a, s: float(np.mean(np.abs(scale.predict(scale_inputs(im))[:, 0] - s))))
    report["stages"].append({"stage": "scale", "loss": [r.loss for r in recs], "val_error": err})
    report["frozen_unchanged"] = bool(
        all(np.array_equal(a, b) for a, b in zip(box_frozen, box.params))
        and all(np.array_equal(a, b) for a, b in zip(rot_frozen, rot.params))
    )
    return cascade, report


# ------------------------------------------------------------------ PoseNet


@dataclass
class PoseModel:
    network: Network
    mode: str
    fixed_shape: np.ndarray | None = None  # (61,) with the shape columns filled (fixed_hand)

    def full_parameters(self, y) -> np.ndarray:
        if self.mode == "variable_hand":
            return y
        lam = np.broadcast_to(self.fixed_shape, (len(y), N_PARAMS)).copy()
        lam[:, POSE_COLUMNS] = y
        return lam

    def predict(self, images, topo: KinematicTopology | None = None):
        """Joint estimates (B, 21, 3) and, for kinematic modes, the Λ estimates."""
        y = self.network.predict(full_input(images, self.network.spec))
        if self.mode == "direct":
            return y.reshape(-1, 21, 3), None
        lam = self.full_parameters(y)
        return fkine_batch(lam, topo), lam


def posenet_loss(model: PoseModel, y, targets, limits, lambda_constr, topo=None):
    """Loss and dL/dy for de-standardized network outputs ``y``."""
    if model.mode == "direct":
        d = y - np.asarray(targets).reshape(len(y), 63)
        return 0.5 * float(np.sum(d * d)), d
    lam = model.full_parameters(y)
    loss, grad, _ = loss_gradient_batch(lam, targets, limits, lambda_constr, topo)
    if model.mode == "fixed_hand":
        grad = grad[:, POSE_COLUMNS]
    return loss, grad


def _mean_shape(train: TrainingSet) -> np.ndarray:
    if train.params is None:
        raise InvalidArgumentError("fixed_hand mode needs ground-truth hand parameters")
    lam = np.zeros(N_PARAMS)
    for sl in (FINGER_VECTORS, WRIST_VECTOR, BONE_LENGTHS):
        lam[sl] = train.params[:, sl].mean(axis=0)
    return lam


def _ik_shapes(joints, mean_vectors, mean_wrist):
    """IK shape for direct-mode estimates: bone lengths measured on the estimate, base vectors from the training mean."""
    bones = np.stack(
        [
            np.linalg.norm(np.diff(joints[:, [joint_index(f, k) for k in ("MCP", "PIP", "DIP", "TIP")]], axis=1), axis=-1)
            for f in FINGERS
        ],
        axis=1,
    ).reshape(len(joints), 15)
    return np.maximum(bones, 1e-3), mean_vectors, mean_wrist


def evaluate_pose(model: PoseModel, data: TrainingSet, limits, topo=None, mean_shape=None) -> dict:
    """e_joint and violation statistics; direct-mode angles come from IK."""
    topo = topo or default_topology()
    joints, lam = model.predict(data.images, topo)
    if model.mode == "direct":
        ms = mean_shape if mean_shape is not None else topo.reference_parameters()
        shapes = _ik_shapes(joints, ms[FINGER_VECTORS].reshape(4, 3), ms[WRIST_VECTOR])
        angles = np.stack([r.angles for r in ik_angles_batch(joints, shapes, topo)])
    else:
        angles = lam[:, JOINT_ANGLES]
    stats = violation_stats(angles, limits)
    return {
        "e_joint_mm": e_joint(joints, data.joints),
        "violated_fraction": stats.violated_fraction,
        "avg_violation_deg": stats.avg_violation_given_violation,
        "avg_violation_total_deg": stats.avg_violation_total,
        "n": int(len(data)),
    }


def train_posenet(
    train: TrainingSet,
    spec: NetworkSpec,
    config: TrainConfig,
    mode: str = "variable_hand",
    topo: KinematicTopology | None = None,
    eval_set: TrainingSet | None = None,
):
    """ParamNet + FKINE (or the direct baseline) trained on L_joint + lambda * L_constr.

    Each epoch is scored on ``eval_set`` (default: the un-augmented training
    set). Returns ``(PoseModel, TrainReport)``.
    """
    if mode not in MODES:
        raise InvalidArgumentError(f"unknown mode {mode!r}; expected one of {MODES}")
    if spec.output != MODE_OUTPUTS[mode]:
        raise InvalidArgumentError(f"mode {mode} needs {MODE_OUTPUTS[mode]} outputs, spec has {spec.output}")
    topo = topo or default_topology()
    limits = topo.limits
    if mode == "direct":
        mean, std = _standardizer(train.joints.reshape(len(train), 63))
        fixed = None
    else:
        if train.params is None:
            raise InvalidArgumentError(f"mode {mode} needs ground-truth hand parameters for output scaling")
        mean, std = _standardizer(train.params)
        fixed = _mean_shape(train) if mode == "fixed_hand" else None
        if mode == "fixed_hand":
            mean, std = mean[POSE_COLUMNS], std[POSE_COLUMNS]
    rng = np.random.default_rng([config.seed, 10])
    model = PoseModel(Network(spec, init_weights(spec, rng), mean, std), mode, fixed)
    mean_shape = _mean_shape(train) if train.params is not None else None
    scoring = eval_set if eval_set is not None else train

    def batch_fn(idx, epoch):
        imgs, joints, _, _, _ = train.batch(idx, config, epoch)
        return full_input(imgs, spec), joints

    def loss_fn(y, target):
        return posenet_loss(model, y, target, limits, config.lambda_constr, topo)

    def on_epoch(rec, net):
        m = evaluate_pose(model, scoring, limits, topo, mean_shape)
        rec.e_joint_mm = m["e_joint_mm"]
        rec.violated_fraction = m["violated_fraction"]
        rec.extra = m

    report = TrainReport()
    report.records = _fit(model.network, len(train), batch_fn, loss_fn, config, on_epoch, tag=10)
    report.final = report.records[-1].extra if report.records else evaluate_pose(model, scoring, limits, topo, mean_shape)
    return model, report


# ---------------------------------------------------------------- datasets


def build_training_set(root, splits=None, pipeline: PipelineConfig | None = None, topo=None):
    """Preprocess a dataset directory, frame by frame, into a :class:`TrainingSet`.

    Returns ``(TrainingSet, split labels, profile names)``.
    """
    pipeline = pipeline or PipelineConfig()
    samples, params, split, prof = [], [], [], []
    for rec in load_dataset(root, splits):
        smp = preprocess_frame(rec.frame, rec.joints, rec.sample_id, pipeline, topo)
        smp.image = smp.image.astype(np.float32)
        samples.append(smp)
        params.append(rec.params)
        split.append(rec.split)
        prof.append(rec.profile)
    if not samples:
        raise InvalidArgumentError(f"{root}: no samples in splits {splits}")
    has_params = all(p is not None for p in params)
    ts = TrainingSet.from_samples(samples, params if has_params else None, pipeline)
    return ts, np.array(split), np.array(prof, dtype=object)


PROCESSED_FORMAT = "handkin.processed/1"


def save_processed(out_dir, ts: TrainingSet, splits, profiles, source: dict | None = None) -> list:
    """``images.npy`` (float32), ``records.jsonl`` and ``processed.json``; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "images.npy", ts.images.astype(np.float32))
    lines = []
    for i in range(len(ts)):
        lines.append(
            json.dumps(
                {
                    "id": int(ts.ids[i]),
                    "split": str(splits[i]),
                    "profile": None if profiles[i] is None else str(profiles[i]),
                    "t_mm": ts.t[i].tolist(),
                    "alpha_z_rad": float(ts.alpha[i]),
                    "s": float(ts.s[i]),
                    "joints_mm": ts.joints[i].tolist(),
                    "params": None if ts.params is None else ts.params[i].tolist(),
                }
            )
        )
    (out / "records.jsonl").write_text("\n".join(lines) + "\n")
    meta = {"format": PROCESSED_FORMAT, "n": len(ts), "pipeline": asdict(ts.pipeline), "source": source or {}}
    (out / "processed.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return [out / "images.npy", out / "records.jsonl", out / "processed.json"]


def load_processed(root, splits=None):
    """Inverse of :func:`save_processed`; returns ``(TrainingSet, split labels, profile names)``."""
    root = Path(root)
    meta = json.loads((root / "processed.json").read_text())
    if meta.get("format") != PROCESSED_FORMAT:
        raise InvalidArgumentError(f"{root}: not a preprocessed dataset")
    recs = [json.loads(line) for line in (root / "records.jsonl").read_text().splitlines() if line.strip()]
    images = np.load(root / "images.npy", mmap_mode="r")
    keep = [i for i, r in enumerate(recs) if splits is None or r["split"] in splits]
    if not keep:
        raise InvalidArgumentError(f"{root}: no samples in splits {splits}")
    sel = [recs[i] for i in keep]
    has_params = all(r["params"] is not None for r in sel)
    ts = TrainingSet(
        images=np.asarray(images[keep], dtype=np.float32),
        joints=np.array([r["joints_mm"] for r in sel], dtype=float),
        t=np.array([r["t_mm"] for r in sel], dtype=float),
        alpha=np.array([r["alpha_z_rad"] for r in sel], dtype=float),
        s=np.array([r["s"] for r in sel], dtype=float),
        ids=np.array([r["id"] for r in sel], dtype=np.int64),
        params=np.array([r["params"] for r in sel], dtype=float) if has_params else None,
        pipeline=PipelineConfig(**meta["pipeline"]),
    )
    return ts, np.array([r["split"] for r in sel]), np.array([r["profile"] for r in sel], dtype=object)


def load_any(root, splits=None, pipeline: PipelineConfig | None = None, topo=None):
    """A preprocessed cache if ``root`` holds one, otherwise preprocess the raw dataset."""
    if (Path(root) / "processed.json").exists():
        return load_processed(root, splits)
    if not (Path(root) / "manifest.json").exists():
        raise FileNotFoundError(f"{root}: neither a dataset nor a preprocessed cache")
    return build_training_set(root, splits, pipeline, topo)
