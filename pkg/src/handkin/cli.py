"""``handkin`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
writes only below ``--out``; commands that produce files (and stdout-only
commands when ``--out`` is given) append one record to ``<out>/runs.jsonl``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .autodiff import fkine_jacobian_batch, finite_diff_jacobian
from .depth import PipelineConfig, augment, sample_rng
from .errors import InvalidArgumentError
from .losses import wrap_angle
from .geometry import TransformState, back_transform, gt_transform_params, normalize_points
from .hand_model import HandParameters, JointSet, fkine, fkine_batch
from .metrics import ik_angles
from .nn import NetworkSpec, load_checkpoint, save_checkpoint
from .renderer import default_profiles, generate_dataset, load_profiles
from .topology import BONE_LENGTHS, FINGER_VECTORS, JOINT_ANGLES, N_PARAMS, WRIST_VECTOR, default_topology
from .training import (
    MODE_OUTPUTS,
    MODES,
    Cascade,
    PoseModel,
    TrainingSet,
    default_specs,
    evaluate_pose,
    load_any,
    save_processed,
    train_cascade,
    train_posenet,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers


def _digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
        elif p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file() and q.name != "runs.jsonl"):
                h.update(str(f.relative_to(p)).encode())
                h.update(f.read_bytes())
    return h.hexdigest()


def _append_manifest(out, args, inputs, outputs, started) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rec = {
        "subcommand": args.command,
        "config": None if getattr(args, "config", None) is None else str(args.config),
        "seed": args.seed,
        "input_hash": _digest([p for p in inputs if p is not None]),
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.monotonic() - started, 6),
    }
    with open(out / "runs.jsonl", "a") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None


def _read_params(path) -> np.ndarray:
    """61 values: a JSON list, ``{"params": [...]}``, or whitespace-separated numbers."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    try:
        doc = json.loads(text)
        vals = doc["params"] if isinstance(doc, dict) else doc
    except (json.JSONDecodeError, KeyError, TypeError):
        vals = text.split()
    try:
        arr = np.array(vals, dtype=float)
    except (TypeError, ValueError):
        raise UsageError(f"{path}: parameters must be numbers") from None
    if arr.shape != (N_PARAMS,):
        raise UsageError(f"{path}: expected {N_PARAMS} values, got shape {arr.shape}")
    try:
        HandParameters.from_vector(arr)
    except InvalidArgumentError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return arr


def _read_joints(path) -> np.ndarray:
    doc = _read_json(path)
    entries = doc.get("joints") if isinstance(doc, dict) else doc
    try:
        if entries and isinstance(entries[0], dict):
            return JointSet.from_dict(entries).positions.copy()
        return JointSet(np.asarray(entries, dtype=float)).positions.copy()
    except (InvalidArgumentError, TypeError, ValueError, KeyError, IndexError) as exc:
        raise UsageError(f"{path}: not a 21-joint set ({exc})") from None


def _joints_doc(pos) -> dict:
    return {"units": "mm", "joints": JointSet(pos).to_dict()}


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _pgm(path, image) -> None:
    """8-bit PGM dump of a [-1, 1] raster (near = dark)."""
    img = np.asarray(image, dtype=float)
    g = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
        fh.write(g.tobytes())


def _config(args) -> dict:
    try:
        return cfgmod.load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"{args.config}: no such config file") from None
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


def _section(fn, *a, **k):
    try:
        return fn(*a, **k)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


def _specs(net_cfg, pipeline: PipelineConfig) -> dict:
    stages, fc, k = net_cfg.stages(), net_cfg.fc, net_cfg.downsample
    if pipeline.out_size % k or pipeline.crop_size % k:
        raise InvalidArgumentError("[network] downsample must divide both raster sizes")
    specs = {m: NetworkSpec(pipeline.out_size // k, MODE_OUTPUTS[m], stages, fc) for m in MODES}
    specs.update(default_specs(pipeline, k, stages, fc))
    return specs


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _config(args)
    rc = _section(cfgmod.renderer_config, cfg)
    profiles = load_profiles(rc.profiles) if rc.profiles else list(default_profiles())
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    started = time.monotonic()
    manifest = generate_dataset(args.n, profiles, args.seed, args.out, rc.camera, rc.region, noise_std=rc.noise_std_mm)
    out = Path(args.out)
    _append_manifest(out, args, [args.config], [out / "manifest.json", out / "annotations.jsonl", out / "frames"], started)
    _emit({"n": manifest["n"], "checksum": manifest["checksum"]["value"], "out": str(out)})
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    pipeline = _section(cfgmod.pipeline_config, cfg)
    started = time.monotonic()
    ts, splits, profiles = load_any(args.dataset, None, pipeline)
    src = json.loads((Path(args.dataset) / "manifest.json").read_text()).get("checksum", {})
    paths = save_processed(args.out, ts, splits, profiles, {"dataset": str(args.dataset), "checksum": src})
    _append_manifest(args.out, args, [args.config, args.dataset], paths, started)
    _emit({"n": len(ts), "out": str(args.out)})
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    cfg = _config(args)
    started = time.monotonic()
    ts, _, _ = load_any(args.dataset, None, _section(cfgmod.pipeline_config, cfg))
    rows = np.flatnonzero(ts.ids == args.id)
    if rows.size == 0:
        raise UsageError(f"sample id {args.id} not in {args.dataset}")
    smp = ts.sample(int(rows[0]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aug = augment(smp, sample_rng(args.seed, args.id), config=ts.pipeline)
    _pgm(out / f"sample{args.id}_input.pgm", smp.image)
    _pgm(out / f"sample{args.id}_augmented.pgm", aug.image)
    doc = {"id": args.id, "augment": aug.provenance["augment"], "state": aug.state.to_dict(), "joints_mm": aug.joints_gt.tolist()}
    (out / f"sample{args.id}_augmented.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    outputs = [out / f"sample{args.id}_{k}" for k in ("input.pgm", "augmented.pgm", "augmented.json")]
    _append_manifest(out, args, [args.config, args.dataset], outputs, started)
    _emit({"augment": doc["augment"], "files": [str(p) for p in outputs]})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    pipeline = _section(cfgmod.pipeline_config, cfg)
    tc = _section(cfgmod.train_config, cfg, seed=args.seed, epochs=args.epochs)
    specs = _section(_specs, _section(cfgmod.network_config, cfg), pipeline)
    started = time.monotonic()
    train, _, _ = load_any(args.dataset, ("train",), pipeline)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, csv_path, json_path = out / "checkpoint.bin", out / "report.csv", out / "report.json"
    meta = {"seed": tc.seed, "epoch": tc.epochs, "train": tc.to_dict(), "pipeline": dataclasses.asdict(pipeline), "mode": args.mode}
    if args.mode == "cascade":
        val = None
        try:
            val, _, _ = load_any(args.dataset, ("validation",), pipeline)
        except InvalidArgumentError:
            pass
        cascade, report = train_cascade(train, val, {k: specs[k] for k in ("box", "rot", "scale")}, tc)
        save_checkpoint(ckpt, cascade.networks(), dict(meta, kind="cascade"))
        with open(csv_path, "w") as fh:
            fh.write("stage,epoch,loss\n")
            for st in report["stages"]:
                for e, loss in enumerate(st["loss"], 1):
                    fh.write(f"{st['stage']},{e},{loss!r}\n")
        final = report
    else:
        model, report = train_posenet(train, specs[args.mode], tc, args.mode)
        fixed = None if model.fixed_shape is None else model.fixed_shape.tolist()
        save_checkpoint(ckpt, {"paramnet": model.network}, dict(meta, kind="posenet", fixed_shape=fixed))
        report.write_csv(csv_path)
        final = report.final
    json_path.write_text(json.dumps(final, indent=1, sort_keys=True) + "\n")
    _append_manifest(out, args, [args.config, args.dataset], [ckpt, csv_path, json_path], started)
    _emit({"checkpoint": str(ckpt), "report": str(csv_path), "final": final})
    return EXIT_OK


def _load_pose_model(path):
    nets, meta = load_checkpoint(path)
    if meta.get("kind") == "cascade":
        return None, nets, meta
    fixed = meta.get("fixed_shape")
    return PoseModel(nets["paramnet"], meta["mode"], None if fixed is None else np.asarray(fixed)), nets, meta


def cmd_eval(args) -> int:
    started = time.monotonic()
    model, nets, meta = _load_pose_model(args.checkpoint)
    pipeline = PipelineConfig(**meta["pipeline"]) if "pipeline" in meta else PipelineConfig()
    data, _, _ = load_any(args.dataset, tuple(args.split), pipeline)
    if model is not None:
        topo = default_topology()
        mean_shape = None
        if model.mode == "direct":
            train, _, _ = load_any(args.dataset, ("train",), pipeline)
            mean_shape = _train_mean_shape(train)
        doc = evaluate_pose(model, data, topo.limits, topo, mean_shape)
    else:
        cascade = Cascade(nets["box"], nets["rot"], nets["scale"], pipeline)
        t, a, s = cascade.estimate(data.images)
        doc = {
            "box_error_mm": float(np.mean(np.linalg.norm(t - data.t, axis=1))),
            "rot_error_deg": float(np.degrees(np.mean(np.abs(wrap_angle(a - data.alpha))))),
            "scale_error": float(np.mean(np.abs(s - data.s))),
            "n": int(len(data)),
        }
    doc["mode"] = meta.get("mode")
    doc["split"] = list(args.split)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        _append_manifest(out, args, [args.checkpoint, args.dataset], [out / "eval.json"], started)
    _emit(doc)
    return EXIT_OK


def _train_mean_shape(train: TrainingSet):
    if train.params is None:
        return None
    lam = np.zeros(N_PARAMS)
    for sl in (FINGER_VECTORS, WRIST_VECTOR, BONE_LENGTHS):
        lam[sl] = train.params[:, sl].mean(axis=0)
    return lam


def cmd_fk(args) -> int:
    started = time.monotonic()
    lam = _read_params(args.params)
    doc = _joints_doc(fkine(HandParameters.from_vector(lam)).positions)
    _emit(doc)
    if args.out:
        _append_manifest(args.out, args, [args.params], [], started)
    return EXIT_OK


def cmd_ik(args) -> int:
    started = time.monotonic()
    joints = _read_joints(args.joints)
    shape_src = _read_params(args.shape) if args.shape else default_topology().reference_parameters()
    shape = (shape_src[BONE_LENGTHS], shape_src[FINGER_VECTORS].reshape(4, 3), shape_src[WRIST_VECTOR])
    res = ik_angles(joints, shape)
    lam = res.parameters(joints, shape)
    _emit(
        {
            "angles_rad": res.angles.tolist(),
            "params": lam.tolist(),
            "residual_mm": res.residual,
            "converged": res.converged,
        }
    )
    if args.out:
        _append_manifest(args.out, args, [args.joints, args.shape], [], started)
    return 0 if np.isfinite(res.residual) else EXIT_FAIL


def gradcheck(seed: int, trials: int) -> dict:
    """Analytic vs central-difference Jacobians on random valid Λ."""
    if trials < 1:
        raise UsageError("--trials must be >= 1")
    topo = default_topology()
    rng = np.random.default_rng(seed)
    low, up = topo.limits
    ref = topo.reference_parameters()
    worst = 0.0
    for _ in range(trials):
        lam = ref.copy()
        lam[:3] = rng.uniform(-50, 50, 3)
        lam[3:6] = rng.uniform(-np.pi, np.pi, 3) * np.array([1.0, 0.45, 1.0])
        lam[FINGER_VECTORS] += rng.normal(0, 3, 12)
        lam[WRIST_VECTOR] += rng.normal(0, 3, 3)
        lam[BONE_LENGTHS] *= rng.uniform(0.8, 1.2, 15)
        lam[JOINT_ANGLES] = rng.uniform(low, up)
        analytic = fkine_jacobian_batch(lam[None], topo)[1][0]
        numeric = finite_diff_jacobian(lambda v: fkine_batch(v[None], topo)[0].ravel(), lam)
        rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1.0)
        worst = max(worst, float(rel))
    return {"seed": seed, "trials": trials, "max_rel_error": worst, "tolerance": GRADCHECK_TOL, "passed": worst < GRADCHECK_TOL}


def cmd_gradcheck(args) -> int:
    started = time.monotonic()
    doc = gradcheck(args.seed, args.trials)
    _emit(doc)
    if args.out:
        _append_manifest(args.out, args, [], [], started)
    return EXIT_OK if doc["passed"] else EXIT_FAIL


def cmd_normalize(args) -> int:
    started = time.monotonic()
    joints = _read_joints(args.joints)
    if args.state:
        d = _read_json(args.state)
        try:
            state = TransformState.identity().replace(t=d["t_mm"], alpha_z=d["alpha_z_rad"], s=d["s"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{args.state}: bad transform state ({exc})") from None
    else:
        t, a, s = gt_transform_params(joints)
        state = TransformState.identity().replace(t=t, alpha_z=a, s=s)
    out = back_transform(joints, state) if args.inverse else normalize_points(joints, state)
    doc = _joints_doc(out)
    doc["state"] = {"t_mm": state.t.tolist(), "alpha_z_rad": state.alpha_z, "s": state.s}
    _emit(doc)
    if args.out:
        _append_manifest(args.out, args, [args.joints, args.state], [], started)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handkin", description="Kinematic hand-model layer toolkit.")
    p.add_argument("--seed", type=int, default=42, help="seed for every random stream (default 42)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the global --seed")
        return sp

    g = add("gen", cmd_gen, "render a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)

    g = add("preprocess", cmd_preprocess, "preprocess a dataset into a normalized-image cache")
    g.add_argument("--config")
    g.add_argument("--dataset", required=True)
    g.add_argument("--out", required=True)

    g = add("augment-preview", cmd_augment_preview, "dump one augmented sample as PGM + JSON")
    g.add_argument("--config")
    g.add_argument("--dataset", required=True)
    g.add_argument("--id", type=int, default=0)
    g.add_argument("--out", required=True)

    g = add("train", cmd_train, "train PoseNet (variable_hand | fixed_hand | direct) or the cascade")
    g.add_argument("--config")
    g.add_argument("--dataset", required=True)
    g.add_argument("--mode", choices=MODES + ("cascade",), default="variable_hand")
    g.add_argument("--epochs", type=int)
    g.add_argument("--out", required=True)

    g = add("eval", cmd_eval, "evaluate a checkpoint, print metrics JSON")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--dataset", required=True)
    g.add_argument("--split", nargs="+", default=["test"])
    g.add_argument("--out")

    g = add("fk", cmd_fk, "forward kinematics of a 61-value parameter file")
    g.add_argument("params")
    g.add_argument("--out")

    g = add("ik", cmd_ik, "recover joint angles from a joint file")
    g.add_argument("joints")
    g.add_argument("--shape", help="parameter file whose shape columns are used (default: reference shape)")
    g.add_argument("--out")

    g = add("gradcheck", cmd_gradcheck, "analytic vs finite-difference Jacobian check")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--out")

    g = add("normalize", cmd_normalize, "apply (or with --inverse undo) the recenter/rotate/rescale chain")
    g.add_argument("joints")
    g.add_argument("--state", help="JSON with t_mm, alpha_z_rad, s (default: ground truth from the joints)")
    g.add_argument("--inverse", action="store_true")
    g.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"handkin {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidArgumentError as exc:
        print(f"handkin {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command in ("fk", "ik", "normalize") else EXIT_FAIL
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"handkin {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
