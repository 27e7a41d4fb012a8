"""Command-line entry points: ``handpressure <subcommand> ...``.

Every subcommand writes into ``--out`` and finishes by writing
``manifest.json``, which lists each produced file with its SHA-256.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from handpressure.core import (
    CAMERA,
    P_CONTACT_KPA,
    PressureBinning,
    PressureImage,
    contact_map,
    dequantize,
    make_binning,
    read_pvp1,
    write_pvp1,
)
from handpressure.errors import InvalidArgument, LoadError, SetupError

log = logging.getLogger("handpressure")


# -- accumulation ----------------------------------------------------------------


@dataclass
class AccumulationCanvas:
    """Per-pixel maximum of predicted pressure (kPa) over a frame stream."""

    values: np.ndarray | None = None
    frames: int = 0

    def add(self, pressure) -> "AccumulationCanvas":
        p = np.asarray(pressure.values if isinstance(pressure, PressureImage) else pressure, dtype=np.float64)
        if p.ndim != 2:
            raise InvalidArgument("pressure frames must be 2-D")
        if self.values is None:
            self.values = p.copy()
        elif p.shape != self.values.shape:
            raise InvalidArgument(f"frame {self.frames} is {p.shape}, canvas is {self.values.shape}")
        else:
            np.maximum(self.values, p, out=self.values)
        self.frames += 1
        return self

    def image(self) -> PressureImage:
        if self.values is None:
            raise InvalidArgument("canvas is empty")
        return PressureImage(self.values, space=CAMERA, pixel_pitch=None)

    def render(self, binning: PressureBinning | None = None) -> np.ndarray:
        return colorize(self.image().values, binning)


# zero / low / high pressure anchors
_BLACK, _PURPLE, _YELLOW = np.array([0, 0, 0.0]), np.array([128, 0, 160.0]), np.array([255, 230, 0.0])


def colorize(kpa: np.ndarray, binning: PressureBinning | None = None) -> np.ndarray:
    """RGB uint8 rendering: black for no pressure, purple through yellow on a log scale above."""
    b = binning or make_binning()
    lo, hi = b.edges[1], b.edges[-2]
    p = np.asarray(kpa, dtype=np.float64)
    with np.errstate(divide="ignore"):
        t = np.clip((np.log(np.maximum(p, 1e-12)) - np.log(lo)) / (np.log(hi) - np.log(lo)), 0, 1)
    rgb = np.where(t[..., None] < 0.5, _BLACK + (_PURPLE - _BLACK) * (t[..., None] * 2),
                   _PURPLE + (_YELLOW - _PURPLE) * (t[..., None] * 2 - 1))
    rgb[p < lo] = 0
    return np.rint(rgb).astype(np.uint8)


def accumulate_pressure(frames, predict, binning: PressureBinning | None = None, batch_size: int = 32):
    """Max-accumulate predicted pressure over an iterable of uint8 RGB frames.

    ``predict`` maps an image batch to bin labels.
    """
    binning = binning or make_binning()
    canvas = AccumulationCanvas()
    batch = []

    def flush():
        for lab in np.asarray(predict(np.stack(batch))):
            canvas.add(dequantize(lab, binning))
        batch.clear()

    for f in frames:
        f = np.asarray(f)
        if batch and f.shape != batch[0].shape:
            raise InvalidArgument(f"frame shape changed from {batch[0].shape} to {f.shape}")
        if canvas.values is not None and f.shape[:2] != canvas.values.shape:
            raise InvalidArgument(f"frame shape changed to {f.shape[:2]}")
        batch.append(f)
        if len(batch) == batch_size:
            flush()
    if batch:
        flush()
    if canvas.frames == 0:
        raise InvalidArgument("empty frame stream")
    return canvas


# -- helpers ---------------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {"command": command,
                "artifacts": {p.relative_to(out).as_posix(): _sha256(p) for p in files}}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_kv(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _predictor(ckpt_arg):
    """(predict_labels callable, binning) for ``--ckpt``; ``zero`` means the zero guesser."""
    from handpressure.model import load_checkpoint, predict_labels
    from handpressure.train import ZeroGuesser

    if ckpt_arg == "zero":
        return ZeroGuesser().predict_labels, make_binning(), None
    ckpt = load_checkpoint(ckpt_arg)
    return (lambda imgs: predict_labels(ckpt.model, imgs)), ckpt.binning, ckpt


def _frameset(args):
    from handpressure.data import load_frameset

    fs = load_frameset(args.data)
    if getattr(args, "participants", None):
        fs = fs.select_participants(args.participants.split(","))
    if len(fs) == 0:
        raise InvalidArgument(f"no frames selected from {args.data}")
    return fs


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args):
    from handpressure.data import Persona, stroke_scenes, synthesize_dataset, synthesize_sample, write_recording

    size = (args.size, args.size)
    seed = args.seed or 0
    if args.stroke:
        scenes = stroke_scenes(Persona.make(seed), args.stroke, size=size, seed=seed)
        write_recording(args.out, [synthesize_sample(s) for s in scenes])
    else:
        synthesize_dataset(args.out, args.scenes, seed=seed, n_personas=args.personas, size=size)
    print(f"wrote {args.stroke or args.scenes} frames to {args.out}")


def cmd_train(args):
    from handpressure.data import load_frameset, split_by_participant
    from handpressure.train import TrainConfig, train

    if not args.config:
        raise UsageError("train: --config is required")
    cfg = TrainConfig.read(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if not cfg.train_dir:
        raise SetupError("config has no train_dir")
    train_set = load_frameset(cfg.train_dir)
    if args.participants:
        train_set = train_set.select_participants(args.participants.split(","))
    if cfg.val_dir:
        val_set = load_frameset(cfg.val_dir)
    elif len(train_set):
        tr, va, _ = split_by_participant(train_set.participants(), test=[], seed=cfg.seed)
        train_set, val_set = train_set.select_participants(tr), train_set.select_participants(va)
    else:
        val_set = None
    result = train(cfg, train_set, val_set, args.out)
    (Path(args.out) / "config.cfg").write_text(cfg.to_text())
    (Path(args.out) / "history.json").write_text(json.dumps(result.history, indent=1) + "\n")
    print(f"trained {cfg.total_iters} iterations in {result.seconds:.0f}s -> {result.checkpoint_path}")


def cmd_evaluate(args):
    from handpressure.train import evaluate_checkpoint

    fs = _frameset(args)
    report = evaluate_checkpoint("zero" if args.ckpt == "zero" else args.ckpt, fs)
    out = Path(args.out)
    (out / "report.tsv").write_text(report.to_tsv())
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report.to_tsv(), end="")


def cmd_degrade_eval(args):
    from handpressure.data import DegradeSpec
    from handpressure.train import evaluate_checkpoint

    fs = _frameset(args)
    predict, binning, ckpt = _predictor(args.ckpt)
    target = ckpt if ckpt is not None else "zero"
    h, w = fs.images.shape[1:3]
    conditions = [("native", None)]
    for f in (int(x) for x in args.factors.split(",")):
        if f > 1:
            conditions.append((f"1/{f}", DegradeSpec("resolution", (max(1, w // f), max(1, h // f)))))
    if args.monochrome:
        conditions.append(("monochrome", DegradeSpec("monochrome")))
    lines = ["condition\tmetric\tvalue"]
    summary = {}
    for name, spec in conditions:
        rep = evaluate_checkpoint(target, fs, degrade_spec=spec)
        summary[name] = {k: getattr(rep, k) for k in ("temporal_accuracy", "contact_iou", "volumetric_iou", "mae")}
        lines += [f"{name}\t{k}\t{v!r}" for k, v in summary[name].items() if v is not None]
    out = Path(args.out)
    (out / "degrade.tsv").write_text("\n".join(lines) + "\n")
    (out / "degrade.json").write_text(json.dumps(summary, indent=2) + "\n")
    print("\n".join(lines))


def cmd_sensitivity(args):
    from handpressure.data import load_recording
    from handpressure.sensitivity import export_sensitivity, occlusion_sensitivity

    predict, binning, _ = _predictor(args.ckpt)
    if args.image:
        bgr = cv2.imread(args.image, cv2.IMREAD_COLOR)
        if bgr is None:
            raise LoadError(args.image, "unreadable image")
        img = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    elif args.data:
        frames = list(load_recording(args.data))
        if not 0 <= args.index < len(frames):
            raise InvalidArgument(f"--index {args.index} out of range for {len(frames)} frames")
        img = frames[args.index].rgb
    else:
        raise UsageError("sensitivity: give --image or --data")
    smap = occlusion_sensitivity(None, img, args.grid, binning, predict=predict)
    export_sensitivity(smap, args.out)
    print(f"sensitivity grid {args.grid}x{args.grid}, normalized={smap.normalized}")


def cmd_accumulate(args):
    from handpressure.data import load_recording

    predict, binning, _ = _predictor(args.ckpt)
    samples = list(load_recording(args.data))
    canvas = accumulate_pressure((s.rgb for s in samples), predict, binning)
    out = Path(args.out)
    write_pvp1(out / "canvas.pvp1", canvas.image())
    cv2.imwrite(str(out / "canvas.png"), cv2.cvtColor(canvas.render(binning), cv2.COLOR_RGB2BGR))
    summary = {"frames": canvas.frames}
    if samples:
        from handpressure.metrics import contact_iou

        gt = AccumulationCanvas()
        for s in samples:
            gt.add(s.pressure_gt)
        write_pvp1(out / "canvas_gt.pvp1", gt.image())
        summary["contact_iou_vs_gt"] = contact_iou(contact_map(canvas.values), contact_map(gt.values))
    (out / "accumulate.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))


def cmd_baseline(args):
    from handpressure.baseline import PlaneModel, random_pose_sequence, read_mesh, scale_sweep, write_mesh

    out = Path(args.out)
    if args.synthetic:
        rng = np.random.default_rng(args.seed or 0)
        meshes = random_pose_sequence(rng, args.synthetic)
        plane = PlaneModel.horizontal(1e-3, 256, 256, origin=(-0.128, -0.128))
        from handpressure.baseline import contact_from_mesh

        gts = [contact_from_mesh(m, plane, args.eps) for m in meshes]
        seq = out / "sequence"
        (seq / "meshes").mkdir(parents=True, exist_ok=True)
        (seq / "contact").mkdir(exist_ok=True)
        for i, (m, g) in enumerate(zip(meshes, gts)):
            write_mesh(seq / "meshes" / f"{i:06d}.obj", m)
            write_pvp1(seq / "contact" / f"{i:06d}.pvp1", PressureImage(g.astype(np.float64) * 2 * P_CONTACT_KPA,
                                                                          space=CAMERA, pixel_pitch=None))
        (seq / "plane.txt").write_text("pitch = 0.001\nwidth = 256\nheight = 256\norigin_x = -0.128\n"
                                       "origin_y = -0.128\n")
    elif args.data:
        seq = Path(args.data)
        kv = _read_kv(seq / "plane.txt")
        try:
            plane = PlaneModel.horizontal(float(kv["pitch"]), int(kv["width"]), int(kv["height"]),
                                          origin=(float(kv.get("origin_x", 0)), float(kv.get("origin_y", 0))))
        except (KeyError, ValueError) as exc:
            raise LoadError(seq / "plane.txt", f"bad plane description: {exc}") from None
        meshes = [read_mesh(p) for p in sorted((seq / "meshes").glob("*.obj"))]
        gts = [contact_map(read_pvp1(p)) for p in sorted((seq / "contact").glob("*.pvp1"))]
    else:
        raise UsageError("baseline: give --data or --synthetic")
    scale, iou = scale_sweep(meshes, gts, plane, (args.scale_min, args.scale_max), args.steps, args.eps)
    result = {"best_scale": scale, "contact_iou": iou, "frames": len(meshes), "steps": args.steps}
    (out / "baseline.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="key = value file of option defaults (train: training config)")

    p = _Parser(prog="handpressure", description="Hand pressure estimation from RGB images.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic recording")
    s.add_argument("--scenes", type=int, default=200)
    s.add_argument("--personas", type=int, default=12)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--stroke", type=int, default=0, help="write one finger-writing stroke of N frames instead")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train an estimator")
    s.add_argument("--participants", help="comma-separated subset of training participants")
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("evaluate", cmd_evaluate, "score a checkpoint"),
                              ("degrade-eval", cmd_degrade_eval, "score a checkpoint on degraded inputs")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--ckpt", required=True, help="checkpoint path or 'zero'")
        s.add_argument("--data", required=True)
        s.add_argument("--participants", help="comma-separated participants to evaluate on")
        if name == "degrade-eval":
            s.add_argument("--factors", default="2,4,16,32", help="comma-separated downsampling factors")
            s.add_argument("--monochrome", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("sensitivity", parents=[common], help="occlusion sensitivity map")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image")
    s.add_argument("--data")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--grid", type=int, default=48)
    s.set_defaults(func=cmd_sensitivity)

    s = sub.add_parser("accumulate", parents=[common], help="max-accumulate predicted pressure over a recording")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_accumulate)

    s = sub.add_parser("baseline", parents=[common], help="mesh-plane contact baseline with scale sweep")
    s.add_argument("--data", help="directory with meshes/*.obj, contact/*.pvp1 and plane.txt")
    s.add_argument("--synthetic", type=int, default=0, help="generate a synthetic pose sequence of N frames")
    s.add_argument("--scale-min", type=float, default=0.8)
    s.add_argument("--scale-max", type=float, default=1.2)
    s.add_argument("--steps", type=int, default=81)
    s.add_argument("--eps", type=float, default=0.0)
    s.set_defaults(func=cmd_baseline)
    return p


def _apply_config(parser, argv, args):
    """Re-parse with defaults taken from ``--config`` (not for train, whose config is a TrainConfig)."""
    if not args.config or args.command == "train":
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "out", "config")}
    defaults = {}
    for key, value in _read_kv(args.config).items():
        if key not in actions:
            raise UsageError(f"{args.config}: unknown key {key!r}")
        act = actions[key]
        try:
            if isinstance(act, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes")
            else:
                defaults[key] = act.type(value) if act.type else value
        except ValueError:
            raise UsageError(f"{args.config}: bad value for {key}: {value!r}") from None
    sub.set_defaults(**defaults)
    for act in sub._actions:  # config values satisfy required options
        if act.dest in defaults:
            act.required = False
    return parser.parse_args(argv)


def run_command(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, argv, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        args.func(args)
        write_manifest(out, args.command)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (InvalidArgument, LoadError, SetupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
