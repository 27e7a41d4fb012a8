"""Training loop, schedules, checkpointing and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch

from handpressure.core import CAMERA, PressureBinning, PressureImage, dequantize, make_binning, quantize
from handpressure.data import DegradeSpec, FrameSet, degrade, load_frameset
from handpressure.errors import InvalidArgument, SetupError
from handpressure.metrics import FrameMetricAccumulator, MetricsReport, aggregate
from handpressure.model import (
    Checkpoint,
    ModelConfig,
    PressureEstimator,
    load_checkpoint,
    loss,
    predict_labels,
    save_checkpoint,
    to_tensor,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr_phase1: float = 1e-3
    iters_phase1: int = 2000
    lr_phase2: float = 1e-4
    iters_phase2: int = 8000
    seed: int = 0
    ckpt_interval: int = 1000
    train_dir: str = ""
    val_dir: str = ""
    input_w: int = 96
    input_h: int = 96
    preset: str = "tiny"

    def __post_init__(self):
        if self.batch_size <= 0:
            raise InvalidArgument("batch_size must be positive")
        if self.iters_phase1 < 0 or self.iters_phase2 < 0 or self.total_iters <= 0:
            raise InvalidArgument("iteration counts must be non-negative with a positive total")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise InvalidArgument("learning rates must be positive")
        if self.ckpt_interval <= 0:
            raise InvalidArgument("ckpt_interval must be positive")

    @property
    def total_iters(self) -> int:
        return self.iters_phase1 + self.iters_phase2

    def lr_at(self, iteration: int) -> float:
        """Learning rate for the 0-based ``iteration``; phases are back to back."""
        return self.lr_phase1 if iteration < self.iters_phase1 else self.lr_phase2

    def model_config(self) -> ModelConfig:
        return ModelConfig(input_w=self.input_w, input_h=self.input_h, preset=self.preset)

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        base = dict(iters_phase1=100_000, iters_phase2=500_000, input_w=480, input_h=384, preset="paper",
                    ckpt_interval=10_000)
        return cls(**{**base, **kw})

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgument(f"config line {n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise InvalidArgument(f"config line {n}: unknown key {key!r}")
            kind = types[key]
            try:
                values[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
            except ValueError:
                raise InvalidArgument(f"config line {n}: bad value for {key}: {value!r}") from None
        return cls(**values)

    @classmethod
    def read(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Path
    history: list  # dicts: {"iteration", "loss", "lr"} and validation rows with "val_contact_iou"
    seconds: float


def _labels(frames: FrameSet, binning: PressureBinning) -> np.ndarray:
    return quantize(frames.pressures, binning)


def _probe_writable(out_dir: Path):
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise SetupError(f"checkpoint directory {out_dir} is not writable: {exc}") from None


def train(cfg: TrainConfig, train_set: FrameSet, val_set: FrameSet | None, out_dir,
          binning: PressureBinning | None = None, log_every: int = 50, val_frames: int = 256) -> TrainResult:
    """Adam over the two-phase schedule; checkpoints every ``cfg.ckpt_interval`` iterations."""
    binning = binning or make_binning()
    out_dir = Path(out_dir)
    if train_set is None or len(train_set) == 0:
        raise SetupError("training set is empty")
    if train_set.images.shape[1:3] != (cfg.input_h, cfg.input_w):
        raise SetupError(f"training images are {train_set.images.shape[2]}x{train_set.images.shape[1]}, "
                         f"config expects {cfg.input_w}x{cfg.input_h}")
    _probe_writable(out_dir)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = PressureEstimator(cfg.model_config())
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_phase1)
    x_all = to_tensor(train_set.images)
    y_all = torch.from_numpy(_labels(train_set, binning))
    n = len(train_set)

    history = []
    order = rng.permutation(n)
    cursor = 0
    running = []
    start = time.time()
    model.train()
    for it in range(cfg.total_iters):
        lr = cfg.lr_at(it)
        for group in opt.param_groups:
            group["lr"] = lr
        if cursor + cfg.batch_size > n:
            order, cursor = rng.permutation(n), 0
        idx = torch.from_numpy(order[cursor:cursor + cfg.batch_size])
        cursor += cfg.batch_size
        batch_loss = loss(model(x_all[idx]), y_all[idx])
        opt.zero_grad()
        batch_loss.backward()
        opt.step()
        running.append(batch_loss.item())
        if it == 0 or (it + 1) % log_every == 0 or it + 1 == cfg.total_iters:
            history.append({"iteration": it + 1, "loss": float(np.mean(running)), "lr": lr})
            running = []
        done = it + 1
        if done % cfg.ckpt_interval == 0 or done == cfg.total_iters:
            ckpt = Checkpoint(model, binning, done)
            save_checkpoint(out_dir / f"ckpt_{done:06d}.pvm", ckpt)
            row = {"iteration": done}
            if val_set is not None and len(val_set):
                rep = evaluate_checkpoint(ckpt, val_set.subset(np.arange(min(len(val_set), val_frames))))
                row["val_contact_iou"] = rep.contact_iou
                row["val_volumetric_iou"] = rep.volumetric_iou
                model.train()
            history.append(row)
            log.info("iter %d loss %.4f %s", done, history[-2 if len(history) > 1 else -1].get("loss", float("nan")),
                     {k: v for k, v in row.items() if k != "iteration"})
    model.eval()
    final = Checkpoint(model, binning, cfg.total_iters)
    final_path = out_dir / "model_final.pvm"
    save_checkpoint(final_path, final)
    return TrainResult(final, final_path, history, time.time() - start)


# -- evaluation -----------------------------------------------------------------


class ZeroGuesser:
    """Predicts the no-pressure bin everywhere."""

    binning = make_binning()

    def predict_labels(self, images):
        images = np.asarray(images)
        return np.zeros(images.shape[:3], dtype=np.int64)


def _as_predictor(ckpt):
    if isinstance(ckpt, str) and ckpt == "zero":
        return ZeroGuesser().predict_labels, None
    if isinstance(ckpt, (str, Path)):
        ckpt = load_checkpoint(ckpt)
    if isinstance(ckpt, Checkpoint):
        model = ckpt.model
        return (lambda imgs: predict_labels(model, imgs)), ckpt.binning
    if hasattr(ckpt, "predict_labels"):
        return ckpt.predict_labels, getattr(ckpt, "binning", None)
    raise InvalidArgument(f"cannot evaluate {type(ckpt).__name__}")


def evaluate_predictions(labels, dataset: FrameSet, binning: PressureBinning) -> MetricsReport:
    """Score per-frame predicted bin labels against the dataset's ground truth."""
    labels = np.asarray(labels)
    if len(labels) != len(dataset):
        raise InvalidArgument(f"{len(labels)} predictions for {len(dataset)} frames")
    items = []
    for lab, gt, meta in zip(labels, dataset.pressures, dataset.metas):
        est = dequantize(lab, binning)
        gt_img = PressureImage(gt, space=CAMERA, pixel_pitch=dataset.pixel_pitch)
        items.append((FrameMetricAccumulator().add(est, gt_img), meta))
    return aggregate(items)


def evaluate_checkpoint(ckpt, dataset, binning: PressureBinning | None = None,
                        degrade_spec: DegradeSpec | None = None, batch_size: int = 64) -> MetricsReport:
    """Predict every frame of ``dataset`` (a FrameSet or recording directory) and score it.

    ``ckpt`` may be a :class:`Checkpoint`, a checkpoint path, ``"zero"`` for the
    zero guesser, or any object with ``predict_labels(images)``.
    """
    if not isinstance(dataset, FrameSet):
        dataset = load_frameset(dataset)
    if len(dataset) == 0:
        raise InvalidArgument("dataset is empty")
    predict, ckpt_binning = _as_predictor(ckpt)
    if binning is not None and ckpt_binning is not None and binning != ckpt_binning:
        raise InvalidArgument("checkpoint binning does not match the evaluation binning")
    binning = binning or ckpt_binning or make_binning()
    labels = []
    for i in range(0, len(dataset), batch_size):
        imgs = dataset.images[i:i + batch_size]
        if degrade_spec is not None:
            imgs = np.stack([degrade(im, degrade_spec) for im in imgs])
        labels.append(np.asarray(predict(imgs)))
    return evaluate_predictions(np.concatenate(labels), dataset, binning)
