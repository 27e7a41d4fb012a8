"""Fully-convolutional pressure-bin classifier.

A strided convolutional encoder yields features at 1/2 (stem) and 1/4 ... 1/32
of the input; a feature-pyramid decoder fuses them top-down (upsample,
concatenate, convolve) and a head emits per-pixel logits over the pressure
bins at full resolution. The temporal variant runs the encoder on each frame
with shared weights and concatenates the deepest features across frames.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from handpressure.core import PressureBinning, dequantize, make_binning
from handpressure.errors import InvalidArgument, LoadError

PRESETS = {
    # stem, four pyramid stages (1/4 .. 1/32), decoder width, blocks per stage
    "tiny": {"stem": 16, "stages": (24, 32, 48, 64), "fpn": 32, "depth": 1},
    "paper": {"stem": 64, "stages": (128, 256, 512, 1024), "fpn": 128, "depth": 2},
}
IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)


@dataclass
class ModelConfig:
    input_w: int = 96
    input_h: int = 96
    preset: str = "tiny"
    n_frames: int = 1
    n_bins: int = 9

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidArgument(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.input_w % 32 or self.input_h % 32 or self.input_w <= 0 or self.input_h <= 0:
            raise InvalidArgument(f"input dims {self.input_w}x{self.input_h} must be positive multiples of 32")
        if self.n_frames < 1:
            raise InvalidArgument("n_frames must be >= 1")
        if self.n_bins < 2:
            raise InvalidArgument("n_bins must be >= 2")

    @classmethod
    def paper(cls, **kw) -> "ModelConfig":
        return cls(**{"input_w": 480, "input_h": 384, "preset": "paper", **kw})


def _conv_bn_relu(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride, 1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class _Stage(nn.Sequential):
    def __init__(self, cin, cout, depth):
        layers = [_conv_bn_relu(cin, cout, stride=2)]
        layers += [_conv_bn_relu(cout, cout) for _ in range(depth)]
        super().__init__(*layers)


class Encoder(nn.Module):
    def __init__(self, stem, stages, depth):
        super().__init__()
        self.stem = nn.Sequential(_conv_bn_relu(3, stem, stride=2), _conv_bn_relu(stem, stem))
        chans = (stem, *stages)
        self.stages = nn.ModuleList(_Stage(chans[i], chans[i + 1], depth) for i in range(len(stages)))

    def forward(self, x):
        x = self.stem(x)
        feats = [x]
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats  # [1/2, 1/4, 1/8, 1/16, 1/32]


def _up(x, like):
    return F.interpolate(x, size=like.shape[-2:], mode="bilinear", align_corners=False)


class PressureEstimator(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        p = PRESETS[self.config.preset]
        stages, fpn = p["stages"], p["fpn"]
        self.encoder = Encoder(p["stem"], stages, p["depth"])
        deepest_in = stages[-1] * self.config.n_frames
        self.lateral = nn.ModuleList(nn.Conv2d(c, fpn, 1) for c in (*stages[:-1], deepest_in))
        self.fuse = nn.ModuleList(_conv_bn_relu(2 * fpn, fpn) for _ in stages[:-1])
        self.head = nn.Sequential(_conv_bn_relu(fpn + p["stem"], fpn), nn.Conv2d(fpn, self.config.n_bins, 1))

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise InvalidArgument(f"expected (N, 3, H, W) input, got {tuple(x.shape)}")
        if x.shape[-1] % 32 or x.shape[-2] % 32:
            raise InvalidArgument(f"input dims {x.shape[-1]}x{x.shape[-2]} must be multiples of 32")

    def _decode(self, feats, deepest, size):
        top = self.lateral[-1](deepest)
        for i in range(len(self.fuse) - 1, -1, -1):
            lat = self.lateral[i](feats[i + 1])
            top = self.fuse[i](torch.cat([lat, _up(top, lat)], dim=1))
        stem = feats[0]
        out = self.head(torch.cat([_up(top, stem), stem], dim=1))
        return F.interpolate(out, size=size, mode="bilinear", align_corners=False)

    def forward(self, x):
        """(N, 3, H, W) normalized images -> (N, n_bins, H, W) logits."""
        if self.config.n_frames != 1:
            raise InvalidArgument("temporal model: use forward_temporal")
        self._check(x)
        feats = self.encoder(x)
        return self._decode(feats, feats[-1], x.shape[-2:])

    def forward_temporal(self, frames):
        """(N, T, 3, H, W) with the most recent frame last -> (N, n_bins, H, W) logits."""
        if frames.ndim != 5 or frames.shape[1] != self.config.n_frames:
            raise InvalidArgument(f"expected (N, {self.config.n_frames}, 3, H, W), got {tuple(frames.shape)}")
        n, t = frames.shape[:2]
        flat = frames.reshape(n * t, *frames.shape[2:])
        self._check(flat)
        feats = self.encoder(flat)
        per_frame = [f.reshape(n, t, *f.shape[1:]) for f in feats]
        deepest = per_frame[-1].reshape(n, -1, *per_frame[-1].shape[-2:])  # channel concat, frame order kept
        current = [f[:, -1] for f in per_frame]
        return self._decode(current, deepest, frames.shape[-2:])


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """uint8 (N, H, W, 3) or (H, W, 3) RGB -> normalized float (N, 3, H, W)."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise InvalidArgument(f"expected RGB images with 3 channels, got shape {arr.shape}")
    x = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype).permute(0, 3, 1, 2) / 255.0
    mean = torch.tensor(IMAGE_MEAN, dtype=dtype).view(1, 3, 1, 1)
    std = torch.tensor(IMAGE_STD, dtype=dtype).view(1, 3, 1, 1)
    return (x - mean) / std


@torch.no_grad()
def predict_logits(model: PressureEstimator, images, batch_size: int = 64) -> np.ndarray:
    """uint8 images -> (N, H, W, n_bins) float32 logits, evaluation mode."""
    was_training = model.training
    model.eval()
    arr = np.asarray(images)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    outs = []
    for i in range(0, len(arr), batch_size):
        outs.append(model(to_tensor(arr[i:i + batch_size])).permute(0, 2, 3, 1).numpy())
    model.train(was_training)
    out = np.concatenate(outs) if outs else np.zeros((0, *arr.shape[1:3], model.config.n_bins), np.float32)
    return out[0] if single else out


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the last axis; ties go to the lower bin."""
    return np.argmax(logits, axis=-1)  # numpy returns the first maximal index


def predict_labels(model: PressureEstimator, images, batch_size: int = 64) -> np.ndarray:
    return argmax_labels(predict_logits(model, images, batch_size))


def predict_pressure(model: PressureEstimator, img, b: PressureBinning):
    """Single RGB image -> camera-space pressure image in kPa."""
    return dequantize(predict_labels(model, img), b)


def loss(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean per-pixel cross-entropy. ``logits`` is (N, K, H, W); ``target`` (N, H, W) labels."""
    target = torch.as_tensor(target)
    if logits.ndim != 4 or target.ndim != 3:
        raise InvalidArgument("expected logits (N, K, H, W) and labels (N, H, W)")
    if logits.shape[0] != target.shape[0] or logits.shape[-2:] != target.shape[-2:]:
        raise InvalidArgument(f"logits {tuple(logits.shape)} and labels {tuple(target.shape)} do not match")
    if target.dtype.is_floating_point:
        raise InvalidArgument("labels must be integers")
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= logits.shape[1]):
        raise InvalidArgument("label out of range")
    return F.cross_entropy(logits, target.long())


# -- checkpoints -------------------------------------------------------------------

PVM1_MAGIC = b"PVM1"
_PVM1_HEADER = struct.Struct("<4sI")


@dataclass
class Checkpoint:
    model: PressureEstimator
    binning: PressureBinning = field(default_factory=make_binning)
    iteration: int = 0


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors, blobs, offset = [], [], 0
    for name, t in ckpt.model.state_dict().items():
        arr = t.detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": "PVM1",
        "config": asdict(ckpt.model.config),
        "binning": ckpt.binning.to_dict(),
        "iteration": int(ckpt.iteration),
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PVM1_HEADER.pack(PVM1_MAGIC, len(head)) + head + b"".join(blobs)


def decode_checkpoint(buf: bytes, source="<bytes>") -> Checkpoint:
    if len(buf) < _PVM1_HEADER.size:
        raise LoadError(source, "truncated checkpoint")
    magic, n = _PVM1_HEADER.unpack_from(buf)
    if magic != PVM1_MAGIC:
        raise LoadError(source, f"bad magic {magic!r}")
    start = _PVM1_HEADER.size
    try:
        header = json.loads(buf[start:start + n].decode())
        model = PressureEstimator(ModelConfig(**header["config"]))
        binning = PressureBinning.from_dict(header["binning"])
    except (ValueError, KeyError, TypeError, InvalidArgument) as exc:
        raise LoadError(source, f"bad checkpoint header: {exc}") from None
    data = memoryview(buf)[start + n:]
    state = {}
    try:
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            end = entry["offset"] + count * dtype.itemsize
            if end > len(data):
                raise ValueError(f"tensor {entry['name']} runs past end of file")
            arr = np.frombuffer(data[entry["offset"]:end], dtype=dtype).reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(arr.astype(dtype.newbyteorder("="), copy=True))
        if sum(len(t.numpy().tobytes()) for t in state.values()) != len(data):
            raise ValueError("trailing or missing tensor bytes")
        model.load_state_dict(state, strict=True)
    except (ValueError, KeyError, RuntimeError) as exc:
        raise LoadError(source, f"bad checkpoint tensors: {exc}") from None
    model.eval()
    return Checkpoint(model, binning, int(header["iteration"]))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(path, exc.strerror or str(exc)) from None
    return decode_checkpoint(buf, source=path)
