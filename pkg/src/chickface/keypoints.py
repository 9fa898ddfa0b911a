"""Seven-channel heatmap keypoint model: targets, decoding, training.

The backbone is pluggable (any module mapping (B, 3, H, W) to
(B, 7, H/stride, W/stride)); a small convolutional one ships for tests and
desk-scale runs. Supervision is per-pixel MSE against truncated Gaussian
target heatmaps.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from . import kernels
from .dataset import DatasetManifest
from .errors import ModelError, RejectedInputError
from .geometry import KEYPOINT_NAMES, KeypointSet, from_labelme, load_labelme
from .cropping import rasterize_box

DEFAULT_VISIBILITY_FLOOR = 0.1


@dataclass
class Heatmaps:
    data: np.ndarray  # (7, H', W') float32, non-negative
    stride: int

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[0] != len(KEYPOINT_NAMES):
            raise RejectedInputError(f"heatmaps must be (7, H, W), got {d.shape}")
        if d.size and float(d.min()) < 0:
            raise RejectedInputError("heatmaps must be non-negative")
        self.data = d


@dataclass
class KeypointModelConfig:
    input_size: tuple[int, int] = (256, 256)  # (H, W)
    stride: int = 4
    sigma: float = 2.0  # in heatmap cells
    backbone_ref: object | None = None

    def __post_init__(self):
        h, w = self.input_size
        if self.stride <= 0 or h % self.stride or w % self.stride:
            raise RejectedInputError(
                f"stride {self.stride} must divide input size {self.input_size}"
            )
        if self.sigma <= 0:
            raise RejectedInputError(f"sigma must be positive, got {self.sigma}")

    @property
    def heatmap_size(self) -> tuple[int, int]:
        return (self.input_size[0] // self.stride, self.input_size[1] // self.stride)


class TinyPoseBackbone(nn.Module):
    """Three-conv heatmap head with overall stride 4; for tests and CI runs."""

    def __init__(self, channels: int = 64, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, channels // 2, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels // 2, channels, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, len(KEYPOINT_NAMES), 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class StubKeypointModel(nn.Module):
    """Emits fixed heatmaps regardless of input; for wiring tests."""

    def __init__(self, maps: np.ndarray):
        super().__init__()
        self.register_buffer("maps", torch.from_numpy(np.asarray(maps, dtype=np.float32)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.maps.unsqueeze(0).expand(x.shape[0], -1, -1, -1)


def render_targets(kps: KeypointSet, cfg: KeypointModelConfig) -> Heatmaps:
    """Gaussian target heatmaps; invisible keypoints give all-zero channels."""
    hh, ww = cfg.heatmap_size
    xy = kps.as_array()
    vis = kps.visible_array()
    in_h, in_w = cfg.input_size
    for name, (x, y), v in zip(KEYPOINT_NAMES, xy, vis):
        if v and not (0 <= x <= in_w and 0 <= y <= in_h):
            raise RejectedInputError(f"visible keypoint {name} at ({x}, {y}) outside input {cfg.input_size}")
    cells = xy / cfg.stride - 0.5  # continuous cell coordinates
    data = kernels.render_gaussian_heatmaps(cells, vis.astype(np.uint8), hh, ww, float(cfg.sigma))
    return Heatmaps(data=data, stride=cfg.stride)


def decode(
    heatmaps: Heatmaps,
    orig_size: tuple[int, int],
    visibility_floor: float = DEFAULT_VISIBILITY_FLOOR,
) -> KeypointSet:
    """Argmax-with-quarter-offset decode back to `orig_size` coordinates.

    `orig_size` is (height, width). A channel whose max is below the
    visibility floor decodes as invisible.
    """
    coords, maxvals = kernels.decode_peaks(heatmaps.data)
    hh, ww = heatmaps.data.shape[1:]
    in_h = hh * heatmaps.stride
    in_w = ww * heatmaps.stride
    oh, ow = orig_size
    xy = coords * heatmaps.stride * np.array([ow / in_w, oh / in_h])
    visible = maxvals >= visibility_floor
    return KeypointSet.from_arrays(xy, visible)


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to (height, width), preserving dtype via PIL."""
    h, w = size
    return np.asarray(Image.fromarray(image).resize((w, h), Image.BILINEAR))


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """HWC uint8/float image -> CHW float tensor scaled to [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.shape[2] != 3:
        raise RejectedInputError(f"expected 3 channels, got shape {arr.shape}")
    t = torch.from_numpy(np.array(arr, copy=True)).permute(2, 0, 1).float()
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        t = t / 255.0
    return t


def predict_keypoints(
    face_image: np.ndarray, model: nn.Module, cfg: KeypointModelConfig
) -> KeypointSet:
    """Resize, forward, decode, and map keypoints back to face coordinates."""
    h, w = face_image.shape[:2]
    resized = resize_image(face_image, cfg.input_size)
    try:
        model.eval()
        with torch.no_grad():
            out = model(image_to_tensor(resized).unsqueeze(0))
    except Exception as exc:
        raise ModelError(f"keypoint inference failed: {exc}") from exc
    maps = out[0].clamp_min(0).cpu().numpy()
    return decode(Heatmaps(data=maps, stride=cfg.stride), (h, w))


# --- training -----------------------------------------------------------------


def train_on_samples(
    samples: list[tuple[np.ndarray, KeypointSet]],
    cfg: KeypointModelConfig,
    epochs: int,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 8,
) -> tuple[nn.Module, list[float]]:
    """MSE-train a heatmap model on (face image, keypoints-in-image-coords) pairs.

    Deterministic for a fixed seed. Returns the model and per-epoch losses.
    """
    if not samples:
        raise RejectedInputError("empty training set")
    torch.manual_seed(seed)
    model = cfg.backbone_ref if isinstance(cfg.backbone_ref, nn.Module) else TinyPoseBackbone(seed=seed)

    inputs, targets = [], []
    for image, kps in samples:
        h, w = image.shape[:2]
        resized = resize_image(image, cfg.input_size)
        scale_x = cfg.input_size[1] / w
        scale_y = cfg.input_size[0] / h
        scaled = KeypointSet.from_arrays(
            kps.as_array() * np.array([scale_x, scale_y]), kps.visible_array()
        )
        inputs.append(image_to_tensor(resized))
        targets.append(torch.from_numpy(render_targets(scaled, cfg).data))
    x = torch.stack(inputs)
    y = torch.stack(targets)

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.MSELoss()
    rng = np.random.default_rng(seed)
    history: list[float] = []
    model.train()
    for _ in range(int(epochs)):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(samples), batch_size):
            idx = torch.from_numpy(order[start : start + batch_size].copy())
            opt.zero_grad()
            pred = model(x[idx])
            loss = loss_fn(pred, y[idx])
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
        history.append(epoch_loss / len(samples))
    return model, history


def load_annotated_faces(
    manifest: DatasetManifest, data_root: str | Path
) -> list[tuple[np.ndarray, KeypointSet]]:
    """Collect (face crop, crop-frame keypoints) pairs from LabelMe sidecars.

    Sidecars live next to each image (same stem, .json). Frames without a
    sidecar or without a box/keypoints are skipped.
    """
    root = Path(data_root)
    out = []
    for frame in manifest.accepted_frames():
        img_path = root / frame.image_ref
        ann_path = root / "annotations" / f"{frame.frame_id}.json"
        if not ann_path.exists():
            ann_path = img_path.with_suffix(".json")
        if not ann_path.exists():
            continue
        box, kps = from_labelme(load_labelme(ann_path))
        if box is None or kps is None:
            continue
        image = np.asarray(Image.open(img_path).convert("RGB"))
        x0, y0, x1, y1 = rasterize_box(box, image.shape[:2])
        out.append((image[y0:y1, x0:x1], kps.translate(-x0, -y0)))
    return out


def train_keypoint_model(
    manifest: DatasetManifest,
    cfg: KeypointModelConfig,
    epochs: int,
    data_root: str | Path = ".",
    seed: int = 0,
    lr: float = 1e-3,
) -> tuple[nn.Module, list[float]]:
    """Train from a manifest whose frames carry revised keypoint ground truth."""
    samples = load_annotated_faces(manifest, data_root)
    if not samples:
        raise RejectedInputError("no annotated, accepted frames to train on")
    return train_on_samples(samples, cfg, epochs, seed=seed, lr=lr)


def save_keypoint_model(model: nn.Module, cfg: KeypointModelConfig, path: str | Path) -> None:
    torch.save(
        {
            "state_dict": model.state_dict(),
            "config": {
                "input_size": list(cfg.input_size),
                "stride": cfg.stride,
                "sigma": cfg.sigma,
            },
        },
        path,
    )


def load_keypoint_model(path: str | Path) -> tuple[nn.Module, KeypointModelConfig]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    c = payload["config"]
    cfg = KeypointModelConfig(
        input_size=tuple(c["input_size"]), stride=int(c["stride"]), sigma=float(c["sigma"])
    )
    model = TinyPoseBackbone()
    model.load_state_dict(payload["state_dict"])
    return model, cfg


def model_version_hash(model: nn.Module) -> str:
    """Stable content hash of the model weights (for round bookkeeping)."""
    import hashlib

    buf = io.BytesIO()
    for key, tensor in sorted(model.state_dict().items()):
        buf.write(key.encode())
        buf.write(tensor.detach().cpu().numpy().tobytes())
    return hashlib.sha256(buf.getvalue()).hexdigest()[:16]


def keypoints_to_json(kps: dict[str, KeypointSet], path: str | Path) -> None:
    doc = {fid: k.to_dict() for fid, k in sorted(kps.items())}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def keypoints_from_json(path: str | Path) -> dict[str, KeypointSet]:
    doc = json.loads(Path(path).read_text())
    return {fid: KeypointSet.from_dict(d) for fid, d in doc.items()}
