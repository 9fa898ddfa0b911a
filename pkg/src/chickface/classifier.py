"""Gender classification: backbone feature extraction + three-layer head.

Any of the six standard backbones (plus a tiny one for CI) feeds a pooled
feature vector into three fully connected layers ending in a single logit;
the sigmoid of that logit is the male probability. Training is BCE + Adam
with best-validation-accuracy epoch selection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ModelError, ProtocolError, RejectedInputError
from .keypoints import image_to_tensor, resize_image

BACKBONES = ("alexnet", "efficientnet_b0", "inception_v3", "resnet50", "resnet101", "vgg16", "tiny_test")

# Nominal square input side per backbone (the pretrained sources' defaults).
BACKBONE_INPUT = {
    "alexnet": 224,
    "efficientnet_b0": 224,
    "inception_v3": 299,
    "resnet50": 224,
    "resnet101": 224,
    "vgg16": 224,
    "tiny_test": 64,
}

# Per-channel normalization of the pretrained source; tiny_test is raw [0,1].
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ClassifierConfig:
    backbone: str = "resnet50"
    head_dims: tuple[int, int, int] = (512, 128, 1)
    lr: float = 1e-5
    epochs: int = 50
    threshold: float = 0.5
    seed: int = 0
    pretrained_ref: str | None = None
    batch_size: int = 32
    finetune: str = "full"  # "full" | "head"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise RejectedInputError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.lr <= 0:
            raise RejectedInputError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise RejectedInputError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.threshold < 1.0:
            raise RejectedInputError(f"threshold must be in (0, 1), got {self.threshold}")
        self.head_dims = tuple(int(d) for d in self.head_dims)
        if len(self.head_dims) != 3 or self.head_dims[-1] != 1:
            raise RejectedInputError(f"head needs exactly three layers ending in 1, got {self.head_dims}")
        if self.finetune not in ("full", "head"):
            raise RejectedInputError(f"finetune must be 'full' or 'head', got {self.finetune!r}")

    @property
    def input_side(self) -> int:
        return BACKBONE_INPUT[self.backbone]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32).ravel()
        if not np.all(np.isfinite(v)):
            raise RejectedInputError("non-finite feature vector")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Prediction:
    p: float
    gender: str
    logit: float


class TinyTestBackbone(nn.Module):
    """Two bias-free conv blocks (conv + BN + ReLU) + global average pool.

    Fixed random conv weights; BN starts as identity, so a fresh backbone
    maps an all-zero image to an all-zero feature vector.
    """

    feature_dim = 16

    def __init__(self, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(8),
            nn.ReLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(16),
            nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.features(x)).flatten(1)


class ClassifierHead(nn.Module):
    """Three fully connected layers, ReLU between them, scalar logit out."""

    def __init__(self, in_dim: int, dims: tuple[int, int, int] = (512, 128, 1)):
        super().__init__()
        d1, d2, d3 = dims
        self.fc1 = nn.Linear(in_dim, d1)
        self.fc2 = nn.Linear(d1, d2)
        self.fc3 = nn.Linear(d2, d3)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.fc1(f))
        h = torch.relu(self.fc2(h))
        return self.fc3(h).squeeze(-1)


class GenderClassifier(nn.Module):
    """Backbone feature extractor + classification head -> single logit."""

    def __init__(self, backbone: nn.Module, head: ClassifierHead, backbone_name: str):
        super().__init__()
        self.backbone = backbone
        self.head = head
        self.backbone_name = backbone_name

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))


class _TorchvisionFeatures(nn.Module):
    """Wrap a torchvision classification net as a pooled feature extractor."""

    def __init__(self, name: str):
        super().__init__()
        import torchvision.models as tvm

        if name == "alexnet":
            net = tvm.alexnet(weights=None)
            self.body = nn.Sequential(net.features, net.avgpool, nn.Flatten(1))
        elif name == "vgg16":
            net = tvm.vgg16(weights=None)
            self.body = nn.Sequential(net.features, net.avgpool, nn.Flatten(1))
        elif name == "efficientnet_b0":
            net = tvm.efficientnet_b0(weights=None)
            self.body = nn.Sequential(net.features, net.avgpool, nn.Flatten(1))
        elif name in ("resnet50", "resnet101"):
            net = tvm.resnet50(weights=None) if name == "resnet50" else tvm.resnet101(weights=None)
            self.body = nn.Sequential(
                net.conv1, net.bn1, net.relu, net.maxpool,
                net.layer1, net.layer2, net.layer3, net.layer4,
                net.avgpool, nn.Flatten(1),
            )
        elif name == "inception_v3":
            net = tvm.inception_v3(weights=None, aux_logits=True, init_weights=True)
            net.fc = nn.Identity()
            net.aux_logits = False
            net.AuxLogits = None
            self.body = net
        else:
            raise RejectedInputError(f"unknown torchvision backbone {name!r}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def build_backbone(cfg: ClassifierConfig) -> tuple[nn.Module, int]:
    """Instantiate the configured backbone; returns (module, feature_dim).

    `pretrained_ref`, when given, is a path to a state_dict for the backbone
    (pretrained weights are an external input, never downloaded here).
    """
    torch.manual_seed(cfg.seed)
    if cfg.backbone == "tiny_test":
        net: nn.Module = TinyTestBackbone(seed=0)
    else:
        net = _TorchvisionFeatures(cfg.backbone)
    if cfg.pretrained_ref:
        try:
            state = torch.load(cfg.pretrained_ref, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except Exception as exc:
            raise ModelError(f"failed to load pretrained weights {cfg.pretrained_ref!r}: {exc}") from exc
    net.eval()
    side = cfg.input_side
    with torch.no_grad():
        dim = int(net(torch.zeros(1, 3, side, side)).shape[1])
    return net, dim


def normalize_image_tensor(t: torch.Tensor, backbone: str) -> torch.Tensor:
    if backbone == "tiny_test":
        return t
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (t - mean) / std


def prepare_input(image: np.ndarray, cfg: ClassifierConfig) -> torch.Tensor:
    """Resize to the backbone's nominal square input and normalize."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise RejectedInputError(f"classifier input must be HxWx3, got shape {arr.shape}")
    side = cfg.input_side
    resized = resize_image(arr, (side, side))
    return normalize_image_tensor(image_to_tensor(resized), cfg.backbone)


def extract_features(image: np.ndarray, backbone: nn.Module, cfg: ClassifierConfig) -> FeatureVector:
    """Deterministic eval-mode feature extraction."""
    x = prepare_input(image, cfg).unsqueeze(0)
    backbone.eval()
    with torch.no_grad():
        out = backbone(x)
    return FeatureVector(out[0].cpu().numpy())


def head_forward(f: FeatureVector | np.ndarray, head: ClassifierHead) -> float:
    """Single logit from a feature vector through the three-layer head."""
    values = f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float32)
    x = torch.from_numpy(np.asarray(values, dtype=np.float32)).reshape(1, -1)
    if x.shape[1] != head.fc1.in_features:
        raise RejectedInputError(
            f"feature dim {x.shape[1]} does not match head input {head.fc1.in_features}"
        )
    head.eval()
    with torch.no_grad():
        return float(head(x)[0])


def sigmoid(logit: float) -> float:
    """p = 1 / (1 + e^-logit)."""
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    e = math.exp(logit)
    return e / (1.0 + e)


def decide_gender(p: float, threshold: float = 0.5) -> str:
    """male iff p > threshold; female otherwise (p == threshold is female)."""
    return "male" if p > threshold else "female"


def bce_loss(p: float, label: int) -> float:
    """Binary cross-entropy with p clamped to [eps, 1-eps], eps = 1e-7."""
    eps = 1e-7
    p = min(max(p, eps), 1.0 - eps)
    y = float(label)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def predict(image: np.ndarray, model: GenderClassifier, cfg: ClassifierConfig) -> Prediction:
    x = prepare_input(image, cfg).unsqueeze(0)
    model.eval()
    with torch.no_grad():
        logit = float(model(x)[0])
    p = sigmoid(logit)
    return Prediction(p=p, gender=decide_gender(p, cfg.threshold), logit=logit)


# --- training -----------------------------------------------------------------


@dataclass
class TrainingSample:
    """One training example: an image (HxWx3) or a precomputed feature vector."""

    x: np.ndarray
    gender: str
    chick_id: str
    frame_id: str = ""

    @property
    def label(self) -> int:
        return 1 if self.gender == "male" else 0

    @property
    def is_features(self) -> bool:
        return np.asarray(self.x).ndim == 1


@dataclass
class TrainResult:
    model: GenderClassifier
    history: list[dict]
    best: dict = field(default_factory=dict)


def _check_disjoint(train: list[TrainingSample], val: list[TrainingSample]) -> None:
    overlap = {s.chick_id for s in train} & {s.chick_id for s in val}
    if overlap:
        raise ProtocolError(f"chick IDs shared between train and val: {sorted(overlap)[:5]}")


def _stack_inputs(samples: list[TrainingSample], cfg: ClassifierConfig) -> torch.Tensor:
    if samples[0].is_features:
        return torch.from_numpy(np.stack([np.asarray(s.x, dtype=np.float32) for s in samples]))
    return torch.stack([prepare_input(s.x, cfg) for s in samples])


def train_classifier(
    train_samples: list[TrainingSample],
    val_samples: list[TrainingSample],
    cfg: ClassifierConfig,
) -> TrainResult:
    """BCE + Adam training with best-accuracy epoch selection.

    Train and validation chick IDs must be disjoint. `best` holds the
    earliest epoch reaching the maximum validation accuracy, its model
    snapshot, and the validation scores at that epoch. With feature-vector
    samples only the head is trained.
    """
    if not train_samples or not val_samples:
        raise RejectedInputError("empty train or validation split")
    _check_disjoint(train_samples, val_samples)
    feature_mode = train_samples[0].is_features
    if any(s.is_features != feature_mode for s in train_samples + val_samples):
        raise RejectedInputError("cannot mix image and feature-vector samples")

    torch.manual_seed(cfg.seed)
    if feature_mode:
        in_dim = len(np.asarray(train_samples[0].x).ravel())
        backbone: nn.Module = nn.Identity()
    else:
        backbone, in_dim = build_backbone(cfg)
    head = ClassifierHead(in_dim, cfg.head_dims)
    model = GenderClassifier(backbone, head, cfg.backbone)

    if cfg.finetune == "head" and not feature_mode:
        for p in model.backbone.parameters():
            p.requires_grad_(False)
        params = list(model.head.parameters())
    else:
        params = [p for p in model.parameters() if p.requires_grad]

    x_train = _stack_inputs(train_samples, cfg)
    y_train = torch.tensor([s.label for s in train_samples], dtype=torch.float32)
    x_val = _stack_inputs(val_samples, cfg)
    y_val = np.array([s.label for s in val_samples])

    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best: dict = {}

    def evaluate() -> tuple[float, np.ndarray]:
        model.eval()
        scores = []
        with torch.no_grad():
            for start in range(0, len(val_samples), cfg.batch_size):
                logits = model(x_val[start : start + cfg.batch_size])
                scores.extend(sigmoid(float(v)) for v in logits)
        scores_arr = np.array(scores)
        preds = scores_arr > cfg.threshold
        return float((preds == (y_val == 1)).mean()), scores_arr

    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for start in range(0, len(train_samples), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            opt.zero_grad()
            logits = model(x_train[idx])
            p = torch.sigmoid(logits).clamp(1e-7, 1.0 - 1e-7)
            y = y_train[idx]
            loss = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
        val_accuracy, val_scores = evaluate()
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(train_samples), "val_accuracy": val_accuracy})
        if not best or val_accuracy > best["val_accuracy"]:
            best = {
                "epoch": epoch,
                "val_accuracy": val_accuracy,
                "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
                "val_scores": val_scores,
            }

    if best:
        model.load_state_dict(best["state_dict"])
    else:  # epochs == 0: the untrained model is the result
        _, val_scores = evaluate()
        best = {"epoch": -1, "val_accuracy": None, "state_dict": model.state_dict(), "val_scores": val_scores}
    return TrainResult(model=model, history=history, best=best)


def save_history_csv(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_accuracy"])])


def save_classifier(model: GenderClassifier, cfg: ClassifierConfig, path: str | Path) -> None:
    """Versioned snapshot with the config embedded."""
    torch.save(
        {"format_version": 1, "config": asdict(cfg), "state_dict": model.state_dict()},
        path,
    )


def load_classifier(path: str | Path) -> tuple[GenderClassifier, ClassifierConfig]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    c = dict(payload["config"])
    c["head_dims"] = tuple(c["head_dims"])
    cfg = ClassifierConfig(**c)
    backbone, in_dim = build_backbone(cfg)
    model = GenderClassifier(backbone, ClassifierHead(in_dim, cfg.head_dims), cfg.backbone)
    model.load_state_dict(payload["state_dict"])
    return model, cfg
