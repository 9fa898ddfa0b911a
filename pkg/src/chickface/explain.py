"""Grad-CAM++ saliency over the last convolutional layer, plus overlays.

The classification score driving the gradients is the raw pre-sigmoid
logit (negated when explaining the female decision of the one-logit head):
sigmoid gradients saturate, the logit does not, and the map then stays
invariant to constant shifts of the final bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .classifier import ClassifierConfig, GenderClassifier, prepare_input, sigmoid
from .errors import RejectedInputError

EPS = 1e-8


@dataclass
class SaliencyMap:
    data: np.ndarray  # (H, W) floats
    normalized: bool = True

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 2:
            raise RejectedInputError(f"saliency map must be 2-D, got shape {d.shape}")
        if self.normalized and d.size:
            if float(d.min()) < -1e-6 or float(d.max()) > 1.0 + 1e-6:
                raise RejectedInputError("normalized map must lie in [0, 1]")
        self.data = d


def find_last_spatial_layer(model: nn.Module) -> nn.Module:
    """Default Grad-CAM target: the last Conv2d module in the network."""
    last = None
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            last = module
    if last is None:
        raise RejectedInputError("model has no convolutional layer to target")
    return last


def resolve_layer(model: nn.Module, name: str) -> nn.Module:
    for mod_name, module in model.named_modules():
        if mod_name == name:
            return module
    raise RejectedInputError(f"no module named {name!r} in model")


def gradcam_pp(
    model: nn.Module,
    image: np.ndarray,
    target_layer: nn.Module | str | None = None,
    cfg: ClassifierConfig | None = None,
    target: str = "predicted",
) -> SaliencyMap:
    """Grad-CAM++ map for one image, upsampled to image size, max-normalized.

    `target` selects the explained class: "male" uses the logit, "female"
    the negated logit, "predicted" picks per the model's own decision.
    Pixel-wise alpha weights come from first/second/third order gradient
    terms; the weighted activation sum is ReLU'd before upsampling.
    """
    if cfg is None:
        cfg = ClassifierConfig(backbone=getattr(model, "backbone_name", "tiny_test"))
    if target_layer is None:
        target_layer = find_last_spatial_layer(model)
    elif isinstance(target_layer, str):
        target_layer = resolve_layer(model, target_layer)

    x = prepare_input(image, cfg).unsqueeze(0)
    x.requires_grad_(True)  # keeps the graph alive even for frozen backbones
    model.eval()

    activations: list[torch.Tensor] = []
    handle = target_layer.register_forward_hook(lambda m, i, o: activations.append(o))
    try:
        with torch.enable_grad():
            logit = model(x).reshape(())
    finally:
        handle.remove()
    if not activations:
        raise RejectedInputError("target layer produced no activations")
    acts = activations[-1]
    if acts.ndim != 4:
        raise RejectedInputError(f"target layer output is not spatial (shape {tuple(acts.shape)})")

    if target == "predicted":
        target = "male" if sigmoid(float(logit.detach())) > cfg.threshold else "female"
    score = logit if target == "male" else -logit
    grads = torch.autograd.grad(score, acts, retain_graph=False)[0]

    g2 = grads * grads
    g3 = g2 * grads
    sum_acts = acts.sum(dim=(2, 3), keepdim=True)
    alpha = g2 / (2.0 * g2 + sum_acts * g3 + EPS)
    alpha = torch.where(grads != 0, alpha, torch.zeros_like(alpha))
    weights = (alpha * F.relu(grads)).sum(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * acts).sum(dim=1, keepdim=True))

    h, w = image.shape[:2]
    cam = F.interpolate(cam, size=(h, w), mode="bilinear", align_corners=False)
    arr = cam[0, 0].detach().cpu().numpy().astype(np.float32)
    peak = float(arr.max())
    if peak > 0:
        arr = arr / peak
    return SaliencyMap(data=arr, normalized=True)


def warm_cool_colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to a cool-to-warm (blue -> green -> orange/red) RGB ramp.

    Warmth (red minus blue) is monotone in the input value.
    """
    v = np.clip(np.asarray(values, dtype=np.float32), 0.0, 1.0)
    r = np.clip(3.0 * v - 1.5, 0.0, 1.0)
    g = np.clip(np.minimum(3.0 * v + 0.5, -3.0 * v + 3.5), 0.0, 1.0)
    b = np.clip(1.5 - 3.0 * v, 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255.0).astype(np.uint8)


def overlay(image: np.ndarray, smap: SaliencyMap, alpha: float) -> np.ndarray:
    """Alpha-blend the colormapped saliency onto the image (uint8 RGB out)."""
    if not smap.normalized:
        raise RejectedInputError("overlay expects a normalized saliency map")
    if not 0.0 <= alpha <= 1.0:
        raise RejectedInputError(f"alpha must be in [0, 1], got {alpha}")
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[:, :, :3].astype(np.float32)
    colors = warm_cool_colormap(smap.data).astype(np.float32)
    blended = (1.0 - alpha) * img + alpha * colors
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def export_explanation(
    image: np.ndarray,
    image_id: str,
    model: GenderClassifier,
    cfg: ClassifierConfig,
    out_dir: str | Path,
    alpha: float = 0.45,
    target_layer: str | None = None,
) -> dict:
    """Write heatmap PNG, overlay PNG and a JSON record for one input."""
    from .classifier import predict

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred = predict(image, model, cfg)
    smap = gradcam_pp(model, image, target_layer=target_layer, cfg=cfg)
    heat = warm_cool_colormap(smap.data)
    Image.fromarray(heat).save(out_dir / f"{image_id}_saliency.png")
    Image.fromarray(overlay(image, smap, alpha)).save(out_dir / f"{image_id}_overlay.png")
    record = {
        "image_id": image_id,
        "gender": pred.gender,
        "p": pred.p,
        "logit": pred.logit,
        "map_stats": {
            "min": float(smap.data.min()),
            "max": float(smap.data.max()),
            "mean": float(smap.data.mean()),
        },
    }
    (out_dir / f"{image_id}_explain.json").write_text(json.dumps(record, indent=2) + "\n")
    return record
