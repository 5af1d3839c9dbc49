"""Patch-grid encoders.

Four model ids:

* ``dct16`` — deterministic 16x16 block DCT filter bank (C=256, no weights,
  works fully offline; flat image regions concentrate their L2 mass in the
  DC channel, which is exactly the uneven-distribution regime the toolkit's
  diagnostics probe);
* ``resnet50`` / ``efficientnet_b0`` — torchvision backbones, final
  convolutional feature map as the patch grid.  Pretrained weights are used
  when torchvision can obtain them; otherwise the encoder falls back to a
  seeded random initialization and says so in the manifest (random features
  are isotropic, so expect far weaker distribution pathologies than trained
  ones exhibit);
* ``dinov2_vits14`` — torch.hub download; raises a clear error when the hub
  is unreachable.

Every encoder maps an RGB float image in [0, 1] to an ``(H, W, C)`` float32
grid, deterministically for a fixed model id and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
_IMAGENET_STD = np.array([0.229, 0.224, 0.225])

MODEL_IDS = ("dct16", "resnet50", "efficientnet_b0", "dinov2_vits14")


class ModelLoadError(RuntimeError):
    pass


@dataclass
class Encoder:
    model_id: str
    weights: str                     # "builtin" | "pretrained" | "random(seed=N)"
    input_size: int
    patch_stride: int                # pixels per output patch cell
    channels: int
    preprocessing: str
    _fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, image: np.ndarray) -> np.ndarray:
        feats = self._fn(image)
        return np.ascontiguousarray(feats, dtype=np.float32)

    @property
    def grid_dims(self) -> tuple[int, int]:
        side = self.input_size // self.patch_stride
        return side, side


def _to_gray(image: np.ndarray) -> np.ndarray:
    return 0.2125 * image[:, :, 0] + 0.7154 * image[:, :, 1] + 0.0721 * image[:, :, 2]


def _resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    from PIL import Image

    if image.ndim == 2:
        pil = Image.fromarray((image * 255).clip(0, 255).astype(np.uint8), mode="L")
    else:
        pil = Image.fromarray((image * 255).clip(0, 255).astype(np.uint8), mode="RGB")
    out = np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    return out


def _dct16_encoder(input_size: int) -> Encoder:
    import scipy.fft

    patch = 16
    grid = input_size // patch
    size = grid * patch

    def fn(image: np.ndarray) -> np.ndarray:
        gray = _resize_bilinear(_to_gray(image), size)
        blocks = gray.reshape(grid, patch, grid, patch).transpose(0, 2, 1, 3)
        feats = np.zeros((grid, grid, patch * patch))
        for r in range(grid):
            for c in range(grid):
                feats[r, c] = scipy.fft.dctn(blocks[r, c], norm="ortho").ravel()
        return feats

    return Encoder(model_id="dct16", weights="builtin", input_size=size,
                   patch_stride=patch, channels=patch * patch,
                   preprocessing=f"grayscale, bilinear resize to {size}x{size}",
                   _fn=fn)


def _torch_tensor(image: np.ndarray, size: int):
    import torch

    resized = _resize_bilinear(image, size)
    normed = (resized - _IMAGENET_MEAN) / _IMAGENET_STD
    return torch.tensor(normed.transpose(2, 0, 1)[None], dtype=torch.float32)


def _torchvision_encoder(model_id: str, input_size: int, seed: int) -> Encoder:
    import torch
    import torchvision.models as tvm

    torch.set_num_threads(1)
    weights_tag = "pretrained"
    torch.manual_seed(seed)
    try:
        if model_id == "resnet50":
            model = tvm.resnet50(weights=tvm.ResNet50_Weights.IMAGENET1K_V2)
        else:
            model = tvm.efficientnet_b0(weights=tvm.EfficientNet_B0_Weights.IMAGENET1K_V1)
    except Exception:
        torch.manual_seed(seed)
        model = tvm.resnet50(weights=None) if model_id == "resnet50" \
            else tvm.efficientnet_b0(weights=None)
        weights_tag = f"random(seed={seed})"
    model.eval()

    def fn(image: np.ndarray) -> np.ndarray:
        x = _torch_tensor(image, input_size)
        with torch.no_grad():
            if model_id == "resnet50":
                x = model.conv1(x)
                x = model.bn1(x)
                x = model.relu(x)
                x = model.maxpool(x)
                x = model.layer1(x)
                x = model.layer2(x)
                x = model.layer3(x)
                x = model.layer4(x)
            else:
                x = model.features(x)
        return x[0].permute(1, 2, 0).numpy()

    channels = 2048 if model_id == "resnet50" else 1280
    return Encoder(model_id=model_id, weights=weights_tag, input_size=input_size,
                   patch_stride=32, channels=channels,
                   preprocessing=f"RGB, bilinear resize to {input_size}x{input_size}, "
                                 "ImageNet mean/std",
                   _fn=fn)


def _dinov2_encoder(input_size: int) -> Encoder:
    import torch

    patch = 14
    size = (input_size // patch) * patch
    try:
        model = torch.hub.load("facebookresearch/dinov2", "dinov2_vits14")
    except Exception as exc:
        raise ModelLoadError(
            f"cannot load dinov2_vits14 (hub unreachable?): {exc}"
        ) from exc
    model.eval()

    def fn(image: np.ndarray) -> np.ndarray:
        x = _torch_tensor(image, size)
        with torch.no_grad():
            tokens = model.forward_features(x)["x_norm_patchtokens"]
        grid = size // patch
        return tokens[0].reshape(grid, grid, -1).numpy()

    return Encoder(model_id="dinov2_vits14", weights="pretrained", input_size=size,
                   patch_stride=patch, channels=384,
                   preprocessing=f"RGB, bilinear resize to {size}x{size}, "
                                 "ImageNet mean/std",
                   _fn=fn)


def load_encoder(model_id: str, input_size: int = 448, seed: int = 0) -> Encoder:
    if model_id == "dct16":
        return _dct16_encoder(input_size)
    if model_id in ("resnet50", "efficientnet_b0"):
        return _torchvision_encoder(model_id, input_size, seed)
    if model_id == "dinov2_vits14":
        return _dinov2_encoder(input_size)
    raise ModelLoadError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")
