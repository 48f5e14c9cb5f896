#!/usr/bin/env python3
"""Regenerate the golden preprocessing/model fixtures under crates/core/tests/fixtures.

Reference pipeline (PyTorch, float64):
  bilinear  -> F.interpolate(mode="bilinear", align_corners=False, antialias=False)
  bicubic   -> F.interpolate(mode="bicubic", align_corners=False, antialias=True), clamped to [0, 255]
  center crop at floor((h - c) / 2), floor((w - c) / 2); then (v / 255 - mean) / std.

The tiny split model (conv features, D=16; linear head to 10 classes) is
exported to ONNX alongside a monolithic variant and a deliberately
mismatched head (expects 32 features) for error-path tests.

Usage: python tools/make_goldens.py [--out crates/core/tests/fixtures]
"""

import argparse
import hashlib
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

IMAGENET = ([0.485, 0.456, 0.406], [0.229, 0.224, 0.225])
HALF = ([0.5, 0.5, 0.5], [0.5, 0.5, 0.5])
OPSET = 17

# name, (h, w), resize, crop, interpolation, antialias, norm
RECORDS = [
    ("resnet50_a", (300, 400), 256, 224, "bilinear", False, IMAGENET),
    ("resnet50_b", (375, 500), 256, 224, "bilinear", False, IMAGENET),
    ("effb1ap_a", (480, 360), 272, 240, "bicubic", True, HALF),
    ("effb1ap_b", (333, 517), 272, 240, "bicubic", True, HALF),
    ("small_down_bilinear", (90, 120), 72, 64, "bilinear", False, IMAGENET),
    ("small_up_bilinear", (50, 70), 72, 64, "bilinear", False, IMAGENET),
    ("small_down_bicubic", (150, 101), 72, 64, "bicubic", True, IMAGENET),
    ("small_up_bicubic", (60, 45), 72, 64, "bicubic", True, IMAGENET),
]


class Features(nn.Module):
    def __init__(self, dim=16):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, dim, 3, stride=2, padding=1)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        return x.mean(dim=(2, 3))


class Monolithic(nn.Module):
    def __init__(self, features, head):
        super().__init__()
        self.features = features
        self.head = head

    def forward(self, x):
        return self.head(self.features(x))


def synth_image(rng, h, w):
    """Smooth gradients, a few hard-edged shapes and noise, so both flat and
    high-frequency regions are exercised."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.stack(
        [
            127 + 100 * np.sin(x / w * 3 * np.pi + rng.uniform(0, 6)),
            127 + 100 * np.cos(y / h * 2 * np.pi + rng.uniform(0, 6)),
            255 * (x + y) / (h + w),
        ],
        axis=-1,
    )
    for _ in range(4):
        cy, cx, r = rng.integers(0, h), rng.integers(0, w), rng.integers(4, max(5, min(h, w) // 3))
        mask = (y - cy) ** 2 + (x - cx) ** 2 < r * r
        img[mask] = rng.integers(0, 256, size=3)
    img += rng.normal(0, 12, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def round_half_even_dims(h, w, s):
    if h <= w:
        return s, round(w * s / h)
    return round(h * s / w), s


def preprocess(img, resize, crop, interp, antialias, norm):
    h, w = img.shape[:2]
    oh, ow = round_half_even_dims(h, w, resize)
    x = torch.from_numpy(img).permute(2, 0, 1)[None].double()
    x = F.interpolate(x, size=(oh, ow), mode=interp, align_corners=False, antialias=antialias)
    if interp == "bicubic":
        x = x.clamp(0, 255)
    top, left = (oh - crop) // 2, (ow - crop) // 2
    x = x[:, :, top : top + crop, left : left + crop] / 255.0
    mean = torch.tensor(norm[0], dtype=torch.float64).view(1, 3, 1, 1)
    std = torch.tensor(norm[1], dtype=torch.float64).view(1, 3, 1, 1)
    return ((x - mean) / std)[0].float(), (oh, ow)


def write_f32(path, tensor):
    np.asarray(tensor, dtype="<f4").tofile(path)


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def export(model, example, path, dynamic):
    torch.onnx.export(
        model,
        example,
        str(path),
        input_names=["input"],
        output_names=["output"],
        dynamic_axes={"input": dynamic, "output": {0: "n"}},
        opset_version=OPSET,
        dynamo=False,
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(0)
    features, head = Features(16).eval(), nn.Linear(16, 10).eval()
    with torch.no_grad():
        head.weight.mul_(3.0)
    wrong_head = nn.Linear(32, 10).eval()
    mono = Monolithic(features, head).eval()

    img_axes = {0: "n", 2: "h", 3: "w"}
    export(features, torch.zeros(1, 3, 64, 64), out / "tiny_features.onnx", img_axes)
    export(head, torch.zeros(1, 16), out / "tiny_head.onnx", {0: "n"})
    export(wrong_head, torch.zeros(1, 32), out / "tiny_head_32.onnx", {0: "n"})
    export(mono, torch.zeros(1, 3, 64, 64), out / "tiny_monolithic.onnx", img_axes)

    rng = np.random.default_rng(20240611)
    records = []
    for name, (h, w), resize, crop, interp, aa, norm in RECORDS:
        img = synth_image(rng, h, w)
        Image.fromarray(img).save(out / f"{name}.png")
        tensor, resized = preprocess(img, resize, crop, interp, aa, norm)
        with torch.no_grad():
            feats = features(tensor[None])
            logits = head(feats)
        probs = torch.softmax(logits.double(), dim=1)
        write_f32(out / f"{name}.preprocess.f32", tensor.numpy())
        write_f32(out / f"{name}.features.f32", feats[0].numpy())
        write_f32(out / f"{name}.logits.f32", logits[0].numpy())
        write_f32(out / f"{name}.probs.f32", probs[0].numpy())
        sidecar = {
            "name": name,
            "image": f"{name}.png",
            "image_shape": [h, w],
            "resized_shape": list(resized),
            "resize_shorter_side": resize,
            "crop_size": crop,
            "interpolation": interp,
            "antialias": aa,
            "mean": norm[0],
            "std": norm[1],
            "preprocess": {"file": f"{name}.preprocess.f32", "shape": [3, crop, crop]},
            "features": {"file": f"{name}.features.f32", "shape": [16]},
            "logits": {"file": f"{name}.logits.f32", "shape": [10]},
            "probs": {"file": f"{name}.probs.f32", "shape": [10]},
        }
        (out / f"{name}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
        records.append(name)

    manifest = {
        "generator": "tools/make_goldens.py",
        "torch": torch.__version__,
        "opset": OPSET,
        "records": records,
        "models": {
            p: sha256(out / p)
            for p in ["tiny_features.onnx", "tiny_head.onnx", "tiny_head_32.onnx", "tiny_monolithic.onnx"]
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(records)} records to {out}")


if __name__ == "__main__":
    main()
