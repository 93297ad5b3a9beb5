"""Penultimate-layer CNN feature export into the "IMFT" binary format.

Features are the post-activation output of VGG16's first fully-connected
layer (4096-dim). Images go through the standard evaluation preprocessing:
resize to 256, center-crop to 224, ImageNet normalization. Extraction runs
in eval mode with gradients disabled, so repeated runs on the same image are
bit-identical.

IMFT layout (little-endian): magic "IMFT", u32 version=1, u32 record_count,
u32 feature_dim; per record u16 id_length, id utf-8 bytes, feature_dim
float32 values. Records are written in manifest order.
"""

from __future__ import annotations

import csv
import struct
import sys
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

FEATURE_DIM = 4096
MAGIC = b"IMFT"
VERSION = 1

_PREPROCESS = transforms.Compose([
    transforms.Resize(256),
    transforms.CenterCrop(224),
    transforms.ToTensor(),
    transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
])


@dataclass
class ExtractionManifest:
    entries: list[tuple[str, str]] = field(default_factory=list)  # (image_id, path)

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest contains duplicate image ids")


def load_manifest(path) -> ExtractionManifest:
    """CSV with columns image_id,path; a header row is optional."""
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            if not row or not row[0].strip():
                continue
            if row[0].strip() == "image_id":
                continue
            if len(row) < 2:
                raise ValueError(f"manifest row needs image_id,path: {row!r}")
            entries.append((row[0].strip(), row[1].strip()))
    return ExtractionManifest(entries=entries)


def build_model(name: str = "vgg16", weights_path: str | None = None) -> torch.nn.Module:
    """VGG16 truncated after the first classifier Linear+ReLU (4096-dim output).

    weights_path, when given, is a local state dict for the full VGG16
    (avoids the torchvision download); otherwise torchvision's pretrained
    ImageNet weights are fetched.
    """
    if name != "vgg16":
        raise ValueError(f"unsupported model '{name}'")
    if weights_path is not None:
        net = models.vgg16(weights=None)
        net.load_state_dict(torch.load(weights_path, map_location="cpu"))
    else:
        net = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
    # classifier = [Linear(25088,4096), ReLU, Dropout, Linear, ReLU, Dropout, Linear]
    net.classifier = torch.nn.Sequential(*list(net.classifier.children())[:2])
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def _feature_for_image(model: torch.nn.Module, path: str) -> np.ndarray:
    with Image.open(path) as img:
        tensor = _PREPROCESS(img.convert("RGB")).unsqueeze(0)
    with torch.no_grad():
        out = model(tensor)
    return out.squeeze(0).numpy().astype("<f4")


def write_imft(records: list[tuple[str, np.ndarray]], feature_dim: int, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, len(records), feature_dim))
        for image_id, vec in records:
            id_bytes = image_id.encode("utf-8")
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def extract(
    manifest: ExtractionManifest,
    out_path,
    model: torch.nn.Module | None = None,
    model_name: str = "vgg16",
    weights_path: str | None = None,
    skip_report_path=None,
) -> list[str]:
    """Run the manifest through the CNN and write an IMFT file.

    Unreadable images are skipped with a warning and listed in the sidecar
    report (default <out>.skipped.txt). Returns the skipped ids; raises if
    the manifest is empty or nothing could be extracted.
    """
    if not manifest.entries:
        raise ValueError("extraction manifest is empty")
    if model is None:
        model = build_model(model_name, weights_path)
    records: list[tuple[str, np.ndarray]] = []
    skipped: list[str] = []
    for image_id, path in manifest.entries:
        try:
            vec = _feature_for_image(model, path)
        except (OSError, ValueError) as e:
            print(f"warning: skipping {image_id} ({path}): {e}", file=sys.stderr)
            skipped.append(image_id)
            continue
        if vec.shape[0] != FEATURE_DIM:
            raise ValueError(f"model produced {vec.shape[0]}-dim features, expected {FEATURE_DIM}")
        records.append((image_id, vec))
    if not records:
        raise ValueError("no images could be extracted")
    write_imft(records, FEATURE_DIM, out_path)
    if skip_report_path is None:
        skip_report_path = str(out_path) + ".skipped.txt"
    if skipped:
        with open(skip_report_path, "w", encoding="utf-8") as f:
            f.write("\n".join(skipped) + "\n")
    return skipped
