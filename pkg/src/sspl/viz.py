"""Heatmap export as binary portable pixmaps (P6)."""

from __future__ import annotations

import os

import numpy as np

from .errors import SSPLError, UsageError
from .model import to_image_scale
from .tensor import no_grad

RED = (255, 0, 0)


class ExportError(SSPLError):
    exit_code = 2


def write_ppm(path, rgb):
    """``rgb`` is (H, W, 3) uint8."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror}") from None


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def to_bytes(values):
    """[0, 1] floats to 0..255 with rounding."""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def outline(rgb, box, color=RED):
    """Draw the one-pixel border of an exclusive-max box in place."""
    h, w, _ = rgb.shape
    x0, y0 = max(int(box[0]), 0), max(int(box[1]), 0)
    x1, y1 = min(int(box[2]), w) - 1, min(int(box[3]), h) - 1
    if x1 < x0 or y1 < y0:
        return rgb
    rgb[y0, x0 : x1 + 1] = color
    rgb[y1, x0 : x1 + 1] = color
    rgb[y0 : y1 + 1, x0] = color
    rgb[y0 : y1 + 1, x1] = color
    return rgb


def heatmap_rgb(m):
    g = to_bytes(m)
    return np.stack([g, g, g], axis=-1)


def visualize(model, data, indices, out_dir, cycles=None):
    """Write ``<index>_input.ppm`` and ``<index>_t<t>.ppm`` for t = 1..T; returns the paths."""
    n = len(data)
    for i in indices:
        if not 0 <= i < n:
            raise UsageError(f"sample index {i} out of range for {n} samples")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {out_dir}: {exc.strerror}") from None
    size = model.cfg.image_size
    paths = []
    was_training = model.training
    model.eval()
    try:
        for i in indices:
            pair = data[i]
            img = outline(to_bytes(np.transpose(pair.image, (1, 2, 0))), pair.gt_box)
            p = os.path.join(out_dir, f"{i}_input.ppm")
            write_ppm(p, img)
            paths.append(p)
            # maps are computed on the canonical image so they line up with the input file
            with no_grad():
                sims = model.similarity(pair.image[None], pair.spectrogram[None], cycles, every_step=True)
            for t, sim in enumerate(sims, 1):
                p = os.path.join(out_dir, f"{i}_t{t}.ppm")
                write_ppm(p, heatmap_rgb(to_image_scale(sim, size)[0]))
                paths.append(p)
    finally:
        model.train(was_training)
    return paths
