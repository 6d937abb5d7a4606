"""Procedural audio-visual scenes, the view augmentation pipeline, and the
binary dataset format.

A scene shows one sounding object (the class's shape in the class's colour)
plus up to two silent distractors of other classes on a noisy background.
Its spectrogram lights up the class's frequency band over a random majority
of time columns. Boxes are ``(x_min, y_min, x_max, y_max)`` with exclusive
maxima, so the box covers pixels ``x_min <= x < x_max``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError
from .prng import Stream

SHAPES = ("circle", "square", "triangle", "cross")
DEFAULT_COLORS = (
    (0.95, 0.20, 0.20),
    (0.20, 0.85, 0.25),
    (0.25, 0.35, 0.95),
    (0.95, 0.85, 0.15),
)
OBJECT_SIDE = (12, 28)
MAX_OVERLAP = 0.3
FORMAT_MAGIC = b"SSPL"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClassSpec:
    shape: str
    color: tuple
    band: tuple  # [f_lo, f_hi)


def default_palette(k, freq_bins=32):
    """K classes with distinct shapes/colours and evenly spaced disjoint bands."""
    if not 1 <= k <= len(SHAPES):
        raise ConfigurationError(f"default palette supports 1..{len(SHAPES)} classes, got {k}")
    width = freq_bins // k
    guard = max(1, width // 8)
    return tuple(
        ClassSpec(SHAPES[i], DEFAULT_COLORS[i], (i * width + guard, (i + 1) * width - guard)) for i in range(k)
    )


@dataclass
class GeneratorConfig:
    k: int = 4
    palette: tuple | None = None
    image_size: int = 64
    spec_shape: tuple = (32, 32)
    distractors: tuple = (0, 2)
    sigma_image: float = 0.05
    sigma_spec: float = 0.1
    seed: int = 0

    def classes(self):
        return self.palette if self.palette is not None else default_palette(self.k, self.spec_shape[0])

    def validate(self):
        classes = self.classes()
        if len(classes) != self.k:
            raise ConfigurationError(f"palette has {len(classes)} entries for k={self.k}")
        for c in classes:
            if c.shape not in SHAPES:
                raise ConfigurationError(f"unknown shape {c.shape!r}")
            lo, hi = c.band
            if not 0 <= lo < hi <= self.spec_shape[0]:
                raise ConfigurationError(f"band {c.band} outside [0, {self.spec_shape[0]})")
        for i in range(self.k):
            for j in range(i + 1, self.k):
                a, b = classes[i], classes[j]
                if max(a.band[0], b.band[0]) < min(a.band[1], b.band[1]):
                    raise ConfigurationError(f"classes {i} and {j} have overlapping bands")
                if tuple(a.color) == tuple(b.color):
                    raise ConfigurationError(f"classes {i} and {j} share a colour")
        lo, hi = self.distractors
        if not 0 <= lo <= hi:
            raise ConfigurationError(f"bad distractor range {self.distractors}")
        if self.image_size < OBJECT_SIDE[1]:
            raise ConfigurationError(f"image_size must be at least {OBJECT_SIDE[1]}")
        if self.sigma_image < 0 or self.sigma_spec < 0:
            raise ConfigurationError("noise levels must be non-negative")


@dataclass
class ScenePair:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    spectrogram: np.ndarray  # (F, Tm) float32, >= 0
    class_id: int
    gt_box: tuple


# -- rendering ---------------------------------------------------------------


def shape_mask(shape, side):
    """Boolean ``side x side`` footprint, sampled at pixel centres."""
    c = (np.arange(side) + 0.5) / side  # in (0, 1)
    y, x = np.meshgrid(c, c, indexing="ij")
    if shape == "square":
        return np.ones((side, side), dtype=bool)
    if shape == "circle":
        return (x - 0.5) ** 2 + (y - 0.5) ** 2 <= 0.25
    if shape == "triangle":
        # apex at the top centre, base along the bottom edge
        return np.abs(x - 0.5) <= 0.5 * y
    if shape == "cross":
        return (np.abs(x - 0.5) <= 1 / 6) | (np.abs(y - 0.5) <= 1 / 6)
    raise ConfigurationError(f"unknown shape {shape!r}")


def _overlap(a, b):
    """Intersection area over the smaller box area."""
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])  # noqa: E731
    return w * h / min(area(a), area(b))


def _place(stream, size):
    side = stream.integers(OBJECT_SIDE[0], OBJECT_SIDE[1] + 1)
    x0 = stream.integers(0, size - side + 1)
    y0 = stream.integers(0, size - side + 1)
    return side, (x0, y0, x0 + side, y0 + side)


def gen_scene(cfg, index, stream=None):
    """Scene ``index`` of the dataset defined by ``cfg`` (pure in (cfg.seed, index))."""
    stream = stream or Stream(cfg.seed, index)
    classes = cfg.classes()
    size = cfg.image_size
    class_id = stream.integers(0, cfg.k)
    side, box = _place(stream, size)

    n_distract = min(stream.integers(cfg.distractors[0], cfg.distractors[1] + 1), cfg.k - 1)
    others = stream.choice([c for c in range(cfg.k) if c != class_id], n_distract)
    placed = []
    for c in others:
        for _ in range(20):  # rejection-resample overlapping placements
            d_side, d_box = _place(stream, size)
            if all(_overlap(d_box, b) <= MAX_OVERLAP for b in [box] + [p[2] for p in placed]):
                placed.append((c, d_side, d_box))
                break

    image = np.zeros((3, size, size))
    # the sounding object is painted last so it is never occluded
    for c, s, b in placed + [(class_id, side, box)]:
        m = shape_mask(classes[c].shape, s)
        region = image[:, b[1] : b[3], b[0] : b[2]]
        region[:, m] = np.asarray(classes[c].color)[:, None]
    if cfg.sigma_image > 0:
        image = image + stream.normal(image.shape, std=cfg.sigma_image)
    image = np.clip(image, 0.0, 1.0)

    m = shape_mask(classes[class_id].shape, side)
    rows, cols = np.nonzero(m)
    gt_box = (box[0] + int(cols.min()), box[1] + int(rows.min()), box[0] + int(cols.max()) + 1, box[1] + int(rows.max()) + 1)

    n_freq, n_time = cfg.spec_shape
    n_active = stream.integers(math.ceil(0.6 * n_time), n_time + 1)
    active = stream.permutation(n_time)[:n_active]
    spec = np.zeros((n_freq, n_time))
    lo, hi = classes[class_id].band
    spec[lo:hi, active] = 1.0
    if cfg.sigma_spec > 0:
        spec = np.maximum(spec + stream.normal(spec.shape, std=cfg.sigma_spec), 0.0)

    return ScenePair(image.astype(np.float32), spec.astype(np.float32), int(class_id), gt_box)


# -- datasets ----------------------------------------------------------------


@dataclass
class SceneSet:
    """Column-wise storage of many scenes."""

    images: np.ndarray  # (N, 3, H, W) float32
    spectrograms: np.ndarray  # (N, F, Tm) float32
    class_ids: np.ndarray  # (N,) int64
    boxes: np.ndarray  # (N, 4) int64
    k: int

    def __len__(self):
        return len(self.class_ids)

    def __getitem__(self, i):
        return ScenePair(self.images[i], self.spectrograms[i], int(self.class_ids[i]), tuple(int(v) for v in self.boxes[i]))

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return SceneSet(self.images[idx], self.spectrograms[idx], self.class_ids[idx], self.boxes[idx], self.k)

    @property
    def image_size(self):
        return self.images.shape[-1]

    @property
    def spec_shape(self):
        return tuple(self.spectrograms.shape[1:])

    @classmethod
    def from_pairs(cls, pairs, k):
        pairs = list(pairs)
        return cls(
            np.stack([p.image for p in pairs]).astype(np.float32),
            np.stack([p.spectrogram for p in pairs]).astype(np.float32),
            np.array([p.class_id for p in pairs], dtype=np.int64),
            np.array([p.gt_box for p in pairs], dtype=np.int64).reshape(len(pairs), 4),
            k,
        )


def generate(cfg, n, start=0):
    cfg.validate()
    return SceneSet.from_pairs((gen_scene(cfg, i) for i in range(start, start + n)), cfg.k)


_HEADER = struct.Struct("<4sHI5H")


def _record_dtype(h, w, f, tm):
    return np.dtype([("class_id", "<u2"), ("box", "<u2", (4,)), ("image", "<f4", (3, h, w)), ("spec", "<f4", (f, tm))])


def write_dataset(data, path):
    """Write a SceneSet (or a list of ScenePairs plus ``k`` via SceneSet.from_pairs)."""
    if len(data) == 0:
        raise ConfigurationError("refusing to write an empty dataset")
    _, _, h, w = data.images.shape
    f, tm = data.spec_shape
    records = np.empty(len(data), dtype=_record_dtype(h, w, f, tm))
    records["class_id"] = data.class_ids
    records["box"] = data.boxes
    records["image"] = data.images
    records["spec"] = data.spectrograms
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, len(data), h, w, f, tm, data.k))
        fh.write(records.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FORMAT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}", offset=0)
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    _, version, count, h, w, f, tm, k = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}", offset=4)
    rec = _record_dtype(h, w, f, tm)
    body = len(blob) - _HEADER.size
    if body < count * rec.itemsize:
        complete = body // rec.itemsize
        raise FormatError(
            f"{path}: truncated record {complete} of {count}", offset=_HEADER.size + complete * rec.itemsize
        )
    if body > count * rec.itemsize:
        raise FormatError(f"{path}: trailing bytes after {count} records", offset=_HEADER.size + count * rec.itemsize)
    records = np.frombuffer(blob, dtype=rec, count=count, offset=_HEADER.size)
    return SceneSet(
        records["image"].astype(np.float32),
        records["spec"].astype(np.float32),
        records["class_id"].astype(np.int64),
        records["box"].astype(np.int64),
        int(k),
    )


def dataset_file_size(count, h, w, f, tm):
    return _HEADER.size + count * _record_dtype(h, w, f, tm).itemsize


# -- augmentation ------------------------------------------------------------


@dataclass
class AugmentConfig:
    crop_scale: float = 1.1
    hflip_p: float = 0.5
    min_box_fraction: float = 0.25
    crop_tries: int = 10
    # optional extras, all off by default
    vflip_p: float = 0.0
    translate: tuple = (0.0, 0.0)
    rotate90: bool = False
    grayscale_p: float = 0.0
    jitter_p: float = 0.0
    jitter: tuple = (0.4, 0.4, 0.4, 0.1)  # brightness, contrast, saturation, hue
    blur_p: float = 0.0
    blur_sigma: tuple = (0.1, 2.0)

    @classmethod
    def full(cls):
        """Every extra switched on with the conventional strengths."""
        return cls(vflip_p=0.5, translate=(0.2, 0.2), rotate90=True, grayscale_p=0.2, jitter_p=0.8, blur_p=0.5)

    @classmethod
    def none(cls):
        return cls(crop_scale=1.0, hflip_p=0.0)


def _resize_matrix(n_out, n_in):
    # half-pixel centres, same convention as ops.bilinear_resize
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


_RESIZE_CACHE = {}


def resize_image(image, size):
    h, w = image.shape[-2:]
    key = (size, h, w)
    if key not in _RESIZE_CACHE:
        _RESIZE_CACHE[key] = (_resize_matrix(size, h), _resize_matrix(size, w))
    ry, rx = _RESIZE_CACHE[key]
    return ry @ image @ rx.T


def hflip_image(image):
    return image[..., ::-1].copy()


def hflip_box(box, width):
    x0, y0, x1, y1 = box
    return (width - x1, y0, width - x0, y1)


def vflip_box(box, height):
    x0, y0, x1, y1 = box
    return (x0, height - y1, x1, height - y0)


def clip_box(box, size):
    x0, y0, x1, y1 = box
    return (min(max(x0, 0), size), min(max(y0, 0), size), min(max(x1, 0), size), min(max(y1, 0), size))


def box_area(box):
    return max(box[2] - box[0], 0) * max(box[3] - box[1], 0)


def box_mask(box, size):
    """Pixels whose centres fall inside ``box``."""
    c = np.arange(size) + 0.5
    inx = (c >= box[0]) & (c < box[2])
    iny = (c >= box[1]) & (c < box[3])
    return iny[:, None] & inx[None, :]


def _rot90_box(box, size, quarter_turns):
    # counter-clockwise, matching np.rot90 on (H, W)
    for _ in range(quarter_turns % 4):
        x0, y0, x1, y1 = box
        box = (y0, size - x1, y1, size - x0)
    return box


def _gaussian_blur(image, sigma):
    radius = max(1, int(math.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(image, ((0, 0), (radius, radius), (radius, radius)), mode="reflect")
    out = sum(k[i] * padded[:, :, i : i + image.shape[2]] for i in range(len(k)))
    return sum(k[i] * out[:, i : i + image.shape[1], :] for i in range(len(k)))


def _grayscale(image):
    g = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    return np.broadcast_to(g, image.shape).copy()


def _color_jitter(image, stream, strengths):
    b, c, s, hue = strengths
    order = stream.permutation(4)
    factors = stream.uniform(3)
    shift = stream.uniform(low=-hue, high=hue)
    for op in order:
        if op == 0:
            image = image * (1 - b + 2 * b * factors[0])
        elif op == 1:
            mean = _grayscale(image).mean()
            image = (image - mean) * (1 - c + 2 * c * factors[1]) + mean
        elif op == 2:
            g = _grayscale(image)
            image = (image - g) * (1 - s + 2 * s * factors[2]) + g
        else:
            # hue rotation in YIQ space by 2*pi*shift
            yiq = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
            angle = 2 * math.pi * shift
            rot = np.array([[1, 0, 0], [0, math.cos(angle), -math.sin(angle)], [0, math.sin(angle), math.cos(angle)]])
            m = np.linalg.inv(yiq) @ rot @ yiq
            image = np.einsum("ij,jhw->ihw", m, image)
        image = np.clip(image, 0.0, 1.0)
    return image


def augment_view(pair, aug, stream=None, evaluation=False, side=None):
    """One augmented view and its box in view coordinates (floats).

    With ``evaluation`` the view is the deterministic centre crop of the
    resized image, never flipped.
    """
    image = np.asarray(pair.image, dtype=np.float64)
    size = image.shape[-1] if side is None else side
    big = int(math.floor(aug.crop_scale * size))
    ratio = big / image.shape[-1]
    resized = resize_image(image, big) if big != image.shape[-1] else image
    box = tuple(v * ratio for v in pair.gt_box)
    centre = (big - size) // 2

    def crop_at(ox, oy):
        b = (box[0] - ox, box[1] - oy, box[2] - ox, box[3] - oy)
        return resized[:, oy : oy + size, ox : ox + size], clip_box(b, size)

    if evaluation or big == size:
        view, vbox = crop_at(centre, centre)
    else:
        for _ in range(aug.crop_tries):
            ox, oy = stream.integers(0, big - size + 1), stream.integers(0, big - size + 1)
            view, vbox = crop_at(ox, oy)
            if box_area(vbox) >= aug.min_box_fraction * box_area(box):
                break
        else:
            view, vbox = crop_at(centre, centre)
    if evaluation:
        return view.astype(np.float32), vbox

    if stream.bernoulli(aug.hflip_p):
        view, vbox = hflip_image(view), hflip_box(vbox, size)
    if aug.vflip_p > 0 and stream.bernoulli(aug.vflip_p):
        view, vbox = view[:, ::-1, :].copy(), vflip_box(vbox, size)
    if aug.translate[0] > 0 or aug.translate[1] > 0:
        dx = stream.integers(-int(aug.translate[0] * size), int(aug.translate[0] * size) + 1)
        dy = stream.integers(-int(aug.translate[1] * size), int(aug.translate[1] * size) + 1)
        shifted = np.zeros_like(view)
        ys, yd = (slice(0, size - dy), slice(dy, size)) if dy >= 0 else (slice(-dy, size), slice(0, size + dy))
        xs, xd = (slice(0, size - dx), slice(dx, size)) if dx >= 0 else (slice(-dx, size), slice(0, size + dx))
        shifted[:, yd, xd] = view[:, ys, xs]
        moved = clip_box((vbox[0] + dx, vbox[1] + dy, vbox[2] + dx, vbox[3] + dy), size)
        if box_area(moved) >= aug.min_box_fraction * box_area(box):
            view, vbox = shifted, moved
    if aug.rotate90:
        turns = stream.integers(0, 4)
        view, vbox = np.rot90(view, turns, axes=(1, 2)).copy(), _rot90_box(vbox, size, turns)
    if aug.grayscale_p > 0 and stream.bernoulli(aug.grayscale_p):
        view = _grayscale(view)
    if aug.jitter_p > 0 and stream.bernoulli(aug.jitter_p):
        view = _color_jitter(view, stream, aug.jitter)
    if aug.blur_p > 0 and stream.bernoulli(aug.blur_p):
        view = _gaussian_blur(view, stream.uniform(low=aug.blur_sigma[0], high=aug.blur_sigma[1]))
    return view.astype(np.float32), vbox
