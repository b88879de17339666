"""Image decoding, resizing, standardization, and training augmentation.

Decoding is dependency-free: binary PPM (P6) natively, with P5 grayscale
replicated across RGB. All pixel math happens on float32 arrays shaped
[3, H, W] with values in [0, 1].

Geometry uses half-pixel centers: destination pixel i samples source
coordinate (i + 0.5) * scale - 0.5. Resize clamps at the border;
rotation and zoom fill the outside with zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class ImageRecord:
    """RGB pixel block in [0,1] plus provenance."""

    pixels: np.ndarray
    path: str | None = None
    original_size: tuple[int, int] | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[0] != 3:
            raise DataError(f"pixels must be [3,H,W], got {list(px.shape)}")
        if px.shape[1] < 1 or px.shape[2] < 1:
            raise DataError(f"degenerate image shape {list(px.shape)}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise DataError(
                f"pixel values outside [0,1]: min {px.min():.4f}, max {px.max():.4f}"
            )
        self.pixels = px
        if self.original_size is None:
            self.original_size = (px.shape[1], px.shape[2])


# --------------------------------------------------------------------------
# PPM io

def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated tokens, '#' comments skipped.
    Returns tokens and the offset one whitespace byte past the last token."""
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count and i < n:
        c = data[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < n and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and data[j:j + 1] not in b" \t\r\n#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < count:
        raise DataError("truncated header")
    return tokens, i + 1


def read_ppm(path: str | Path) -> ImageRecord:
    """Decode binary PPM (P6) or PGM (P5, replicated to RGB) to [0,1] floats."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    try:
        (magic, w_tok, h_tok, max_tok), offset = _read_header_tokens(data, 4)
        if magic not in (b"P6", b"P5"):
            raise DataError(f"unsupported format {magic!r} (only binary P6/P5)")
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
        if width < 1 or height < 1 or not 0 < maxval <= 255:
            raise DataError(f"bad dimensions {width}x{height} maxval {maxval}")
        channels = 3 if magic == b"P6" else 1
        need = width * height * channels
        raw = data[offset:offset + need]
        if len(raw) != need:
            raise DataError(f"expected {need} pixel bytes, found {len(raw)}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
        px = arr.astype(np.float32) / maxval
        px = np.transpose(px, (2, 0, 1))
        if channels == 1:
            px = np.repeat(px, 3, axis=0)
    except DataError as e:
        raise DataError(f"cannot parse image {path}: {e}") from e
    return ImageRecord(np.ascontiguousarray(px), path=str(path),
                       original_size=(height, width))


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    """Encode [3,H,W] floats in [0,1] as binary P6, maxval 255."""
    px = np.asarray(pixels, dtype=np.float32)
    if px.ndim != 3 or px.shape[0] != 3:
        raise DataError(f"pixels must be [3,H,W], got {list(px.shape)}")
    byte = np.clip(np.rint(px * 255.0), 0, 255).astype(np.uint8)
    h, w = px.shape[1], px.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.transpose(byte, (1, 2, 0)).tobytes())


# --------------------------------------------------------------------------
# geometry

def _gather_bilinear(px: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                     zero_fill: bool) -> np.ndarray:
    """Sample [3,H,W] at fractional (ys, xs) grids; outside pixels are either
    clamped to the border (resize) or zero (rotation/zoom)."""
    _, h, w = px.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).astype(np.float32)
    wx = (xs - x0).astype(np.float32)

    def tap(yy, xx):
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        val = px[:, yc, xc]
        if zero_fill:
            ok = ((yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1))
            val = val * ok.astype(np.float32)
        return val

    top = tap(y0, x0) * (1 - wx) + tap(y0, x0 + 1) * wx
    bot = tap(y0 + 1, x0) * (1 - wx) + tap(y0 + 1, x0 + 1) * wx
    return top * (1 - wy) + bot * wy


def bilinear_resize(px: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of [3,H,W] to [3,target_h,target_w]."""
    _, h, w = px.shape
    ys = (np.arange(target_h, dtype=np.float64) + 0.5) * (h / target_h) - 0.5
    xs = (np.arange(target_w, dtype=np.float64) + 0.5) * (w / target_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    out = _gather_bilinear(np.asarray(px, dtype=np.float32), grid_y, grid_x,
                           zero_fill=False)
    return np.clip(out, 0.0, 1.0)


def load_and_resize(path: str | Path, target: int) -> ImageRecord:
    """Decode an image file and bilinear-resize it to target x target."""
    if target < 1:
        raise ConfigError(f"target resolution must be positive, got {target}")
    rec = read_ppm(path)
    resized = bilinear_resize(rec.pixels, target, target)
    return ImageRecord(resized, path=rec.path, original_size=rec.original_size)


def standardize(img: ImageRecord | np.ndarray,
                mean: tuple[float, float, float] = (0.5, 0.5, 0.5),
                std: tuple[float, float, float] = (0.5, 0.5, 0.5)) -> np.ndarray:
    """Per-channel (x - mean) / std; returns a plain float32 array."""
    std = tuple(float(s) for s in std)
    if any(s <= 0 for s in std):
        raise ConfigError(f"std components must be positive, got {std}")
    px = img.pixels if isinstance(img, ImageRecord) else np.asarray(img, dtype=np.float32)
    m = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
    s = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
    return (px - m) / s


# --------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentConfig:
    horizontal_flip_prob: float = 0.5
    rotation_degrees: float = 15.0
    zoom_range: tuple[float, float] = (0.8, 1.2)
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ConfigError(f"flip probability {self.horizontal_flip_prob} outside [0,1]")
        if self.rotation_degrees < 0:
            raise ConfigError(f"rotation_degrees must be >= 0, got {self.rotation_degrees}")
        lo, hi = self.zoom_range
        if lo <= 0 or hi < lo:
            raise ConfigError(f"zoom_range must be positive with min <= max, got {self.zoom_range}")


def rotate(px: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear, zero outside the frame."""
    if degrees == 0.0:
        return np.asarray(px, dtype=np.float32).copy()
    _, h, w = px.shape
    theta = math.radians(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy,
                         np.arange(w, dtype=np.float64) - cx, indexing="ij")
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # inverse map: destination offset rotated by -theta gives the source
    src_y = cos_t * yy + sin_t * xx + cy
    src_x = -sin_t * yy + cos_t * xx + cx
    out = _gather_bilinear(np.asarray(px, dtype=np.float32), src_y, src_x,
                           zero_fill=True)
    return np.clip(out, 0.0, 1.0)


def center_zoom(px: np.ndarray, factor: float) -> np.ndarray:
    """Scale about the center: factor > 1 magnifies (crop), < 1 shrinks
    into a zero border. Output shape is unchanged."""
    if factor == 1.0:
        return np.asarray(px, dtype=np.float32).copy()
    _, h, w = px.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    src_y = cy + (yy - cy) / factor
    src_x = cx + (xx - cx) / factor
    out = _gather_bilinear(np.asarray(px, dtype=np.float32), src_y, src_x,
                           zero_fill=True)
    return np.clip(out, 0.0, 1.0)


def augment_pixels(px: np.ndarray, cfg: AugmentConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Array-level augmentation core: flip -> rotation -> center zoom.

    Draws exactly three variates in a fixed order so a keyed generator
    reproduces the same transform bit-for-bit.
    """
    if not cfg.enabled:
        return px
    do_flip = rng.random() < cfg.horizontal_flip_prob
    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
    factor = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1])
    if do_flip:
        px = px[:, :, ::-1]
    px = rotate(px, angle)
    px = center_zoom(px, factor)
    return np.ascontiguousarray(px)


def augment(img: ImageRecord, cfg: AugmentConfig, rng: np.random.Generator) -> ImageRecord:
    """Sampled flip -> rotation -> center zoom. Identity when disabled."""
    if not cfg.enabled:
        return img
    return ImageRecord(augment_pixels(img.pixels, cfg, rng), path=img.path,
                       original_size=img.original_size)
