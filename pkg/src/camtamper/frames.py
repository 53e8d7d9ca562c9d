"""Frame decoding, sequence streaming and the primitive image kernels.

A frame is a read-only, C-contiguous ``uint8`` array of shape ``(height, width)``.
All convolutions replicate the border pixel (clamp-to-border).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "FrameError",
    "GradientField",
    "FrameSequence",
    "as_frame",
    "load_frame",
    "save_pgm",
    "encode_pgm",
    "decode_pgm",
    "open_sequence",
    "resize",
    "gaussian_blur",
    "gaussian_kernel",
    "sobel_gradient",
    "histogram",
    "entropy",
    "to_luma",
]

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()


class FrameError(ValueError):
    """Raised for unreadable, malformed or inconsistent image data."""


def as_frame(data) -> np.ndarray:
    """Validate ``data`` as a frame and return a read-only uint8 copy."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise FrameError(f"frame must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise FrameError("zero-dimension frame")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
            raise FrameError("frame contains non-finite values")
        if arr.min() < 0 or arr.max() > 255:
            raise FrameError("frame values must lie in [0, 255]")
        arr = np.rint(arr)
    out = np.array(arr, dtype=np.uint8, order="C", copy=True)
    out.setflags(write=False)
    return out


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, ``round(0.299 R + 0.587 G + 0.114 B)``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    # floor(x + 0.5) rounds halves up, which is what the hand-evaluated examples use
    return as_frame(np.clip(np.floor(y + 0.5), 0, 255))


# -- PGM -------------------------------------------------------------------


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FrameError("truncated PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_pgm(buf: bytes) -> np.ndarray:
    if not buf.startswith(b"P5"):
        raise FrameError("not a binary (P5) PGM")
    tokens, offset = _pgm_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FrameError(f"malformed PGM header: {exc}") from None
    if width <= 0 or height <= 0:
        raise FrameError("zero-dimension image")
    if maxval != 255:
        raise FrameError(f"unsupported PGM maxval {maxval} (only 8-bit is supported)")
    raster = buf[offset : offset + width * height]
    if len(raster) != width * height:
        raise FrameError("truncated PGM raster")
    return as_frame(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def encode_pgm(frame: np.ndarray) -> bytes:
    frame = as_frame(frame)
    h, w = frame.shape
    return b"P5\n%d %d\n255\n" % (w, h) + frame.tobytes()


def save_pgm(frame: np.ndarray, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_pgm(frame))


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif mode == "LA":
                arr = np.asarray(im)[..., 0]
            elif mode == "RGBA":
                arr = np.asarray(im)[..., :3]
            elif mode in ("P", "1"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise FrameError(f"unsupported PNG bit depth / mode {mode!r}")
    except (OSError, Image.DecompressionBombError) as exc:
        raise FrameError(f"unreadable image {path}: {exc}") from None
    if arr.ndim == 3:
        return to_luma(arr)
    return as_frame(arr)


def load_frame(path: str | os.PathLike) -> np.ndarray:
    """Load a P5 PGM or 8-bit PNG as a luminance frame."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FrameError(f"unreadable file {path}: {exc}") from None
    if buf.startswith(b"P5"):
        return decode_pgm(buf)
    if buf.startswith(b"\x89PNG\r\n\x1a\n"):
        return _load_png(path)
    raise FrameError(f"unsupported image format: {path}")


# -- sequences ---------------------------------------------------------------

_IMAGE_SUFFIXES = {".pgm", ".png"}


@dataclass
class FrameSequence:
    """Ordered frames from a directory or a newline-delimited manifest.

    Iteration checks that every frame matches the dimensions of the first.
    """

    paths: list[Path]
    frame_rate: float = 3.0
    start: int = 0
    stop: int | None = None
    _shape: tuple[int, int] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.paths:
            raise FrameError("empty frame source")
        if self.stop is None:
            self.stop = len(self.paths)
        if not 0 <= self.start <= self.stop <= len(self.paths):
            raise FrameError(f"invalid index range [{self.start}, {self.stop})")

    def __len__(self) -> int:
        return self.stop - self.start

    def __getitem__(self, index: int) -> np.ndarray:
        if not 0 <= index < len(self):
            raise IndexError(index)
        frame = load_frame(self.paths[self.start + index])
        self._check_shape(frame, index)
        return frame

    def _check_shape(self, frame: np.ndarray, index: int) -> None:
        if self._shape is None:
            self._shape = frame.shape
        elif frame.shape != self._shape:
            raise FrameError(
                f"dimension mismatch at frame {index}: {frame.shape[1]}x{frame.shape[0]}"
                f" vs {self._shape[1]}x{self._shape[0]}"
            )

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in range(len(self)):
            yield self[i]

    def slice(self, start: int, stop: int) -> "FrameSequence":
        return FrameSequence(self.paths, self.frame_rate, self.start + start, self.start + stop)


def open_sequence(manifest: str | os.PathLike | Sequence, frame_rate: float = 3.0) -> FrameSequence:
    """Open a directory of images, a manifest text file, or a list of paths.

    Directory entries are ordered lexicographically by filename. Relative paths in
    a manifest resolve against the manifest's own directory.
    """
    if isinstance(manifest, (list, tuple)):
        return FrameSequence([Path(p) for p in manifest], frame_rate)
    src = Path(manifest)
    if src.is_dir():
        paths = sorted(p for p in src.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    elif src.is_file():
        base = src.parent
        paths = []
        for line in src.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                p = Path(line)
                paths.append(p if p.is_absolute() else base / p)
    else:
        raise FrameError(f"frame source does not exist: {src}")
    return FrameSequence(paths, frame_rate)


# -- kernels -------------------------------------------------------------------


def resize(frame: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize using pixel-center alignment."""
    if w <= 0 or h <= 0:
        raise ValueError("target size must be positive")
    src = np.asarray(frame)
    sh, sw = src.shape
    if (sw, sh) == (w, h):
        return as_frame(src)

    def axis(n_out: int, n_in: int):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0, n_in - 1)
        i0 = np.floor(x).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    y0, y1, fy = axis(h, sh)
    x0, x1, fx = axis(w, sw)
    img = src.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return as_frame(np.clip(np.rint(out), 0, 255))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_real(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def gaussian_blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ``ceil(3 sigma)``, re-quantized to uint8."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    out = _blur_real(np.asarray(frame, dtype=np.float64), sigma)
    return as_frame(np.clip(np.rint(out), 0, 255))


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


def sobel_gradient(frame: np.ndarray) -> GradientField:
    """3x3 Sobel derivatives. ``gx`` grows left to right, ``gy`` top to bottom."""
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise FrameError("frame smaller than the 3x3 Sobel kernel")
    gx = ndimage.correlate(img, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(img, SOBEL_Y, mode="nearest")
    return GradientField(gx, gy)


def histogram(frame: np.ndarray, bins: int = 256) -> np.ndarray:
    if not (1 <= bins <= 256) or 256 % bins:
        raise ValueError(f"invalid bin count {bins}")
    values = np.asarray(frame)
    if values.dtype != np.uint8:
        values = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    counts = np.bincount(values.ravel(), minlength=256)
    if bins == 256:
        return counts
    return counts.reshape(bins, 256 // bins).sum(axis=1)


def entropy(h: np.ndarray) -> float:
    """Shannon entropy in nats; empty bins contribute nothing."""
    h = np.asarray(h, dtype=np.float64)
    total = h.sum()
    if h.size == 0 or total <= 0:
        raise ValueError("entropy of an empty histogram")
    p = h[h > 0] / total
    return float(-(p * np.log(p)).sum())
