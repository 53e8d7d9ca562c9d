"""Adaptive reference state and the ten residual features.

Feature ids, in CSV column and ``valid_mask`` bit order::

    b1 b2 b3 b4  background: foreground sum, entropy, delayed background, histogram peak
    e1 e2 e3 e4  edges: edge count, gradient sum, strong-gradient sum, edge agreement
    k1 k2        keypoints: count, position-weighted response

Residuals for frame ``t`` are computed against the references built from frames
``< t``; only then is frame ``t`` folded into the references.
"""
from __future__ import annotations

import csv
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
from scipy import ndimage

from .frames import FrameError, entropy, histogram, sobel_gradient

FEATURE_IDS = ("b1", "b2", "b3", "b4", "e1", "e2", "e3", "e4", "k1", "k2")
CSV_HEADER = ("frame_index",) + FEATURE_IDS + ("valid_mask",)


@dataclass(frozen=True)
class FeatureConfig:
    alpha: float = 0.95
    n_delay: int = 30
    K: int = 10
    strong_edge_threshold: float = 100.0
    harris_threshold: float = 1e6
    harris_k: float = 0.04
    harris_sigma: float = 1.0
    keypoint_refresh: int = 30
    e4_and_only: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.n_delay < 1:
            raise ValueError("n_delay must be >= 1")
        if not 0 <= self.K <= 255:
            raise ValueError("K must lie in [0, 255]")
        if self.strong_edge_threshold < 0:
            raise ValueError("strong_edge_threshold must be >= 0")
        if self.harris_threshold < 0:
            raise ValueError("harris_threshold must be >= 0")
        if self.keypoint_refresh < 1:
            raise ValueError("keypoint_refresh must be >= 1")


# -- keypoints -----------------------------------------------------------------


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    response: float


def harris_response(frame: np.ndarray, sigma: float = 1.0, k: float = 0.04) -> np.ndarray:
    g = sobel_gradient(frame)
    sxx = ndimage.gaussian_filter(g.gx * g.gx, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(g.gy * g.gy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(g.gx * g.gy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_keypoints(frame: np.ndarray, config: FeatureConfig = FeatureConfig()) -> list[Keypoint]:
    """Harris corners that are 3x3 local maxima above ``harris_threshold``.

    Returned in raster order (by ``y`` then ``x``).
    """
    img = np.asarray(frame)
    if img.shape[0] < 7 or img.shape[1] < 7:
        raise FrameError("keypoint detection needs a frame of at least 7x7")
    r = harris_response(img, config.harris_sigma, config.harris_k)
    peaks = (r == ndimage.maximum_filter(r, size=3, mode="nearest")) & (r > config.harris_threshold)
    ys, xs = np.nonzero(peaks)
    return [Keypoint(int(x), int(y), float(r[y, x])) for y, x in zip(ys, xs)]


def _keypoints(frame: np.ndarray, config: FeatureConfig) -> list[Keypoint]:
    # frames smaller than the detector window simply carry no keypoints
    if frame.shape[0] < 7 or frame.shape[1] < 7:
        return []
    return detect_keypoints(frame, config)


def keypoint_descriptor(kps: Iterable[Keypoint]) -> float:
    """Mean of ``sqrt(x^2 + y^2) * |response|`` over the keypoints (0 if none)."""
    kps = list(kps)
    if not kps:
        return 0.0
    # sort so the float sum does not depend on list order
    terms = sorted(np.hypot(kp.x, kp.y) * abs(kp.response) for kp in kps)
    return float(np.sum(terms) / len(kps))


# -- state ---------------------------------------------------------------------


@dataclass
class FeatureState:
    """Per-camera references. Single writer: feed one camera's frames in order."""

    config: FeatureConfig
    background: np.ndarray
    delay_buffer: deque
    reference_edges_real: np.ndarray
    reference_edges_binary: np.ndarray
    reference_keypoints: list[Keypoint]
    frames_seen: int = 1
    _since_refresh: int = field(default=0, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.background.shape

    def rounded_background(self) -> np.ndarray:
        return np.clip(np.rint(self.background), 0, 255).astype(np.uint8)

    def binary_reference(self) -> np.ndarray:
        return self.reference_edges_binary >= 0.5

    @property
    def b3_valid(self) -> bool:
        return self.frames_seen > self.config.n_delay


def edge_maps(frame: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Sobel magnitude and its binary map ``magnitude > threshold``."""
    mag = sobel_gradient(frame).magnitude
    return mag, mag > threshold


def init_state(first_frame: np.ndarray, config: FeatureConfig = FeatureConfig()) -> FeatureState:
    frame = np.asarray(first_frame)
    bg = frame.astype(np.float64)
    mag, binary = edge_maps(frame, config.strong_edge_threshold)
    return FeatureState(
        config=config,
        background=bg,
        delay_buffer=deque([bg.copy()], maxlen=config.n_delay),
        reference_edges_real=mag,
        reference_edges_binary=binary.astype(np.float64),
        reference_keypoints=_keypoints(frame, config),
    )


def _check_dims(state: FeatureState, frame: np.ndarray) -> None:
    if frame.shape != state.shape:
        raise FrameError(f"frame shape {frame.shape} does not match state shape {state.shape}")


def _ema(ref: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    # written as ref + (1 - alpha) (new - ref) so an unchanged input is an exact fixed point;
    # once the step is below one ulp the value would stall a hair away from the input,
    # so stalled entries snap onto it and a constant stream converges exactly
    out = ref + (1.0 - alpha) * (new - ref)
    stalled = out == ref
    if stalled.any():
        out[stalled] = new[stalled]
    return out


def update_background(state: FeatureState, frame: np.ndarray) -> FeatureState:
    """``B_t = alpha B_{t-1} + (1 - alpha) I_t``; the previous background is queued for b3."""
    frame = np.asarray(frame)
    _check_dims(state, frame)
    state.delay_buffer.append(state.background)
    state.background = _ema(state.background, frame.astype(np.float64), state.config.alpha)
    return state


def update_reference_edges(state: FeatureState, magnitude: np.ndarray, binary: np.ndarray) -> FeatureState:
    if magnitude.shape != state.shape or binary.shape != state.shape:
        raise FrameError("edge map dimensions do not match state")
    a = state.config.alpha
    state.reference_edges_real = _ema(state.reference_edges_real, magnitude, a)
    state.reference_edges_binary = _ema(state.reference_edges_binary, binary.astype(np.float64), a)
    return state


# -- residuals -------------------------------------------------------------------


def residual_b1(state: FeatureState, frame: np.ndarray) -> float:
    return float(np.sum(state.background - np.asarray(frame, dtype=np.float64)))


def residual_b2(state: FeatureState, frame: np.ndarray) -> float:
    return entropy(histogram(state.rounded_background())) - entropy(histogram(frame))


def residual_b3(state: FeatureState) -> float:
    """Background now minus background ``n_delay`` frames ago (0 during warm-up)."""
    if not state.b3_valid:
        return 0.0
    return float(np.sum(state.background - state.delay_buffer[0]))


def _window_sum(h: np.ndarray, centre: int, k: int) -> float:
    lo = max(centre - k, 0)
    hi = min(centre + k, len(h) - 1)
    return float(h[lo : hi + 1].sum())


def residual_b4(state: FeatureState, frame: np.ndarray) -> float:
    h_i = histogram(frame)
    h_b = histogram(state.rounded_background())
    # np.argmax returns the first (lowest) index on ties
    m_i = int(np.argmax(h_i))
    m_b = int(np.argmax(h_b))
    k = state.config.K
    return _window_sum(h_b, m_i, k) - _window_sum(h_i, m_b, k)


def residual_e1(state: FeatureState, binary: np.ndarray) -> float:
    return float(np.count_nonzero(state.binary_reference()) - np.count_nonzero(binary))


def residual_e2(state: FeatureState, magnitude: np.ndarray) -> float:
    return float(np.sum(state.reference_edges_real - magnitude))


def residual_e3(state: FeatureState, magnitude: np.ndarray) -> float:
    t = state.config.strong_edge_threshold
    ref = state.reference_edges_real
    return float(np.sum(ref[ref > t]) - np.sum(magnitude[magnitude > t]))


def residual_e4(state: FeatureState, binary: np.ndarray) -> float:
    """Pixels where reference and test edge maps agree.

    With ``e4_and_only`` only joint edge presence is counted.
    """
    ref = state.binary_reference()
    if state.config.e4_and_only:
        return float(np.count_nonzero(ref & binary))
    return float(np.count_nonzero(ref == binary))


def residual_k1(state: FeatureState, keypoints: list[Keypoint]) -> float:
    return float(len(state.reference_keypoints) - len(keypoints))


def residual_k2(state: FeatureState, keypoints: list[Keypoint]) -> float:
    return keypoint_descriptor(state.reference_keypoints) - keypoint_descriptor(keypoints)


# -- orchestration -----------------------------------------------------------------


@dataclass(frozen=True)
class ResidualSample:
    frame_index: int
    values: dict[str, float]
    valid: dict[str, bool]

    @property
    def valid_mask(self) -> int:
        return sum(1 << i for i, f in enumerate(FEATURE_IDS) if self.valid[f])


def process_frame(state: FeatureState, frame: np.ndarray, frame_index: int = 0) -> tuple[FeatureState, ResidualSample]:
    frame = np.asarray(frame)
    _check_dims(state, frame)
    cfg = state.config
    mag, binary = edge_maps(frame, cfg.strong_edge_threshold)
    kps = _keypoints(frame, cfg)

    values = {
        "b1": residual_b1(state, frame),
        "b2": residual_b2(state, frame),
        "b3": residual_b3(state),
        "b4": residual_b4(state, frame),
        "e1": residual_e1(state, binary),
        "e2": residual_e2(state, mag),
        "e3": residual_e3(state, mag),
        "e4": residual_e4(state, binary),
        "k1": residual_k1(state, kps),
        "k2": residual_k2(state, kps),
    }
    valid = {f: True for f in FEATURE_IDS}
    valid["b3"] = state.b3_valid

    update_background(state, frame)
    update_reference_edges(state, mag, binary)
    state.frames_seen += 1
    state._since_refresh += 1
    if state._since_refresh >= cfg.keypoint_refresh:
        state.reference_keypoints = _keypoints(state.rounded_background(), cfg)
        state._since_refresh = 0
    return state, ResidualSample(frame_index, values, valid)


def extract_residuals(frames: Iterable[np.ndarray], config: FeatureConfig = FeatureConfig()) -> Iterator[ResidualSample]:
    """Initialise on the first frame, then yield one sample per frame (the first included)."""
    state = None
    for i, frame in enumerate(frames):
        if state is None:
            state = init_state(frame, config)
        state, sample = process_frame(state, frame, i)
        yield sample


def _fmt(v: float) -> str:
    return repr(float(v))


def write_residual_csv(samples: Iterable[ResidualSample], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in samples:
            w.writerow([s.frame_index, *(_fmt(s.values[f]) for f in FEATURE_IDS), s.valid_mask])
            n += 1
    return n


def read_residual_csv(path: str | os.PathLike) -> tuple[np.ndarray, dict[str, np.ndarray], np.ndarray]:
    """Return ``(frame_index, {feature: values}, valid_mask)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty residual file")
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = list(reader)
    col = {name: header.index(name) for name in CSV_HEADER}
    idx = np.array([int(r[col["frame_index"]]) for r in rows], dtype=np.int64)
    values = {f: np.array([float(r[col[f]]) for r in rows]) for f in FEATURE_IDS}
    mask = np.array([int(r[col["valid_mask"]]) for r in rows], dtype=np.int64)
    return idx, values, mask
