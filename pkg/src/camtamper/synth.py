"""Toy surveillance scenes and scheduled covered / defocussed / moved tampering."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from .frames import as_frame, gaussian_blur

KINDS = ("covered", "defocussed", "moved")
LABELS = ("normal",) + KINDS
SIGMA_MAX = 8.0


@dataclass(frozen=True)
class TamperEvent:
    kind: str
    start_frame: int
    end_frame: int  # exclusive
    extent: float = 1.0
    rate_frames: int = 0
    fill: str = "noise"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown tamper kind {self.kind!r}")
        if not self.start_frame < self.end_frame:
            raise ValueError("event must satisfy start < end")
        if not 0 < self.extent <= 1:
            raise ValueError("extent must lie in (0, 1]")
        if not 0 <= self.rate_frames <= self.end_frame - self.start_frame:
            raise ValueError("rate_frames must lie in [0, end - start]")
        if self.fill not in ("noise", "flat"):
            raise ValueError(f"unknown fill mode {self.fill!r}")

    def progress(self, frame_index: int) -> float:
        """0 outside the event; inside, a linear ramp over ``rate_frames`` that then holds at 1."""
        if not self.start_frame <= frame_index < self.end_frame:
            return 0.0
        if self.rate_frames == 0:
            return 1.0
        return min(1.0, (frame_index - self.start_frame + 1) / self.rate_frames)


@dataclass
class TamperSchedule:
    events: list[TamperEvent]
    total_frames: int
    seed: int = 0

    def __post_init__(self) -> None:
        self.events = sorted(self.events, key=lambda e: e.start_frame)
        for a, b in zip(self.events, self.events[1:]):
            if b.start_frame < a.end_frame:
                raise ValueError("tamper events overlap")
        if self.events and self.events[-1].end_frame > self.total_frames:
            raise ValueError("event extends beyond total_frames")

    def event_at(self, frame_index: int) -> TamperEvent | None:
        for ev in self.events:
            if ev.start_frame <= frame_index < ev.end_frame:
                return ev
        return None

    def labels(self) -> list[str]:
        out = ["normal"] * self.total_frames
        for ev in self.events:
            out[ev.start_frame : ev.end_frame] = [ev.kind] * (ev.end_frame - ev.start_frame)
        return out

    def to_json(self) -> str:
        doc = {
            "total_frames": self.total_frames,
            "seed": self.seed,
            "events": [asdict(e) for e in self.events],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TamperSchedule":
        doc = json.loads(text)
        return cls([TamperEvent(**e) for e in doc["events"]], int(doc["total_frames"]), int(doc.get("seed", 0)))


def make_schedule(total_frames: int, fps: float = 3.0, period_s: float = 600, dur_min_s: float = 300,
                  dur_max_s: float = 600, seed: int = 0, extent: float = 1.0, rate_frames: int = 0,
                  fill: str = "noise") -> TamperSchedule:
    """One event per period, kinds cycling covered -> defocussed -> moved.

    Each event occupies the tail of its period, so every period opens with normal
    frames. Durations are uniform in ``[dur_min_s, dur_max_s]``.
    """
    period = int(round(period_s * fps))
    if period <= 0 or total_frames <= period:
        raise ValueError("total_frames must exceed one tamper period")
    if dur_max_s > period_s or dur_min_s > dur_max_s or dur_min_s <= 0:
        raise ValueError("durations must satisfy 0 < dur_min <= dur_max <= period")
    rng = np.random.default_rng(seed)
    events = []
    for i, p0 in enumerate(range(0, total_frames, period)):
        dur = max(1, int(round(rng.uniform(dur_min_s, dur_max_s) * fps)))
        dur = min(dur, period)
        start = p0 + period - dur
        end = min(p0 + period, total_frames)
        if start >= total_frames:
            break
        events.append(TamperEvent(KINDS[i % 3], start, end, extent, min(rate_frames, end - start), fill))
    return TamperSchedule(events, total_frames, seed)


# -- tamper effects ----------------------------------------------------------------


def covered_rect(width: int, height: int, area_fraction: float) -> tuple[int, int, int, int]:
    """Centred rectangle ``(x0, y0, w, h)`` with the frame's aspect ratio and the given area."""
    s = math.sqrt(max(area_fraction, 0.0))
    w = min(width, int(round(width * s)))
    h = min(height, int(round(height * s)))
    return (width - w) // 2, (height - h) // 2, w, h


def apply_covered(frame: np.ndarray, extent: float, progress: float, seed=0, fill: str = "noise") -> np.ndarray:
    if not 0 < extent <= 1:
        raise ValueError("extent must lie in (0, 1]")
    img = np.asarray(frame)
    x0, y0, w, h = covered_rect(img.shape[1], img.shape[0], extent * progress)
    if w == 0 or h == 0:
        return as_frame(img)
    out = img.copy()
    if fill == "noise":
        rng = np.random.default_rng(seed)
        out[y0 : y0 + h, x0 : x0 + w] = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
    elif fill == "flat":
        out[y0 : y0 + h, x0 : x0 + w] = 128
    else:
        raise ValueError(f"unknown fill mode {fill!r}")
    return as_frame(out)


def defocus_sigma(extent: float, progress: float) -> float:
    return SIGMA_MAX * extent * progress


def apply_defocussed(frame: np.ndarray, extent: float, progress: float) -> np.ndarray:
    if not 0 < extent <= 1:
        raise ValueError("extent must lie in (0, 1]")
    sigma = defocus_sigma(extent, progress)
    if sigma <= 0:
        return as_frame(frame)
    return gaussian_blur(frame, sigma)


def moved_shift(width: int, height: int, extent: float, progress: float) -> tuple[int, int]:
    # floor(x + 0.5) so halves round away from zero, matching the arithmetic examples
    f = extent * progress
    return int(math.floor(f * width / 2 + 0.5)), int(math.floor(f * height / 2 + 0.5))


def apply_moved(frame: np.ndarray, extent: float, progress: float) -> np.ndarray:
    """Translate content by ``(dx, dy)``; the exposed border replicates the edge pixels."""
    if not 0 < extent <= 1:
        raise ValueError("extent must lie in (0, 1]")
    img = np.asarray(frame)
    h, w = img.shape
    dx, dy = moved_shift(w, h, extent, progress)
    if dx == 0 and dy == 0:
        return as_frame(img)
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return as_frame(img[np.ix_(ys, xs)])


def tamper_frame(frame: np.ndarray, event: TamperEvent, frame_index: int, seed: int = 0) -> np.ndarray:
    progress = event.progress(frame_index)
    if event.kind == "covered":
        return apply_covered(frame, event.extent, progress, seed=(seed, frame_index), fill=event.fill)
    if event.kind == "defocussed":
        return apply_defocussed(frame, event.extent, progress)
    return apply_moved(frame, event.extent, progress)


def synthesize(frames: Sequence[np.ndarray], schedule: TamperSchedule) -> Iterator[tuple[np.ndarray, str]]:
    """Yield ``(frame, label)`` for the first ``schedule.total_frames`` frames.

    Frames outside every event are passed through unchanged and labelled normal.
    """
    if schedule.total_frames > len(frames):
        raise ValueError("schedule is longer than the frame sequence")
    for i in range(schedule.total_frames):
        frame = frames[i]
        ev = schedule.event_at(i)
        if ev is None:
            yield frame, "normal"
        else:
            yield tamper_frame(frame, ev, i, schedule.seed), ev.kind


def write_annotations(labels: Iterable[str], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "label"])
        for i, lab in enumerate(labels):
            w.writerow([i, lab])


def read_annotations(path: str | os.PathLike) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(int(r["frame_index"]), r["label"]) for r in reader]
    for _, lab in rows:
        if lab not in LABELS:
            raise ValueError(f"unknown label {lab!r}")
    return np.array([r[0] for r in rows], dtype=np.int64), [r[1] for r in rows]


# -- toy scene ---------------------------------------------------------------------


@dataclass
class ToyScene:
    """Deterministic stand-in for a fixed surveillance camera.

    Static smoothed-noise texture, a bright square orbiting an ellipse, and a global
    sinusoidal gain of +/- ``drift`` over ``drift_period`` frames. Indexable like a
    frame sequence; frames are rendered on demand.
    """

    total_frames: int
    width: int = 320
    height: int = 240
    seed: int = 0
    orbit_period: int = 90
    drift: float = 0.10
    drift_period: int = 1800
    frame_rate: float = 3.0
    _texture: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.width < 64 or self.height < 64:
            raise ValueError("toy scene needs at least 64x64 pixels")
        if self.total_frames < 0:
            raise ValueError("total_frames must be >= 0")
        rng = np.random.default_rng(self.seed)
        noise = ndimage.gaussian_filter(rng.uniform(0, 255, (self.height, self.width)), 2.0, mode="nearest")
        lo, hi = noise.min(), noise.max()
        self._texture = 40.0 + 160.0 * (noise - lo) / (hi - lo)

    @property
    def sprite_size(self) -> int:
        return max(4, min(self.width, self.height) // 8)

    def sprite_origin(self, t: int) -> tuple[int, int]:
        ang = 2 * math.pi * t / self.orbit_period
        cx = self.width / 2 + self.width / 3 * math.cos(ang)
        cy = self.height / 2 + self.height / 4 * math.sin(ang)
        s = self.sprite_size
        x0 = int(round(cx - s / 2))
        y0 = int(round(cy - s / 2))
        return min(max(x0, 0), self.width - s), min(max(y0, 0), self.height - s)

    def gain(self, t: int) -> float:
        return 1.0 + self.drift * math.sin(2 * math.pi * t / self.drift_period)

    def __len__(self) -> int:
        return self.total_frames

    def __getitem__(self, t: int) -> np.ndarray:
        if not 0 <= t < self.total_frames:
            raise IndexError(t)
        img = self._texture.copy()
        x0, y0 = self.sprite_origin(t)
        s = self.sprite_size
        img[y0 : y0 + s, x0 : x0 + s] = 230.0
        return as_frame(np.clip(np.rint(img * self.gain(t)), 0, 255))

    def __iter__(self) -> Iterator[np.ndarray]:
        for t in range(self.total_frames):
            yield self[t]


def toy_scene(total_frames: int, width: int = 320, height: int = 240, seed: int = 0, **kwargs) -> ToyScene:
    return ToyScene(total_frames, width, height, seed, **kwargs)
