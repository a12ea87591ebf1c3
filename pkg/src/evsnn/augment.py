"""Event data augmentations: pure, seeded transforms over event streams.

Five common transforms (crop, hflip, noise, polflip, reverse), two
specific ones (eventdrop, mirror), and a composable pipeline. Every
transform returns a fresh, valid stream; randomness comes only from the
generator handed in, so results are reproducible and parallel-safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .events import EventStream


def _resorted(stream: EventStream, x, y, t, p) -> EventStream:
    order = np.argsort(t, kind="stable")
    return stream.with_fields(x=x[order], y=y[order], t=t[order], p=p[order])


def hflip(stream: EventStream) -> EventStream:
    """Reflect every event about the vertical axis: x -> W-1-x."""
    return stream.with_fields(x=stream.width - 1 - stream.x)


def polflip(stream: EventStream) -> EventStream:
    """Negate every polarity."""
    return stream.with_fields(p=-stream.p)


def reverse(stream: EventStream) -> EventStream:
    """Mirror time inside [t_start, t_end): t -> t_start + (t_end-1 - t)."""
    t = stream.t_start + (stream.t_end - 1) - stream.t
    # mirrored timestamps are monotone decreasing; flipping restores order
    # (stable for ties: equal timestamps keep their mirrored relative order)
    order = np.argsort(t, kind="stable")
    return stream.with_fields(x=stream.x[order], y=stream.y[order],
                              t=t[order], p=stream.p[order])


def crop(stream: EventStream, rng: np.random.Generator,
         scale_min: float = 0.6, scale_max: float = 1.0) -> EventStream:
    """Random-resized crop: keep one window for the whole sequence and remap
    kept coordinates back to full resolution.

    Draw order: area scale, then corner x0, then y0.
    """
    if not 0.0 < scale_min <= scale_max <= 1.0:
        raise ValueError(f"bad crop scale range [{scale_min}, {scale_max}]")
    s = rng.uniform(scale_min, scale_max)
    w = min(stream.width, max(1, round(stream.width * np.sqrt(s))))
    h = min(stream.height, max(1, round(stream.height * np.sqrt(s))))
    x0 = int(rng.integers(0, stream.width - w + 1))
    y0 = int(rng.integers(0, stream.height - h + 1))
    keep = ((stream.x >= x0) & (stream.x < x0 + w)
            & (stream.y >= y0) & (stream.y < y0 + h))
    x = (stream.x[keep] - x0) * stream.width // w
    y = (stream.y[keep] - y0) * stream.height // h
    return stream.with_fields(x=x, y=y, t=stream.t[keep], p=stream.p[keep])


def noise_ba(stream: EventStream, rng: np.random.Generator,
             ratio: float = 0.1) -> EventStream:
    """Inject floor(ratio * N) background-activity events, uniform in x, y, t
    and polarity; all original events are retained."""
    if ratio < 0:
        raise ValueError(f"noise ratio must be >= 0, got {ratio}")
    n_add = int(ratio * stream.n)
    if n_add == 0:
        return stream
    x = np.concatenate([stream.x, rng.integers(0, stream.width, n_add, dtype=np.int64)])
    y = np.concatenate([stream.y, rng.integers(0, stream.height, n_add, dtype=np.int64)])
    t = np.concatenate([stream.t, rng.integers(stream.t_start, stream.t_end,
                                               n_add, dtype=np.int64)])
    p = np.concatenate([stream.p, (rng.integers(0, 2, n_add, dtype=np.int8) * 2 - 1)])
    return _resorted(stream, x, y, t, p)


def drop_by_time(stream: EventStream, rng: np.random.Generator,
                 ratio: float) -> EventStream:
    """Delete all events inside one random interval of the given duration ratio."""
    dur = round(ratio * stream.duration)
    t0 = int(rng.integers(stream.t_start, stream.t_end - dur + 1))
    keep = (stream.t < t0) | (stream.t >= t0 + dur)
    return stream.with_fields(x=stream.x[keep], y=stream.y[keep],
                              t=stream.t[keep], p=stream.p[keep])


def drop_by_area(stream: EventStream, rng: np.random.Generator,
                 ratio: float) -> EventStream:
    """Delete all events inside one random rectangle of the given area ratio."""
    w = min(stream.width, max(1, round(stream.width * np.sqrt(ratio))))
    h = min(stream.height, max(1, round(stream.height * np.sqrt(ratio))))
    x0 = int(rng.integers(0, stream.width - w + 1))
    y0 = int(rng.integers(0, stream.height - h + 1))
    keep = ~((stream.x >= x0) & (stream.x < x0 + w)
             & (stream.y >= y0) & (stream.y < y0 + h))
    return stream.with_fields(x=stream.x[keep], y=stream.y[keep],
                              t=stream.t[keep], p=stream.p[keep])


def drop_random(stream: EventStream, rng: np.random.Generator,
                ratio: float) -> EventStream:
    """Delete each event independently with probability ``ratio``."""
    keep = rng.random(stream.n) >= ratio
    return stream.with_fields(x=stream.x[keep], y=stream.y[keep],
                              t=stream.t[keep], p=stream.p[keep])


def eventdrop(stream: EventStream, rng: np.random.Generator,
              ratio_lo: float = 0.05, time_ratio_max: float = 0.3,
              area_ratio_max: float = 0.3, global_ratio_max: float = 0.5,
              ) -> EventStream:
    """One of four strategies, chosen uniformly: identity, drop-by-time,
    drop-by-area, or independent random drop. Ratios are uniform draws from
    [ratio_lo, the strategy's max]."""
    strategy = int(rng.integers(0, 4))
    if strategy == 0:
        return stream
    if strategy == 1:
        return drop_by_time(stream, rng, rng.uniform(ratio_lo, time_ratio_max))
    if strategy == 2:
        return drop_by_area(stream, rng, rng.uniform(ratio_lo, area_ratio_max))
    return drop_random(stream, rng, rng.uniform(ratio_lo, global_ratio_max))


def mirror(stream: EventStream, rng: np.random.Generator) -> EventStream:
    """Mirror one half of the frame onto the other.

    Picks a source side uniformly, discards events on the other side, and
    emits a reflected copy (x -> W-1-x) of every kept event. For odd widths
    the center column belongs to the source side and is not duplicated.
    """
    w = stream.width
    left = int(rng.integers(0, 2)) == 0
    center = (w - 1) // 2
    if w % 2 == 0:
        keep = stream.x < w // 2 if left else stream.x >= w // 2
    else:
        keep = stream.x <= center if left else stream.x >= center
    kx, ky, kt, kp = stream.x[keep], stream.y[keep], stream.t[keep], stream.p[keep]
    refl = kx != (w - 1 - kx)  # drop self-reflections (odd-W center column)
    x = np.concatenate([kx, w - 1 - kx[refl]])
    y = np.concatenate([ky, ky[refl]])
    t = np.concatenate([kt, kt[refl]])
    p = np.concatenate([kp, kp[refl]])
    return _resorted(stream, x, y, t, p)


@dataclass(frozen=True)
class TransformSpec:
    """One pipeline stage: transform kind, its application probability, and
    parameters. Parameter defaults follow the individual transform functions."""

    kind: str
    prob: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.kind!r}; known: {sorted(TRANSFORMS)}")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"application probability {self.prob} outside [0, 1]")


def _apply_deterministic(fn: Callable[[EventStream], EventStream]):
    def apply(stream, rng, **params):
        return fn(stream, **params)
    return apply


TRANSFORMS: dict[str, Callable] = {
    "crop": crop,
    "hflip": _apply_deterministic(hflip),
    "noise": noise_ba,
    "polflip": _apply_deterministic(polflip),
    "reverse": _apply_deterministic(reverse),
    "eventdrop": eventdrop,
    "mirror": mirror,
}

# fixed application order of the five common transforms
COMMON_EDAS = ("crop", "hflip", "noise", "polflip", "reverse")
SPECIFIC_EDAS = ("eventdrop", "mirror")


@dataclass(frozen=True)
class AugmentSpec:
    """An ordered transform pipeline plus the master seed that drives it."""

    transforms: tuple[TransformSpec, ...] = ()
    seed: int = 0

    def with_seed(self, seed: int) -> "AugmentSpec":
        return replace(self, seed=seed)

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "transforms": [
                {"kind": tr.kind, "prob": tr.prob, **tr.params}
                for tr in self.transforms
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AugmentSpec":
        doc = json.loads(text)
        unknown = set(doc) - {"seed", "transforms"}
        if unknown:
            raise ValueError(f"unknown augment spec keys: {sorted(unknown)}")
        trs = []
        for entry in doc.get("transforms", []):
            entry = dict(entry)
            kind = entry.pop("kind")
            prob = entry.pop("prob", 0.5)
            trs.append(TransformSpec(kind=kind, prob=prob, params=entry))
        return cls(transforms=tuple(trs), seed=int(doc.get("seed", 0)))


class RngStream:
    """Deterministic per-sample randomness, split per transform.

    The generator for (master seed, sample index, transform index) is a pure
    function of those three values, so pipelines applied to different samples
    in parallel draw identical numbers regardless of execution order.
    """

    def __init__(self, master_seed: int, sample_index: int):
        self.master_seed = master_seed
        self.sample_index = sample_index

    def split(self, transform_index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.master_seed,
                                    spawn_key=(self.sample_index, transform_index))
        return np.random.default_rng(ss)


def apply_pipeline(stream: EventStream, spec: AugmentSpec, sample_index: int,
                   ) -> EventStream:
    """Apply the spec's transforms in order; each stage fires with its own
    probability using its own random split."""
    rngs = RngStream(spec.seed, sample_index)
    for i, tr in enumerate(spec.transforms):
        rng = rngs.split(i)
        # the fire coin always burns one draw, so a stage's own draws do not
        # depend on its probability setting
        if rng.random() < tr.prob or tr.prob >= 1.0:
            stream = TRANSFORMS[tr.kind](stream, rng, **tr.params)
    return stream
