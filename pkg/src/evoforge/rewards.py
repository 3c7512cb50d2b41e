"""Verifiable per-action rewards: type match plus a family-specific distance."""

from __future__ import annotations

from dataclasses import dataclass

from . import kernels
from .actions import Action, Family
from .errors import DegenerateBoxes, ZeroGeometry


@dataclass(frozen=True)
class ScreenGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ZeroGeometry(f"screen geometry {self.width}x{self.height} has a zero side")

    @classmethod
    def parse(cls, text: str) -> "ScreenGeometry":
        w, _, h = text.lower().partition("x")
        return cls(int(w), int(h))


@dataclass(frozen=True)
class RewardBreakdown:
    type_match: int
    r_dist: float
    total: float

    def as_dict(self):
        return {"type_match": self.type_match, "r_dist": self.r_dist, "total": self.total}


def _clamp(v, hi):
    return min(max(v, 0), hi)


def l1_point_reward(pred, ref, geom: ScreenGeometry) -> float:
    if geom.width <= 0 or geom.height <= 0:
        raise ZeroGeometry("zero-sized screen")
    xp, yp = _clamp(pred[0], geom.width), _clamp(pred[1], geom.height)
    xr, yr = _clamp(ref[0], geom.width), _clamp(ref[1], geom.height)
    d = (abs(xp - xr) / geom.width + abs(yp - yr) / geom.height) / 2.0
    return max(0.0, 1.0 - d)


def iou_reward(pred, ref) -> float:
    px1, py1, px2, py2 = pred
    rx1, ry1, rx2, ry2 = ref
    area_p = (px2 - px1) * (py2 - py1)
    area_r = (rx2 - rx1) * (ry2 - ry1)
    if area_p == 0 and area_r == 0:
        raise DegenerateBoxes(f"both boxes {tuple(pred)} and {tuple(ref)} have zero area")
    iw = max(0, min(px2, rx2) - max(px1, rx1))
    ih = max(0, min(py2, ry2) - max(py1, ry1))
    inter = iw * ih
    return inter / (area_p + area_r - inter)


def char_bleu(pred: str, ref: str) -> float:
    """Smoothed character BLEU with N = min(4, |pred|, |ref|)."""
    return kernels.char_bleu(pred, ref)


def reward(pred: Action, ref: Action, geom: ScreenGeometry) -> RewardBreakdown:
    if pred.kind.canonical is not ref.kind.canonical:
        return RewardBreakdown(0, 0.0, 0.0)
    family = ref.kind.family
    if family is Family.POINT:
        r = l1_point_reward(pred.point, ref.point, geom)
    elif family is Family.BOX:
        r = iou_reward(pred.box, ref.box)
    elif family is Family.NONE:
        r = 1.0
    else:
        r = char_bleu(pred.payload_string, ref.payload_string)
    return RewardBreakdown(1, r, 1.0 + r)
