"""Two-piece path-loss template: forward evaluation, inversion and normalization.

The near region follows a log-distance law ``gamma * (10*log10(d) + c)``; beyond
the break point ``d0`` the loss grows linearly with slope ``alpha`` (dB/m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "DegenerateModelError",
    "FresnelParams",
    "TemplateModel",
    "TunnelGeometry",
    "fresnel_break_point",
    "invert_distance",
    "normalize_pair",
    "path_loss",
]


class DegenerateModelError(ValueError):
    """The model cannot be inverted at the requested loss."""


@dataclass(frozen=True)
class TemplateModel:
    gamma: float
    c: float
    d0: float
    alpha: float

    def __post_init__(self):
        for name in ("gamma", "c", "d0", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.d0 <= 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")

    def l0(self) -> float:
        """Loss at the break point, in dB."""
        return self.gamma * (10.0 * math.log10(self.d0) + self.c)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.gamma, self.c, self.d0, self.alpha)


@dataclass(frozen=True)
class FresnelParams:
    h_r: float
    h_t: float
    wavelength: float

    def __post_init__(self):
        if self.h_r < 0 or self.h_t < 0:
            raise ValueError("antenna heights must be non-negative")


@dataclass(frozen=True)
class TunnelGeometry:
    """Two base stations and the RFID anchors between them on one axis (meters)."""

    bs1_pos: float
    bs2_pos: float
    anchor_positions: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "anchor_positions", tuple(float(a) for a in self.anchor_positions))
        if not (math.isfinite(self.bs1_pos) and math.isfinite(self.bs2_pos)):
            raise ValueError("base-station positions must be finite")
        if self.bs2_pos <= self.bs1_pos:
            raise ValueError(f"bs2_pos ({self.bs2_pos}) must exceed bs1_pos ({self.bs1_pos})")
        prev = None
        for a in self.anchor_positions:
            if not (self.bs1_pos < a < self.bs2_pos):
                raise ValueError(
                    f"anchor at {a} m is not strictly between the base stations "
                    f"({self.bs1_pos}, {self.bs2_pos})"
                )
            if prev is not None and a <= prev:
                raise ValueError("anchor positions must be strictly increasing")
            prev = a

    @property
    def span(self) -> float:
        """Inter-BS distance D."""
        return self.bs2_pos - self.bs1_pos

    def with_anchors(self, positions: Sequence[float]) -> "TunnelGeometry":
        return TunnelGeometry(self.bs1_pos, self.bs2_pos, tuple(positions))

    def anchor_distances(self, index: int) -> tuple[float, float]:
        """Distances from anchor ``index`` to BS1 and BS2."""
        a = self.anchor_positions[index]
        return a - self.bs1_pos, self.bs2_pos - a


def path_loss(model: TemplateModel, d):
    """Loss in dB at distance ``d`` (meters). Accepts scalars or arrays."""
    if np.ndim(d) == 0:
        d = float(d)
        if not d > 0:
            raise ValueError(f"distance must be positive, got {d}")
        if d <= model.d0:
            return model.gamma * (10.0 * math.log10(d) + model.c)
        return model.l0() + model.alpha * (d - model.d0)

    d = np.asarray(d, dtype=float)
    if not np.all(d > 0):
        raise ValueError("all distances must be positive")
    near = model.gamma * (10.0 * np.log10(d) + model.c)
    far = model.l0() + model.alpha * (d - model.d0)
    return np.where(d <= model.d0, near, far)


def fresnel_break_point(p: FresnelParams) -> float:
    """Break-point distance from a free first Fresnel zone, ``4*h_r*h_t/wavelength``."""
    if not p.wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {p.wavelength}")
    return 4.0 * p.h_r * p.h_t / p.wavelength


def invert_distance(model: TemplateModel, loss: float) -> float:
    """Distance (m) at which the model predicts ``loss`` dB.

    Exact inverse of :func:`path_loss`. Losses above the break-point loss need a
    positive far-region slope; anything else raises :class:`DegenerateModelError`.
    """
    loss = float(loss)
    if not math.isfinite(loss):
        raise ValueError(f"loss must be finite, got {loss}")
    l0 = model.l0()
    if loss <= l0:
        return 10.0 ** ((loss / model.gamma - model.c) / 10.0)
    if model.alpha <= 0:
        raise DegenerateModelError(
            f"loss {loss:.4f} dB exceeds break-point loss {l0:.4f} dB but the far-region "
            f"slope is {model.alpha}; the far region is not invertible"
        )
    return model.d0 + (loss - l0) / model.alpha


def normalize_pair(d1: float, d2: float, span: float) -> tuple[float, float]:
    """Rescale two BS distances so they sum to the inter-BS distance ``span``.

    Each output is the correctly rounded value of ``span * di / (d1 + d2)``.
    """
    if d1 + d2 == 0:
        raise ValueError("d1 + d2 must be non-zero")
    if d1 + d2 == span:
        return d1, d2
    fs, f1, f2 = Fraction(span), Fraction(d1), Fraction(d2)
    total = f1 + f2
    return float(fs * f1 / total), float(fs * f2 / total)
