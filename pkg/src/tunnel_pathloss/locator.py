"""Operating phase: turn measured losses into a position on the tunnel axis."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import TemplateModel, TunnelGeometry, invert_distance, normalize_pair

__all__ = ["PositionEstimate", "locate_one_bs", "locate_two_bs", "path_loss_from_rssi"]


@dataclass(frozen=True)
class PositionEstimate:
    position: float
    d1: float
    d2: float | None
    normalized: bool
    raw_d1: float
    raw_d2: float | None = None
    warnings: tuple[str, ...] = ()


def _check_loss(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def locate_two_bs(model: TemplateModel, geometry: TunnelGeometry, l1: float, l2: float) -> PositionEstimate:
    """Position from losses at both base stations, rescaled so d1 + d2 = D."""
    l1 = _check_loss("l1", l1)
    l2 = _check_loss("l2", l2)
    raw1 = invert_distance(model, l1)
    raw2 = invert_distance(model, l2)
    span = geometry.span
    warnings = []
    if raw1 > span:
        warnings.append("d1_exceeds_span")
    if raw2 > span:
        warnings.append("d2_exceeds_span")
    if raw1 + raw2 == span:
        d1, d2, normalized = raw1, raw2, False
    else:
        d1, d2 = normalize_pair(raw1, raw2, span)
        normalized = True
    return PositionEstimate(geometry.bs1_pos + d1, d1, d2, normalized, raw1, raw2, tuple(warnings))


def locate_one_bs(
    model: TemplateModel,
    bs_pos: float,
    direction: int,
    loss: float,
    extent: tuple[float, float] | None = None,
) -> PositionEstimate:
    """Position from a single base station; no normalization is possible.

    ``direction`` is +1 when the object lies toward increasing coordinates.
    Estimates outside ``extent`` are returned with an ``out_of_range`` warning.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    loss = _check_loss("loss", loss)
    d = invert_distance(model, loss)
    pos = bs_pos + direction * d
    warnings = ()
    if extent is not None and not extent[0] <= pos <= extent[1]:
        warnings = ("out_of_range",)
    return PositionEstimate(pos, d, None, False, d, None, warnings)


def path_loss_from_rssi(rssi: float, tx_power: float, gains: float) -> float:
    """Link budget: loss = tx_power + gains - rssi (all in dB/dBm)."""
    return tx_power + gains - rssi
