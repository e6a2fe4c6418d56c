"""Pre-action and action geometry for reactive-power devices.

A policy emits pre-actions in (-1, 1); a linear map stretches them onto a
physical box in MVar.  For residual control, a per-step residual interval
is clipped against the device box around the reference setpoint, so the
composed setpoint can never leave the box, whatever the policy outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# references landing outside their box (optimizer slack) are clamped;
# the count makes silent systematic infeasibility visible
clamp_events = 0


@dataclass(frozen=True)
class ActionBox:
    """Elementwise device output limits in MVar."""
    a_low: np.ndarray
    a_high: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.a_low, float))
        hi = np.atleast_1d(np.asarray(self.a_high, float))
        object.__setattr__(self, "a_low", lo)
        object.__setattr__(self, "a_high", hi)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have matching shapes")
        if not np.all(lo < hi):
            raise ValueError("box must satisfy a_low < a_high elementwise")

    @property
    def half_range(self) -> np.ndarray:
        return (self.a_high - self.a_low) / 2.0

    @property
    def center(self) -> np.ndarray:
        return (self.a_high + self.a_low) / 2.0


@dataclass(frozen=True)
class ResidualBounds:
    """Per-step residual interval [lo, hi] in MVar around the reference."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if np.any(lo > hi + 1e-15):
            raise ValueError("residual bounds must satisfy lo <= hi")


@dataclass(frozen=True)
class ResidualConfig:
    """Residual half-width per device: delta = lambda_scale * half-range."""
    delta: np.ndarray
    lambda_scale: float = 1.0

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.delta, float))
        object.__setattr__(self, "delta", d)
        if np.any(d < 0):
            raise ValueError("delta must be non-negative")
        if not 0.0 <= self.lambda_scale <= 1.0:
            raise ValueError("lambda_scale must lie in [0, 1]")

    @classmethod
    def from_box(cls, box: ActionBox, lambda_scale: float) -> "ResidualConfig":
        return cls(delta=lambda_scale * box.half_range, lambda_scale=lambda_scale)


def linear_map(a_p: np.ndarray, box: ActionBox) -> np.ndarray:
    """Stretch pre-actions in (-1, 1) onto the device box.

    a = k * a_p + b with k the half-range and b the box center; affine and
    strictly interior for strictly interior pre-actions.
    """
    a_p = np.asarray(a_p, float)
    if np.any(np.abs(a_p) >= 1.0):
        raise ValueError("pre-actions must lie strictly inside (-1, 1)")
    return box.half_range * a_p + box.center


def residual_bounds(a_m: np.ndarray, cfg: ResidualConfig, box: ActionBox) -> ResidualBounds:
    """Clip the residual interval so the composed action stays in the box.

    lo = -delta - min(a_m - delta - a_low, 0)
    hi =  delta - max(a_m + delta - a_high, 0)
    which shifts whichever side of [a_m - delta, a_m + delta] pokes out of
    the box back onto the box edge.
    """
    a_m = np.asarray(a_m, float)
    outside = (a_m < box.a_low) | (a_m > box.a_high)
    if np.any(outside):
        global clamp_events
        clamp_events += 1
        log.warning("reference action outside device box by up to %.3e MVar; "
                    "clamping (event %d)",
                    float(np.maximum(box.a_low - a_m, a_m - box.a_high).max()),
                    clamp_events)
        a_m = np.clip(a_m, box.a_low, box.a_high)
    d = cfg.delta
    lo = -d - np.minimum(a_m - d - box.a_low, 0.0)
    hi = d - np.maximum(a_m + d - box.a_high, 0.0)
    return ResidualBounds(lo=lo, hi=hi)


def map_residual(a_rp: np.ndarray, rb: ResidualBounds) -> np.ndarray:
    """Stretch residual pre-actions in (-1, 1) onto the residual interval."""
    a_rp = np.asarray(a_rp, float)
    if np.any(np.abs(a_rp) >= 1.0):
        raise ValueError("residual pre-actions must lie strictly inside (-1, 1)")
    k = (rb.hi - rb.lo) / 2.0
    b = (rb.hi + rb.lo) / 2.0
    return k * a_rp + b


def compose(a_m: np.ndarray, a_r: np.ndarray, box: ActionBox) -> np.ndarray:
    """Final device setpoint a_m + a_r, guaranteed inside the box.

    The guarantee comes from residual_bounds/map_residual; the clip only
    removes floating-point dust at the edges.
    """
    a = np.asarray(a_m, float) + np.asarray(a_r, float)
    return np.clip(a, box.a_low, box.a_high)
