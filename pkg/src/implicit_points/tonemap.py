"""Invertible tonemapper: exposure scaling plus a pinned piecewise-linear response.

All arithmetic is float64. The response curve is sampled on uniform knots
over [0, 1] with its endpoints fixed to exactly 0 and 1, which makes the
forward map a bijection from [0, 2^ev] onto [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_KNOTS = 25
MIN_GAP = 1e-6


@dataclass(frozen=True)
class ResponseCurve:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        validate_curve(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls, knots: int = DEFAULT_KNOTS) -> "ResponseCurve":
        return cls(np.linspace(0.0, 1.0, knots))

    @property
    def knots(self) -> int:
        return len(self.values)

    def to_json(self) -> str:
        return json.dumps({"knots": self.knots, "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ResponseCurve":
        return cls(np.asarray(json.loads(text)["values"], dtype=np.float64))


def validate_curve(values: np.ndarray, eps: float = MIN_GAP) -> None:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) < 2:
        raise ValueError("response curve needs at least two control values")
    if not np.all(np.isfinite(v)):
        raise ValueError("response curve has non-finite values")
    if v[0] != 0.0 or v[-1] != 1.0:
        raise ValueError("response curve endpoints must be exactly 0 and 1")
    # tolerance absorbs rounding in r[k-1] + eps
    if np.any(np.diff(v) < eps * (1 - 1e-9)):
        raise ValueError(f"response curve must increase by at least {eps}")


def project_curve(raw, eps: float = MIN_GAP) -> ResponseCurve:
    """Project arbitrary control values onto the set of valid curves.

    Endpoints are pinned, interior values are clipped into the band that
    leaves room for ``eps`` gaps on both sides, and a forward cumulative
    max restores the gaps. A curve that is already valid is returned as is.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    K = len(raw)
    if K < 2:
        raise ValueError("need at least two control values")
    if (K - 1) * eps >= 1.0:
        raise ValueError("too many knots for the minimum gap")
    v = np.nan_to_num(raw, nan=0.0, posinf=1.0, neginf=0.0)
    k = np.arange(K)
    lo = k * eps
    hi = 1.0 - (K - 1 - k) * eps
    v = np.clip(v, lo, hi)
    v[0], v[-1] = 0.0, 1.0
    for i in range(1, K - 1):
        if v[i] < v[i - 1] + eps:
            v[i] = v[i - 1] + eps
    return ResponseCurve(v)


def _batched_curve(curve, n):
    vals = curve.values if isinstance(curve, ResponseCurve) else np.asarray(curve, np.float64)
    if vals.ndim == 1:
        return vals, False
    if vals.shape[0] != n:
        raise ValueError("per-value curves must match the value count")
    return vals, True


def _check_curve(curve):
    if isinstance(curve, ResponseCurve):
        return
    vals = np.asarray(curve, dtype=np.float64)
    if vals.ndim == 1:
        validate_curve(vals)
        return
    if vals.ndim != 2 or vals.shape[1] < 2:
        raise ValueError("batched curves must have shape (N, K) with K >= 2")
    if not np.all(np.isfinite(vals)):
        raise ValueError("response curve has non-finite values")
    if np.any(vals[:, 0] != 0.0) or np.any(vals[:, -1] != 1.0):
        raise ValueError("response curve endpoints must be exactly 0 and 1")
    if np.any(np.diff(vals, axis=1) < MIN_GAP * (1 - 1e-9)):
        raise ValueError(f"response curve must increase by at least {MIN_GAP}")


def tonemap_forward(hdr, ev, curve: ResponseCurve) -> np.ndarray:
    """Exposure-normalize, clamp to [0, 1], apply the response curve.

    ``curve`` may also be an (N, K) array of curves paired with N values.
    """
    _check_curve(curve)
    x = np.asarray(hdr, dtype=np.float64)
    shape = x.shape
    x = x.reshape(-1)
    vals, batched = _batched_curve(curve, len(x))
    ev = np.broadcast_to(np.asarray(ev, dtype=np.float64), shape).reshape(-1)
    e = np.clip(x / np.exp2(ev), 0.0, 1.0)
    K = vals.shape[-1]
    s = e * (K - 1)
    seg = np.minimum(np.floor(s).astype(np.int64), K - 2)
    t = s - seg
    if batched:
        rows = np.arange(len(x))
        r0, r1 = vals[rows, seg], vals[rows, seg + 1]
    else:
        r0, r1 = vals[seg], vals[seg + 1]
    return (r0 + (r1 - r0) * t).reshape(shape)


def tonemap_inverse(srgb, ev, curve: ResponseCurve) -> np.ndarray:
    """Invert :func:`tonemap_forward` on [0, 1]; result lies in [0, 2^ev]."""
    _check_curve(curve)
    y = np.asarray(srgb, dtype=np.float64)
    shape = y.shape
    y = y.reshape(-1)
    if np.any(y < -1e-12) or np.any(y > 1.0 + 1e-12) or np.any(np.isnan(y)):
        raise ValueError("tonemapped values must lie in [0, 1]")
    y = np.clip(y, 0.0, 1.0)
    vals, batched = _batched_curve(curve, len(y))
    ev = np.broadcast_to(np.asarray(ev, dtype=np.float64), shape).reshape(-1)
    K = vals.shape[-1]
    # binary search for the last knot with r_k <= y, capped at K-2
    lo = np.zeros(len(y), dtype=np.int64)
    hi = np.full(len(y), K - 1, dtype=np.int64)
    rows = np.arange(len(y))
    while np.any(hi - lo > 1):
        mid = (lo + hi) // 2
        rm = vals[rows, mid] if batched else vals[mid]
        go_right = rm <= y
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    if batched:
        r0, r1 = vals[rows, lo], vals[rows, lo + 1]
    else:
        r0, r1 = vals[lo], vals[lo + 1]
    t = (y - r0) / (r1 - r0)
    e = (lo + t) / (K - 1)
    return (e * np.exp2(ev)).reshape(shape)
