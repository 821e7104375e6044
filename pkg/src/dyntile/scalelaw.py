"""Altitude-aware resolution law, the bin ladder, and bin selection policies.

The required long-side resolution for recognising an object of physical area
``obj`` (m^2) with at least ``rec`` pixels of area, from altitude ``h`` with a
camera field of view ``fov``, is::

    p_hat = 2 * h * tan(fov / 2) * sqrt(rec / obj)

Resolutions are then quantised onto a ladder of bins that grows by one tile
stride per step, so that each bin tiles exactly into 640 px tiles at the chosen
overlap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union


class ScaleLawError(ValueError):
    """Raised for out-of-domain inputs to the scaling math."""


def _check_finite_positive(name: str, value: float) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScaleLawError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value) or value <= 0:
        raise ScaleLawError(f"{name} must be finite and > 0, got {value!r}")


def _check_fov(fov_deg: float) -> None:
    _check_finite_positive("fov_deg", fov_deg)
    if fov_deg >= 180:
        raise ScaleLawError(f"fov_deg must be < 180, got {fov_deg!r}")


@dataclass(frozen=True)
class RecognitionSpec:
    rec_px2: float = 80.0  # minimum pixel area for recognition
    obj_m2: float = 0.48  # physical target area (0.3 m x 1.6 m person)

    def __post_init__(self):
        _check_finite_positive("rec_px2", self.rec_px2)
        _check_finite_positive("obj_m2", self.obj_m2)


@dataclass(frozen=True)
class CameraModel:
    """One capture: altitude (None when unknown), FOV and native size."""

    altitude_m: Optional[float]
    fov_deg: float
    native_width_px: int
    native_height_px: int

    def __post_init__(self):
        if self.altitude_m is not None:
            _check_finite_positive("altitude_m", self.altitude_m)
        _check_fov(self.fov_deg)
        if self.native_width_px <= 0 or self.native_height_px <= 0:
            raise ScaleLawError(
                f"native size must be positive, got {self.native_width_px}x{self.native_height_px}"
            )

    @property
    def native_long_side(self) -> int:
        return max(self.native_width_px, self.native_height_px)


def required_resolution_exact(h: float, fov_deg: float, spec: RecognitionSpec) -> float:
    """Unrounded minimum long-side resolution in pixels."""
    _check_finite_positive("h", h)
    _check_fov(fov_deg)
    return 2.0 * h * math.tan(math.radians(fov_deg) / 2.0) * math.sqrt(spec.rec_px2 / spec.obj_m2)


def required_resolution(h: float, fov_deg: float, spec: RecognitionSpec) -> int:
    """Minimum long-side resolution in whole pixels (rounded once, at the end).

    >>> required_resolution(10, 73, RecognitionSpec())
    191
    """
    return max(1, int(round(required_resolution_exact(h, fov_deg, spec))))


@dataclass(frozen=True)
class BinLadder:
    tile_size_px: int
    stride_fraction: float
    bin_count: int
    bins_px: tuple

    @property
    def step_px(self) -> int:
        return int(round(self.tile_size_px * self.stride_fraction))

    @property
    def top(self) -> int:
        return self.bins_px[-1]

    def bin(self, index: int) -> int:
        """Resolution of bin ``index`` (1-based, as in P1..Pn)."""
        if not 1 <= index <= len(self.bins_px):
            raise ScaleLawError(f"bin index {index} outside 1..{len(self.bins_px)}")
        return self.bins_px[index - 1]


def build_ladder(tile_size_px: int, stride_fraction: float, bin_count: int) -> BinLadder:
    """Bins ``N + N*stride*(i-1)`` for i = 1..bin_count.

    The step ``N*stride`` is rounded once so consecutive bins differ by a
    constant integer amount.
    """
    if not isinstance(tile_size_px, int) or tile_size_px <= 0:
        raise ScaleLawError(f"tile_size_px must be a positive int, got {tile_size_px!r}")
    if not (isinstance(stride_fraction, (int, float)) and 0 < stride_fraction <= 1):
        raise ScaleLawError(f"stride_fraction must be in (0, 1], got {stride_fraction!r}")
    if not isinstance(bin_count, int) or bin_count < 1:
        raise ScaleLawError(f"bin_count must be >= 1, got {bin_count!r}")
    step = int(round(tile_size_px * stride_fraction))
    if step < 1:
        raise ScaleLawError("tile_size_px * stride_fraction rounds to zero")
    bins = tuple(tile_size_px + step * i for i in range(bin_count))
    return BinLadder(tile_size_px, float(stride_fraction), bin_count, bins)


def select_bin(p_hat: float, ladder: BinLadder, native_long_side: int) -> int:
    """Smallest bin that still holds ``p_hat``, clamped to the top bin.

    Never returns more than ``native_long_side``: images smaller than the
    first bin are kept as is, and when the chosen bin would exceed the native
    size the native size is kept (it is the closest to ``p_hat`` available).
    """
    if not ladder.bins_px:
        raise ScaleLawError("empty ladder")
    _check_finite_positive("p_hat", p_hat)
    if native_long_side < ladder.bins_px[0]:
        return native_long_side
    chosen = ladder.top
    for b in ladder.bins_px:
        if b >= p_hat:
            chosen = b
            break
    return min(chosen, native_long_side)


@dataclass(frozen=True)
class ScalingPolicy:
    """Altitude -> bin table.

    ``breakpoints`` holds ``(max_altitude_m, bin_index)`` pairs; the first row
    whose altitude bound covers the capture wins. Altitudes above the last
    row fall back to the resolution law. ``fallback_bin`` is used for
    captures with unknown altitude (None means the top bin).
    """

    name: str
    breakpoints: tuple = ()
    fallback_bin: Optional[int] = None

    def __post_init__(self):
        alts = [a for a, _ in self.breakpoints]
        if alts != sorted(alts):
            raise ScaleLawError(f"policy {self.name!r}: breakpoints must be sorted by altitude")
        for alt, idx in self.breakpoints:
            _check_finite_positive("breakpoint altitude", alt)
            if not isinstance(idx, int) or idx < 1:
                raise ScaleLawError(f"policy {self.name!r}: bad bin index {idx!r}")
        if self.fallback_bin is not None and (not isinstance(self.fallback_bin, int) or self.fallback_bin < 1):
            raise ScaleLawError(f"policy {self.name!r}: bad fallback bin {self.fallback_bin!r}")

    def validate_for(self, ladder: BinLadder) -> None:
        for _, idx in self.breakpoints:
            ladder.bin(idx)
        if self.fallback_bin is not None:
            ladder.bin(self.fallback_bin)

    def bin_index_for(self, altitude_m: Optional[float], ladder: BinLadder) -> Optional[int]:
        """Bin index the table prescribes, or None if the resolution law decides."""
        if altitude_m is None:
            return self.fallback_bin if self.fallback_bin is not None else len(ladder.bins_px)
        for max_alt, idx in self.breakpoints:
            if altitude_m <= max_alt:
                return idx
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "breakpoints": [[a, i] for a, i in self.breakpoints],
            "fallback_bin": self.fallback_bin,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingPolicy":
        try:
            bps = tuple((float(a), int(i)) for a, i in d.get("breakpoints", []))
            return cls(name=str(d.get("name", "custom")), breakpoints=bps, fallback_bin=d.get("fallback_bin"))
        except (TypeError, ValueError) as e:
            if isinstance(e, ScaleLawError):
                raise
            raise ScaleLawError(f"malformed policy table: {e}") from e


# Approximate altitude tables for the two built-in policies. V1 is the
# conservative one and stays at the base bin up to 50 m; V2 starts stepping up
# around 30 m. Both send 60 m captures to the second bin, as the resolution law
# does for a 65 deg FOV.
SCALED_V1 = ScalingPolicy(
    "scaledV1",
    breakpoints=((50.0, 1), (70.0, 2), (100.0, 3), (130.0, 4), (160.0, 5)),
    fallback_bin=None,
)
SCALED_V2 = ScalingPolicy(
    "scaledV2",
    breakpoints=((30.0, 1), (60.0, 2), (90.0, 3), (120.0, 4), (150.0, 5)),
    fallback_bin=None,
)
# Pure resolution-law policy: no table, every known altitude goes through p_hat.
EQUATION = ScalingPolicy("equation")

BUILTIN_POLICIES = {p.name: p for p in (SCALED_V1, SCALED_V2, EQUATION)}


def load_policy(name_or_path: Union[str, Path]) -> ScalingPolicy:
    """Resolve a built-in policy name or read a JSON policy table."""
    key = str(name_or_path)
    if key in BUILTIN_POLICIES:
        return BUILTIN_POLICIES[key]
    path = Path(key)
    if not path.exists():
        raise ScaleLawError(
            f"unknown policy {key!r}: not one of {sorted(BUILTIN_POLICIES)} and no such file"
        )
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ScaleLawError(f"policy file {path}: {e}") from e
    return ScalingPolicy.from_dict(data)


def bin_for_capture(
    camera: CameraModel,
    spec: RecognitionSpec,
    policy: ScalingPolicy,
    ladder: BinLadder,
) -> int:
    """Target long side for one capture.

    Table rows take precedence over the resolution law; the no-upscale rule
    is applied last in every branch.
    """
    native = camera.native_long_side
    idx = policy.bin_index_for(camera.altitude_m, ladder)
    if idx is not None:
        target = ladder.bin(idx)
        if native < ladder.bins_px[0]:
            return native
        return min(target, native)
    p_hat = required_resolution(camera.altitude_m, camera.fov_deg, spec)
    return select_bin(p_hat, ladder, native)


def tiles_per_dim(length_px: int, tile_size_px: int, overlap: float) -> int:
    """Tiles needed along one axis, matching the tiler's plan formula."""
    if length_px <= tile_size_px:
        return 1
    step = tile_size_px - int(round(tile_size_px * overlap))
    return math.ceil((length_px - tile_size_px) / step) + 1


@dataclass
class PlanRow:
    altitude_m: float
    fov_deg: float
    p_hat: int
    bin_px: int
    tiles_per_dim: int


def resolution_table(
    altitudes: Sequence[float],
    fovs: Sequence[float],
    spec: RecognitionSpec,
    ladder: BinLadder,
    overlap: float = 0.2,
) -> list:
    """p_hat, its bin and the implied tiles-per-dimension for each (altitude, fov)."""
    rows = []
    for h in altitudes:
        for fov in fovs:
            p = required_resolution(h, fov, spec)
            # no native limit here: the table describes the law itself
            b = select_bin(p, ladder, native_long_side=max(p, ladder.top))
            rows.append(PlanRow(h, fov, p, b, tiles_per_dim(b, ladder.tile_size_px, overlap)))
    return rows
