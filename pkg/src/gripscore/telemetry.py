"""Lap telemetry ingestion, validation and normalization.

One CSV file per lap: a meta header line
``# lap_id=...,driver_id=...,track_id=...,sample_rate_hz=...``, a channel
header row, then one row per sample. Angle channels are stored in degrees in
the file and converted to radians in memory (`rad = deg * pi/180` on load,
`deg = rad / (pi/180)` on save, which round-trips bit-identically once a file
has been written through save_lap). ``psi_dot`` is rad/s in both places.

Channels with per-wheel variants carry the ``_fl, _fr, _rl, _rr`` suffixes.
Missing ``fx_n``/``fy_n`` columns are recomputed from the tire model when
tire parameters are supplied to ``load_lap``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels

D2R = math.pi / 180.0

WHEELS = ("fl", "fr", "rl", "rr")

# scalar channels: file name == internal name; True marks degree channels
_SCALAR_CHANNELS = {
    "t": False,
    "v": False,
    "psi_dot": False,
    "beta": True,
    "delta": True,
    "ax_cog": False,
    "ay_cog": False,
    "r_brake_bar": False,
    "r_throttle_pct": False,
    "n_engine_rpm": False,
    "i_tot": False,
    "dx_n": False,
    "dy_n": False,
    "br_drv": False,
}

# per-wheel channels: file stem -> (internal stem, is_degrees)
_WHEEL_CHANNELS = {
    "fz_n": ("fz_n", False),
    "alpha_deg": ("alpha", True),
    "kappa": ("kappa", False),
    "mu_toe_deg": ("mu_toe", True),
    "gamma_deg": ("gamma", True),
    "r_dyn_m": ("r_dyn_m", False),
    "b_half_m": ("b_half_m", False),
    "rocker_deg": ("rocker", True),
    "fx_n": ("fx_n", False),
    "fy_n": ("fy_n", False),
}
_FORCE_STEMS = ("fx_n", "fy_n")


class TelemetryError(ValueError):
    """Malformed or inconsistent telemetry file."""


def file_channel_names() -> list[str]:
    names = list(_SCALAR_CHANNELS)
    for stem in _WHEEL_CHANNELS:
        names.extend(f"{stem}_{w}" for w in WHEELS)
    return names


def internal_channel_names(include_derived: bool = True) -> list[str]:
    names = list(_SCALAR_CHANNELS)
    for stem, (internal, _) in _WHEEL_CHANNELS.items():
        names.extend(f"{internal}_{w}" for w in WHEELS)
    if include_derived:
        names.extend(f"alpha_prev_{w}" for w in WHEELS)
    return names


@dataclass(frozen=True)
class LapTelemetry:
    """Immutable channel matrix for one lap; angles in radians."""

    lap_id: str
    driver_id: str
    track_id: str
    sample_rate: float
    channels: dict

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise TelemetryError(f"sample_rate must be > 0, got {self.sample_rate}")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise TelemetryError(f"channel lengths differ: {sorted(lengths)}")
        if not lengths or 0 in lengths:
            raise TelemetryError("lap has no samples")
        for arr in self.channels.values():
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(next(iter(self.channels.values())))

    def channel(self, name: str) -> np.ndarray:
        if name not in self.channels:
            raise TelemetryError(f"missing channel {name!r}")
        return self.channels[name]

    def wheel(self, stem: str, w: int) -> np.ndarray:
        return self.channel(f"{stem}_{WHEELS[w]}")

    def with_channels(self, updates: dict) -> "LapTelemetry":
        merged = dict(self.channels)
        merged.update({k: np.array(v, dtype=np.float64) for k, v in updates.items()})
        return LapTelemetry(
            lap_id=self.lap_id, driver_id=self.driver_id, track_id=self.track_id,
            sample_rate=self.sample_rate, channels=merged,
        )


def _parse_meta(line: str, path) -> dict:
    if not line.startswith("#"):
        raise TelemetryError(f"{path}: missing meta header line")
    meta = {}
    for part in line.lstrip("#").strip().split(","):
        if "=" not in part:
            raise TelemetryError(f"{path}: bad meta entry {part!r}")
        k, v = part.split("=", 1)
        meta[k.strip()] = v.strip()
    for key in ("lap_id", "driver_id", "track_id", "sample_rate_hz"):
        if key not in meta:
            raise TelemetryError(f"{path}: meta header missing {key}")
    return meta


def load_lap(path, tires=None) -> LapTelemetry:
    """Load and validate one lap file.

    ``tires`` (a TireParams) enables recomputing missing fx/fy columns.
    """
    with open(path) as fh:
        meta_line = fh.readline()
        meta = _parse_meta(meta_line, path)
        header = fh.readline().strip()
        if not header:
            raise TelemetryError(f"{path}: missing channel header row")
        names = [c.strip() for c in header.split(",")]
        try:
            raw = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError as exc:
            raise TelemetryError(f"{path}: non-numeric cell or ragged row ({exc})") from exc
    if raw.size == 0:
        raise TelemetryError(f"{path}: no samples")
    if raw.shape[1] != len(names):
        raise TelemetryError(
            f"{path}: header has {len(names)} columns, rows have {raw.shape[1]}"
        )
    try:
        rate = float(meta["sample_rate_hz"])
    except ValueError as exc:
        raise TelemetryError(f"{path}: bad sample_rate_hz {meta['sample_rate_hz']!r}") from exc

    cols = {name: raw[:, i] for i, name in enumerate(names)}

    missing = [c for c in _SCALAR_CHANNELS if c not in cols]
    for stem in _WHEEL_CHANNELS:
        if stem in _FORCE_STEMS:
            continue
        missing.extend(
            f"{stem}_{w}" for w in WHEELS if f"{stem}_{w}" not in cols
        )
    force_missing = [
        f"{stem}_{w}" for stem in _FORCE_STEMS for w in WHEELS if f"{stem}_{w}" not in cols
    ]
    if force_missing and tires is None:
        missing.extend(force_missing)
    if missing:
        raise TelemetryError(f"{path}: missing required channels: {', '.join(sorted(missing))}")

    channels: dict = {}
    for name, is_deg in _SCALAR_CHANNELS.items():
        channels[name] = cols[name] * D2R if is_deg else cols[name]
    for stem, (internal, is_deg) in _WHEEL_CHANNELS.items():
        for w in WHEELS:
            fname = f"{stem}_{w}"
            if fname not in cols:
                continue
            channels[f"{internal}_{w}"] = cols[fname] * D2R if is_deg else cols[fname]

    if force_missing:
        tp = tires.packed()
        for wi, w in enumerate(WHEELS):
            off = 0 if wi < 2 else kernels.N_TP_AXLE
            fz = channels[f"fz_n_{w}"]
            al = channels[f"alpha_{w}"]
            ka = channels[f"kappa_{w}"]
            ga = channels[f"gamma_{w}"]
            fx = np.empty(len(fz))
            fy = np.empty(len(fz))
            for i in range(len(fz)):
                fx[i], fy[i], _ = kernels.tire_forces(fz[i], al[i], ka[i], ga[i], tp, off)
            channels[f"fx_n_{w}"] = fx
            channels[f"fy_n_{w}"] = fy

    # slip angles of the previous sample, first sample held
    for w in WHEELS:
        a = channels[f"alpha_{w}"]
        channels[f"alpha_prev_{w}"] = np.concatenate([[a[0]], a[:-1]])

    return LapTelemetry(
        lap_id=meta["lap_id"], driver_id=meta["driver_id"], track_id=meta["track_id"],
        sample_rate=rate, channels=channels,
    )


def save_lap(lap: LapTelemetry, path) -> None:
    """Write a lap back to the CSV format (degrees for angle channels)."""
    names = []
    series = []
    for name, is_deg in _SCALAR_CHANNELS.items():
        names.append(name)
        arr = lap.channel(name)
        series.append(arr / D2R if is_deg else arr)
    for stem, (internal, is_deg) in _WHEEL_CHANNELS.items():
        for w in WHEELS:
            names.append(f"{stem}_{w}")
            arr = lap.channel(f"{internal}_{w}")
            series.append(arr / D2R if is_deg else arr)
    with open(path, "w") as fh:
        fh.write(
            f"# lap_id={lap.lap_id},driver_id={lap.driver_id},"
            f"track_id={lap.track_id},sample_rate_hz={lap.sample_rate!r}\n"
        )
        fh.write(",".join(names) + "\n")
        for i in range(len(lap)):
            fh.write(",".join(repr(float(col[i])) for col in series) + "\n")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and sample standard deviation (n-1 denominator).

    Fit on training laps only; applied unchanged elsewhere.
    """

    mean: dict
    std: dict

    def channels(self) -> list[str]:
        return list(self.mean)


def fit_normalization(laps: Sequence[LapTelemetry], channels: Iterable[str]) -> NormalizationStats:
    if not laps:
        raise ValueError("need at least one lap")
    mean = {}
    std = {}
    for name in channels:
        data = np.concatenate([lap.channel(name) for lap in laps])
        mean[name] = float(data.mean())
        std[name] = float(data.std(ddof=1)) if data.size > 1 else 0.0
    return NormalizationStats(mean=mean, std=std)


def apply_normalization(lap: LapTelemetry, stats: NormalizationStats) -> LapTelemetry:
    """x = (w - mean)/std per channel; zero-variance channels become zeros."""
    updates = {}
    for name in stats.channels():
        arr = lap.channel(name)
        s = stats.std[name]
        if s > 0.0:
            updates[name] = (arr - stats.mean[name]) / s
        else:
            updates[name] = np.zeros_like(arr)
    return lap.with_channels(updates)
