"""Half-hourly consumption and solar exposure series: file I/O, synthesis, and PV conversion."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from zec.domain import SLOT_HOURS, SLOTS_PER_DAY, InvalidInput, Season

CONSUMPTION_HEADER = "kwh_per_half_hour"
EXPOSURE_HEADER = "w_per_m2_per_half_hour"

# Average daily demand per house dataset, kWh.
DAILY_MEAN_KWH = {
    Season.WINTER: {"house1": 11.01, "house2": 9.49, "house3": 10.03},
    Season.SUMMER: {"house1": 12.12, "house2": 11.68, "house3": 8.27},
}
# Daily sum of half-hourly irradiance samples, W/m2.
DAILY_EXPOSURE = {Season.WINTER: 11770.0, Season.SUMMER: 18850.0}
# Daylight window (hours) used to shape the clear-sky exposure bell.
DAYLIGHT_HOURS = {Season.WINTER: (7.5, 17.0), Season.SUMMER: (5.5, 21.0)}


class DataFormatError(ValueError):
    """A series file failed to parse or validate."""


@dataclass(frozen=True)
class _Series:
    readings: np.ndarray
    days: int

    def __post_init__(self):
        values = np.asarray(self.readings, dtype=float)
        if values.ndim != 1:
            raise InvalidInput("readings must be one-dimensional")
        if len(values) != SLOTS_PER_DAY * self.days:
            raise InvalidInput(
                f"expected {SLOTS_PER_DAY * self.days} readings for {self.days} day(s), got {len(values)}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInput("readings must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "readings", values)

    slots_per_day = SLOTS_PER_DAY

    def __len__(self):
        return len(self.readings)

    def daily_totals(self) -> np.ndarray:
        return self.readings.reshape(self.days, SLOTS_PER_DAY).sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.readings.sum())


class ConsumptionProfile(_Series):
    """Household demand in kWh per half-hour slot."""


class SolarExposureSeries(_Series):
    """Irradiance samples in W/m2, one per half-hour slot."""


def _read_series(path, header: str, days: int | None) -> tuple[np.ndarray, int]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != header:
        got = lines[0].strip() if lines else "<empty file>"
        raise DataFormatError(f"{path}:1: expected header {header!r}, got {got!r}")
    values = []
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text:
            continue
        try:
            value = float(text)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None
        if not math.isfinite(value):
            raise DataFormatError(f"{path}:{lineno}: non-finite value {text!r}")
        if value < 0:
            raise DataFormatError(f"{path}:{lineno}: negative value {value}")
        values.append(value)
    n = len(values)
    if days is None:
        if n == 0 or n % SLOTS_PER_DAY:
            raise DataFormatError(f"{path}: {n} readings is not a whole number of days")
        days = n // SLOTS_PER_DAY
    elif n != days * SLOTS_PER_DAY:
        raise DataFormatError(f"{path}: expected {days * SLOTS_PER_DAY} readings for {days} day(s), got {n}")
    return np.array(values), days


def _write_series(series: _Series, path, header: str) -> None:
    # repr() round-trips floats exactly
    body = "\n".join(repr(float(v)) for v in series.readings)
    Path(path).write_text(f"{header}\n{body}\n")


def load_consumption(path, days: int | None = None) -> ConsumptionProfile:
    readings, days = _read_series(path, CONSUMPTION_HEADER, days)
    return ConsumptionProfile(readings, days)


def load_exposure(path, days: int | None = None) -> SolarExposureSeries:
    readings, days = _read_series(path, EXPOSURE_HEADER, days)
    return SolarExposureSeries(readings, days)


def write_consumption(profile: ConsumptionProfile, path) -> None:
    _write_series(profile, path, CONSUMPTION_HEADER)


def write_exposure(series: SolarExposureSeries, path) -> None:
    _write_series(series, path, EXPOSURE_HEADER)


def _demand_shape() -> np.ndarray:
    hours = (np.arange(SLOTS_PER_DAY) + 0.5) * SLOT_HOURS

    def bump(centre, width, height):
        return height * np.exp(-0.5 * ((hours - centre) / width) ** 2)

    return 0.35 + bump(7.5, 1.0, 1.3) + bump(13.0, 2.5, 0.5) + bump(19.0, 1.6, 2.0) + bump(22.0, 1.0, 0.4)


def synthesize_consumption(seed: int, daily_mean_kwh: float, days: int = 3) -> ConsumptionProfile:
    """Seeded household demand with morning and evening peaks.

    Every day is rescaled to sum to ``daily_mean_kwh`` exactly, so the
    per-day totals do not drift with the noise.
    """
    if not daily_mean_kwh > 0:
        raise InvalidInput(f"daily_mean_kwh must be > 0, got {daily_mean_kwh}")
    if days < 1:
        raise InvalidInput(f"days must be >= 1, got {days}")
    rng = np.random.default_rng(seed)
    shape = _demand_shape()
    out = []
    for _ in range(days):
        noisy = shape * rng.lognormal(mean=0.0, sigma=0.25, size=SLOTS_PER_DAY)
        out.append(noisy * (daily_mean_kwh / noisy.sum()))
    return ConsumptionProfile(np.concatenate(out), days)


def clear_sky_exposure(season: Season | str, days: int = 3) -> SolarExposureSeries:
    """Half-sine daylight bell whose half-hourly samples sum to the season's daily figure."""
    season = Season(season)
    sunrise, sunset = DAYLIGHT_HOURS[season]
    hours = (np.arange(SLOTS_PER_DAY) + 0.5) * SLOT_HOURS
    phase = (hours - sunrise) / (sunset - sunrise)
    day = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    day *= DAILY_EXPOSURE[season] / day.sum()
    return SolarExposureSeries(np.tile(day, days), days)


def generation_for(cells, exposure, yield_factor: float = 0.1):
    """kWh produced in one half-hour slot by ``cells`` panels under ``exposure`` W/m2.

    ``yield_factor`` is the effective m2 of collecting area per cell. Works
    elementwise on arrays.
    """
    if np.any(np.asarray(cells) < 0) or np.any(np.asarray(exposure) < 0):
        raise InvalidInput("cells and exposure must be non-negative")
    energy = np.multiply(cells * yield_factor, exposure) * SLOT_HOURS / 1000.0
    return float(energy) if np.ndim(energy) == 0 else energy


def profile_seed(reference: str, season: Season | str) -> int:
    """Fixed seed for a named dataset, independent of any run seed."""
    return zlib.crc32(f"{reference}:{Season(season).value}".encode())


def fixture_path(reference: str, season: Season | str, data_dir=None) -> Path:
    name = f"{reference}_{Season(season).value}.csv"
    if data_dir is not None:
        return Path(data_dir) / name
    return Path(str(resources.files("zec") / "fixtures" / name))


def consumption_for(reference: str, season: Season | str, days: int = 3, data_dir=None) -> ConsumptionProfile:
    """Demand series for a dataset reference such as ``"house1"``.

    Looks for ``<reference>_<season>.csv`` under ``data_dir`` (or the bundled
    fixtures) and falls back to synthesis from the published daily mean.
    Files longer than ``days`` are truncated; shorter ones are tiled.
    """
    season = Season(season)
    path = fixture_path(reference, season, data_dir)
    if path.exists():
        profile = load_consumption(path)
        if profile.days != days:
            reps = -(-days // profile.days)
            readings = np.tile(profile.readings, reps)[: days * SLOTS_PER_DAY]
            profile = ConsumptionProfile(readings, days)
        return profile
    try:
        mean = DAILY_MEAN_KWH[season][reference]
    except KeyError:
        raise InvalidInput(f"no data file and no published mean for profile {reference!r}") from None
    return synthesize_consumption(profile_seed(reference, season), mean, days)


def exposure_for(season: Season | str, days: int = 3, data_dir=None) -> SolarExposureSeries:
    season = Season(season)
    path = fixture_path("exposure", season, data_dir)
    if path.exists():
        series = load_exposure(path)
        if series.days != days:
            reps = -(-days // series.days)
            series = SolarExposureSeries(np.tile(series.readings, reps)[: days * SLOTS_PER_DAY], days)
        return series
    return clear_sky_exposure(season, days)
