"""Dose-to-LEDD conversion, change targets and supervised sample construction.

LEDD (levodopa-equivalent daily dose) puts antiparkinsonian drugs on one
scale: contribution = dose_mg x factor, with oral levodopa anchored at 1.0.
Targets are percentage dose changes, passed through a sign-preserving log
and then winsorized.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .records import (
    HORIZON_DAYS,
    SEX_CODES,
    ZERO_TOL,
    DataError,
    SupervisedSample,
    VisitRecord,
)

FEATURE_NAMES = (
    "age_years",
    "sex_code",
    "mean_ledd_per_visit",
    "length_of_stay_days",
    "days_since_last_visit",
    "days_to_diagnosis",
)

# Reserved feature values when demographics are not supplied.
AGE_UNKNOWN = -1.0
SEX_UNKNOWN = float(SEX_CODES["unknown"])


class ConversionTable:
    """(drug_name, route) -> LEDD factor lookup, backed by an editable CSV."""

    def __init__(self, entries: Mapping[tuple[str, str], float]):
        entries = {(d.lower(), r.lower()): float(f) for (d, r), f in entries.items()}
        for key, factor in entries.items():
            if not (factor > 0) or not math.isfinite(factor):
                raise DataError(f"factor for {key} must be a positive real, got {factor!r}")
        if entries.get(("levodopa", "oral"), 1.0) != 1.0:
            raise DataError("levodopa oral factor must be exactly 1.0")
        self.entries = dict(entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return (key[0].lower(), key[1].lower()) in self.entries

    def factor(self, drug: str, route: str) -> float:
        key = (drug.lower(), route.lower())
        if key not in self.entries:
            raise DataError(f"no conversion factor for {key!r}")
        return self.entries[key]

    @classmethod
    def from_csv(cls, path: str | Path) -> "ConversionTable":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        entries: dict[tuple[str, str], float] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = None
            for row in reader:
                if not row or row[0].startswith("#"):
                    continue
                if header is None:
                    header = row
                    if header != ["drug_name", "route", "factor"]:
                        raise DataError(f"{path}: malformed header {header!r}")
                    continue
                if len(row) != 3:
                    raise DataError(f"{path}: bad row {row!r}")
                try:
                    entries[(row[0], row[1])] = float(row[2])
                except ValueError as exc:
                    raise DataError(f"{path}: bad factor in row {row!r}") from exc
        return cls(entries)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["drug_name", "route", "factor"])
            for (drug, route), factor in sorted(self.entries.items()):
                w.writerow([drug, route, repr(factor)])

    @classmethod
    def default(cls) -> "ConversionTable":
        """Bundled table: anchor equivalences plus levodopa-class defaults."""
        with resources.as_file(resources.files("zicp.data") / "factors.csv") as p:
            return cls.from_csv(p)


@dataclass(frozen=True)
class LeddSeries:
    patient_id: str
    points: tuple[tuple[date, float], ...]  # chronological, dates strictly increasing


def convert_to_ledd(drug: str, dose_mg: float, route: str, table: ConversionTable) -> float:
    if dose_mg < 0:
        raise DataError(f"dose must be non-negative, got {dose_mg!r}")
    return dose_mg * table.factor(drug, route)


def ledd_series(visits: Sequence[VisitRecord], table: ConversionTable) -> list[LeddSeries]:
    """Sum converted doses per patient-day; one chronological series per patient."""
    per_patient: dict[str, dict[date, float]] = {}
    for v in visits:
        day_totals = per_patient.setdefault(v.patient_id, {})
        day_totals[v.visit_date] = day_totals.get(v.visit_date, 0.0) + convert_to_ledd(
            v.drug_name, v.dose_mg, v.route, table
        )
    return [
        LeddSeries(pid, tuple(sorted(per_patient[pid].items())))
        for pid in sorted(per_patient)
    ]


def pct_change(series: LeddSeries) -> tuple[list[tuple[date, float]], int]:
    """Consecutive-visit relative changes; zero-base pairs are skipped.

    Returns (changes, n_skipped) where each change is (visit_date of the
    later visit, (ledd_t - ledd_prev) / ledd_prev).
    """
    changes: list[tuple[date, float]] = []
    skipped = 0
    for (_, prev), (day, cur) in zip(series.points, series.points[1:]):
        if prev == 0:
            skipped += 1
            continue
        changes.append((day, (cur - prev) / prev))
    return changes, skipped


def signed_log(x: float) -> float:
    """sign(x) * ln(1 + |x|); odd, strictly increasing, fixes 0."""
    return math.copysign(math.log1p(abs(x)), x) if x != 0 else 0.0


def fit_winsor_bounds(
    xs: Sequence[float], lo_pct: float = 0.05, hi_pct: float = 0.95
) -> tuple[float, float]:
    """Percentile bounds via linear interpolation on order statistics."""
    arr = np.asarray(xs, dtype=np.float64)
    if arr.size == 0:
        raise DataError("winsorize: empty input")
    if not (0 <= lo_pct < hi_pct <= 1):
        raise DataError(f"winsorize: bad percentiles ({lo_pct}, {hi_pct})")
    lo = float(np.quantile(arr, lo_pct, method="linear"))
    hi = float(np.quantile(arr, hi_pct, method="linear"))
    return lo, hi


def apply_winsor(xs: Sequence[float], bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    return np.clip(np.asarray(xs, dtype=np.float64), lo, hi)


def winsorize(xs: Sequence[float], lo_pct: float = 0.05, hi_pct: float = 0.95) -> np.ndarray:
    """Clamp xs to its own (lo_pct, hi_pct) interpolated percentiles."""
    return apply_winsor(xs, fit_winsor_bounds(xs, lo_pct, hi_pct))


@dataclass(frozen=True)
class Demographics:
    age_years: float
    sex_code: int


@dataclass(frozen=True)
class FeatureConfig:
    """Everything build_supervised needs beyond the dose series.

    winsor_bounds: precomputed (lo, hi) on the signed-log scale; None fits
    bounds over the emitted batch (use explicit bounds fit on a training
    partition to avoid leakage in modeling runs).
    """

    slack_days: int = 90
    demographics: Mapping[str, Demographics] = field(default_factory=dict)
    visit_los: Mapping[tuple[str, date], float] = field(default_factory=dict)
    winsor_bounds: tuple[float, float] | None = None
    winsor_pcts: tuple[float, float] = (0.05, 0.95)

    @classmethod
    def from_visits(
        cls,
        visits: Sequence[VisitRecord],
        demographics: Mapping[str, Demographics] | None = None,
        slack_days: int = 90,
        winsor_bounds: tuple[float, float] | None = None,
    ) -> "FeatureConfig":
        los: dict[tuple[str, date], float] = {}
        for v in visits:
            key = (v.patient_id, v.visit_date)
            los[key] = max(los.get(key, 0.0), v.length_of_stay_days)
        return cls(
            slack_days=slack_days,
            demographics=dict(demographics or {}),
            visit_los=los,
            winsor_bounds=winsor_bounds,
        )


def build_supervised(
    series: Sequence[LeddSeries], horizon: str, config: FeatureConfig
) -> list[SupervisedSample]:
    """Emit one sample per (index visit, matched follow-up) pair.

    The follow-up is the successor visit whose gap is nearest the horizon
    within +/- slack days; the target is winsorize(signed_log(pct change)).
    Index visits with zero LEDD yield no sample (relative change undefined).
    """
    if horizon not in HORIZON_DAYS:
        raise DataError(f"unknown horizon {horizon!r}, expected one of {sorted(HORIZON_DAYS)}")
    h_days = HORIZON_DAYS[horizon]
    slack = config.slack_days

    raw: list[tuple[str, date, tuple[float, ...], float]] = []
    for s in series:
        points = s.points
        demo = config.demographics.get(s.patient_id)
        first_day = points[0][0] if points else None
        ledd_so_far = 0.0
        for i, (day, ledd) in enumerate(points):
            ledd_so_far += ledd
            best = None
            for day2, ledd2 in points[i + 1 :]:
                gap = (day2 - day).days
                if gap > h_days + slack:
                    break
                if gap < h_days - slack:
                    continue
                dist = abs(gap - h_days)
                if best is None or dist < best[0]:
                    best = (dist, day2, ledd2)
            if best is None or ledd == 0:
                continue
            _, _, ledd2 = best
            change = (ledd2 - ledd) / ledd
            features = (
                demo.age_years if demo else AGE_UNKNOWN,
                float(demo.sex_code) if demo else SEX_UNKNOWN,
                ledd_so_far / (i + 1),
                config.visit_los.get((s.patient_id, day), 0.0),
                float((day - points[i - 1][0]).days) if i > 0 else 0.0,
                float((day - first_day).days),
            )
            raw.append((s.patient_id, day, features, signed_log(change)))

    if not raw:
        return []
    targets = [t for _, _, _, t in raw]
    bounds = config.winsor_bounds
    if bounds is None:
        bounds = fit_winsor_bounds(targets, *config.winsor_pcts)
    clamped = apply_winsor(targets, bounds)
    return [
        SupervisedSample(pid, day, horizon, feats, float(t), bool(abs(t) < ZERO_TOL))
        for (pid, day, feats, _), t in zip(raw, clamped)
    ]
