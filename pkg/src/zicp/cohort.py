"""Synthetic zero-inflated cohorts with known ground truth.

Each patient is an independent, counter-keyed random stream, so parallel
and serial generation produce identical output. Outcomes follow a hurdle
model: with probability pi(x) the dose change is exactly zero, otherwise
the raw relative change is Normal(mu(x), sd * horizon multiplier) and then
goes through the same signed-log / winsorize pipeline as real data.

Feature distributions (standardization constants are fixed, documented
values, not estimated from the batch):
  age_years              Normal(77.98, 10.59) truncated to [40, 100]
  sex_code               Bernoulli(0.355) -> {0, 1}
  mean_ledd_per_visit    LogNormal(log 600, 0.5)
  length_of_stay_days    LogNormal(log 3, 0.7)
  days_since_last_visit  Uniform(30, 400)
  days_to_diagnosis      Uniform(0, 3650)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .conformal import PredictionInterval
from .ledd import FEATURE_NAMES
from .records import HORIZONS, ZERO_TOL, SupervisedSample
from .seeding import child_seed

_LN600 = math.log(600.0)
_LN3 = math.log(3.0)

# (mean, sd) per feature, in FEATURE_NAMES order, from the declared
# distributions (age uses the untruncated parameters).
FEATURE_STANDARDIZATION = (
    (77.98, 10.59),
    (0.355, math.sqrt(0.355 * 0.645)),
    (600.0 * math.exp(0.125), 600.0 * math.exp(0.125) * math.sqrt(math.exp(0.25) - 1.0)),
    (3.0 * math.exp(0.245), 3.0 * math.exp(0.245) * math.sqrt(math.exp(0.49) - 1.0)),
    ((30.0 + 400.0) / 2.0, (400.0 - 30.0) / math.sqrt(12.0)),
    (3650.0 / 2.0, 3650.0 / math.sqrt(12.0)),
)

DEFAULT_ZERO_SLOPES = (0.9, -0.4, 0.7, -0.5, 1.1, -0.6)
DEFAULT_EFFECT = (0.30, -0.08, -0.12, 0.05, 0.15, -0.10, 0.06)
DEFAULT_NOISE_MULTIPLIERS = {"6M": 1.0, "1Y": 1.3, "2Y": 1.7, "4Y": 2.2}


@dataclass(frozen=True)
class CohortSpec:
    n_patients: int
    visits_per_patient: tuple[int, int] = (2, 2)
    horizon: str = "6M"
    target_zero_rate: float | None = 0.75
    zero_prob_fn: tuple[float, ...] = (0.0,) + DEFAULT_ZERO_SLOPES  # intercept + slopes
    effect_fn: tuple[float, ...] = DEFAULT_EFFECT  # intercept + slopes, raw change scale
    noise_sd_base: float = 0.25
    horizon_noise_multiplier: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_NOISE_MULTIPLIERS)
    )
    winsor_pcts: tuple[float, float] | None = (0.05, 0.95)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        lo, hi = self.visits_per_patient
        if not 2 <= lo <= hi:
            raise ValueError("visits_per_patient must satisfy 2 <= lo <= hi")
        if self.horizon not in HORIZONS:
            raise ValueError(f"unknown horizon {self.horizon!r}")
        if self.target_zero_rate is not None and not 0 <= self.target_zero_rate <= 1:
            raise ValueError("target_zero_rate must be in [0,1] or None")
        n_feat = len(FEATURE_NAMES)
        if len(self.zero_prob_fn) != n_feat + 1 or len(self.effect_fn) != n_feat + 1:
            raise ValueError(f"coefficient vectors must have length {n_feat + 1} (intercept first)")
        if self.noise_sd_base < 0:
            raise ValueError("noise_sd_base must be >= 0")
        mults = [self.horizon_noise_multiplier[h] for h in HORIZONS]
        if any(m < 0 for m in mults) or any(b < a for a, b in zip(mults, mults[1:])):
            raise ValueError("horizon noise multipliers must be >= 0 and non-decreasing 6M -> 4Y")
        if self.winsor_pcts is not None:
            lo_p, hi_p = self.winsor_pcts
            if not 0 <= lo_p < hi_p <= 1:
                raise ValueError("winsor_pcts must satisfy 0 <= lo < hi <= 1")


@dataclass(frozen=True)
class GroundTruth:
    """Per-spec generating process, queryable at arbitrary feature vectors."""

    zero_coefs: tuple[float, ...]  # solved intercept + slopes (standardized features)
    effect_coefs: tuple[float, ...]
    noise_sd: float  # base sd * horizon multiplier
    winsor_bounds: tuple[float, float] | None  # on the transformed scale
    horizon: str

    def _standardized(self, x) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
        means = np.array([m for m, _ in FEATURE_STANDARDIZATION])
        sds = np.array([s for _, s in FEATURE_STANDARDIZATION])
        return (arr - means) / sds

    def zero_probability(self, x) -> np.ndarray:
        z = self._standardized(x)
        logit = self.zero_coefs[0] + z @ np.asarray(self.zero_coefs[1:])
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(logit >= 0, 1.0 / (1.0 + np.exp(-logit)), np.exp(logit) / (1.0 + np.exp(logit)))

    def conditional_mean_raw(self, x) -> np.ndarray:
        z = self._standardized(x)
        return self.effect_coefs[0] + z @ np.asarray(self.effect_coefs[1:])

    def raw_quantile(self, x, p: float) -> np.ndarray:
        """p-quantile of the raw (pre-transform) nonzero change at x."""
        return self.conditional_mean_raw(x) + self.noise_sd * NormalDist().inv_cdf(p)

    def transform(self, raw) -> np.ndarray:
        """Continuous-branch raw value -> target scale (signed log, then clamp)."""
        t = _signed_log_arr(np.asarray(raw, dtype=np.float64))
        if self.winsor_bounds is not None:
            t = np.clip(t, *self.winsor_bounds)
        return t


def _signed_log_arr(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def _solve_intercept(z: np.ndarray, slopes: np.ndarray, rate: float) -> float:
    """Intercept making the batch-mean zero probability equal `rate` (monotone bisection)."""
    if rate <= 0.0:
        return -math.inf
    if rate >= 1.0:
        return math.inf
    signal = z @ slopes

    def mean_pi(b0: float) -> float:
        logit = b0 + signal
        with np.errstate(over="ignore", invalid="ignore"):
            pi = np.where(logit >= 0, 1.0 / (1.0 + np.exp(-logit)), np.exp(logit) / (1.0 + np.exp(logit)))
        return float(np.mean(pi))

    lo, hi = -40.0, 40.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mean_pi(mid) < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _truncated_normal(gen: np.random.Generator, mean: float, sd: float, lo: float, hi: float) -> float:
    while True:
        v = gen.normal(mean, sd)
        if lo <= v <= hi:
            return v


def generate(spec: CohortSpec) -> tuple[list[SupervisedSample], GroundTruth]:
    """Draw the cohort; returns samples plus the generating truth object."""
    lo_v, hi_v = spec.visits_per_patient
    rows: list[tuple[str, int, np.ndarray, float, float]] = []  # pid, visit#, x, u_zero, eps
    for i in range(spec.n_patients):
        gen = np.random.Generator(np.random.Philox(child_seed(spec.seed, "cohort-patient", i)))
        v = int(gen.integers(lo_v, hi_v + 1))
        age = _truncated_normal(gen, 77.98, 10.59, 40.0, 100.0)
        sex = float(gen.random() < 0.355)
        pid = f"synth-{i:05d}"
        for j in range(v - 1):
            x = np.array(
                [
                    age,
                    sex,
                    math.exp(gen.normal(_LN600, 0.5)),
                    math.exp(gen.normal(_LN3, 0.7)),
                    gen.uniform(30.0, 400.0),
                    gen.uniform(0.0, 3650.0),
                ]
            )
            rows.append((pid, j, x, gen.random(), gen.normal()))

    X = np.array([r[2] for r in rows])
    means = np.array([m for m, _ in FEATURE_STANDARDIZATION])
    sds = np.array([s for _, s in FEATURE_STANDARDIZATION])
    z = (X - means) / sds

    slopes = np.asarray(spec.zero_prob_fn[1:], dtype=np.float64)
    if spec.target_zero_rate is not None:
        intercept = _solve_intercept(z, slopes, spec.target_zero_rate)
    else:
        intercept = float(spec.zero_prob_fn[0])
    logit = intercept + z @ slopes
    with np.errstate(over="ignore", invalid="ignore"):
        pi = np.where(logit >= 0, 1.0 / (1.0 + np.exp(-logit)), np.exp(logit) / (1.0 + np.exp(logit)))

    mult = spec.horizon_noise_multiplier[spec.horizon]
    noise_sd = spec.noise_sd_base * mult
    mu = np.asarray(spec.effect_fn[0]) + z @ np.asarray(spec.effect_fn[1:])
    u = np.array([r[3] for r in rows])
    eps = np.array([r[4] for r in rows])
    raw = np.where(u < pi, 0.0, mu + noise_sd * eps)

    transformed = _signed_log_arr(raw)
    # bounds are fit and applied on the continuous branch only: the zero
    # point mass is structural, so it must survive winsorization untouched
    nonzero = u >= pi
    if spec.winsor_pcts is not None and nonzero.any():
        branch = transformed[nonzero]
        bounds = (
            float(np.quantile(branch, spec.winsor_pcts[0], method="linear")),
            float(np.quantile(branch, spec.winsor_pcts[1], method="linear")),
        )
        transformed = np.where(nonzero, np.clip(transformed, *bounds), transformed)
    else:
        bounds = None

    base_day = date(2020, 1, 1)
    samples = [
        SupervisedSample(
            patient_id=pid,
            index_date=base_day + timedelta(days=182 * visit_no),
            horizon=spec.horizon,
            features=tuple(float(v) for v in x),
            target=float(t),
            is_zero=bool(abs(t) < ZERO_TOL),
        )
        for (pid, visit_no, x, _, _), t in zip(rows, transformed)
    ]
    truth = GroundTruth(
        zero_coefs=(intercept, *slopes.tolist()),
        effect_coefs=tuple(spec.effect_fn),
        noise_sd=noise_sd,
        winsor_bounds=bounds,
        horizon=spec.horizon,
    )
    return samples, truth


def oracle_interval(truth: GroundTruth, x, alpha: float) -> PredictionInterval:
    """True conditional (alpha/2, 1-alpha/2) interval of the nonzero branch at x."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0,1), got {alpha!r}")
    lo = truth.transform(truth.raw_quantile(x, alpha / 2.0))
    hi = truth.transform(truth.raw_quantile(x, 1.0 - alpha / 2.0))
    return PredictionInterval(float(np.atleast_1d(lo)[0]), float(np.atleast_1d(hi)[0]))


def spec_to_dict(spec: CohortSpec) -> dict:
    return {
        "n_patients": spec.n_patients,
        "visits_per_patient": list(spec.visits_per_patient),
        "horizon": spec.horizon,
        "target_zero_rate": spec.target_zero_rate,
        "zero_prob_fn": list(spec.zero_prob_fn),
        "effect_fn": list(spec.effect_fn),
        "noise_sd_base": spec.noise_sd_base,
        "horizon_noise_multiplier": dict(spec.horizon_noise_multiplier),
        "winsor_pcts": None if spec.winsor_pcts is None else list(spec.winsor_pcts),
        "seed": spec.seed,
    }


def spec_from_dict(doc: Mapping) -> CohortSpec:
    winsor = doc.get("winsor_pcts", (0.05, 0.95))
    return CohortSpec(
        n_patients=int(doc["n_patients"]),
        visits_per_patient=tuple(doc.get("visits_per_patient", (2, 2))),
        horizon=doc.get("horizon", "6M"),
        target_zero_rate=doc.get("target_zero_rate", 0.75),
        zero_prob_fn=tuple(doc.get("zero_prob_fn", (0.0,) + DEFAULT_ZERO_SLOPES)),
        effect_fn=tuple(doc.get("effect_fn", DEFAULT_EFFECT)),
        noise_sd_base=float(doc.get("noise_sd_base", 0.25)),
        horizon_noise_multiplier=dict(doc.get("horizon_noise_multiplier", DEFAULT_NOISE_MULTIPLIERS)),
        winsor_pcts=None if winsor is None else tuple(winsor),
        seed=int(doc.get("seed", 0)),
    )


def load_spec(path: str | Path) -> CohortSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


def save_spec(spec: CohortSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
