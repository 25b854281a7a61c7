"""Core record types, CSV I/O and patient-aware dataset splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .seeding import rng as _rng

# A target this close to zero counts as "no change". Shared by the data
# pipeline, the generator and interval coverage checks.
ZERO_TOL = 1e-12

HORIZONS = ("6M", "1Y", "2Y", "4Y")
HORIZON_DAYS = {"6M": 182, "1Y": 365, "2Y": 730, "4Y": 1460}

ROUTES = ("oral", "transdermal", "intestinal-gel")

# Codebook for demographic tokens. Unknown gets a reserved code and is kept.
SEX_CODES = {"male": 0, "female": 1, "unknown": 2}
RACE_CODES = {
    "white": 0,
    "black": 1,
    "asian": 2,
    "multiracial": 3,
    "other": 4,
    "unknown": 5,
}


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class VisitRecord:
    """One drug administration row from the visits extract."""

    patient_id: str
    visit_date: date
    drug_name: str
    dose_mg: float
    route: str
    department: str
    length_of_stay_days: float


@dataclass(frozen=True)
class SupervisedSample:
    """One (index visit, matched follow-up) training example.

    ``target`` is the transformed dose change; ``is_zero`` mirrors
    ``abs(target) < ZERO_TOL`` and is stored explicitly so CSV round-trips
    are self-contained.
    """

    patient_id: str
    index_date: date
    horizon: str
    features: tuple[float, ...]
    target: float
    is_zero: bool


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Index arrays for the train / cal1 / val / test partitions.

    cal1 feeds the abstention-cutoff quantile, val feeds the abstention
    purity estimate; both are halves of the held-out calibration pool.
    """

    train: np.ndarray
    cal1: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int, int]:
        return len(self.train), len(self.cal1), len(self.val), len(self.test)

    def parts(self) -> dict[str, np.ndarray]:
        return {"train": self.train, "cal1": self.cal1, "val": self.val, "test": self.test}


VISITS_HEADER = [
    "patient_id",
    "visit_date",
    "drug_name",
    "dose_mg",
    "route",
    "department",
    "length_of_stay_days",
]


@dataclass(frozen=True)
class VisitLoadResult:
    records: list[VisitRecord]
    rejected: list[tuple[int, str]]  # (1-based line number, reason)


def _data_rows(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Read a CSV, returning (header, [(line_no, row), ...]); '#' lines skipped."""
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    header: list[str] | None = None
    rows: list[tuple[int, list[str]]] = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].startswith("#")):
                continue
            if header is None:
                header = row
            else:
                rows.append((line_no, row))
    if header is None:
        raise DataError(f"{path}: empty file, expected a header row")
    return header, rows


def load_visits(path: str | Path, factor_table: Mapping[tuple[str, str], float]) -> VisitLoadResult:
    """Load and validate the visits extract.

    Rows that fail validation are not fatal: they are returned with a
    reason and their 1-based line number so callers can report them.
    """
    path = Path(path)
    header, rows = _data_rows(path)
    if header != VISITS_HEADER:
        raise DataError(f"{path}: malformed header {header!r}, expected {VISITS_HEADER!r}")

    records: list[VisitRecord] = []
    rejected: list[tuple[int, str]] = []
    for line_no, row in rows:
        if len(row) != len(VISITS_HEADER):
            rejected.append((line_no, "wrong column count"))
            continue
        pid, date_s, drug, dose_s, route, dept, los_s = [c.strip() for c in row]
        if not pid:
            rejected.append((line_no, "missing patient id"))
            continue
        try:
            visit_date = date.fromisoformat(date_s)
        except ValueError:
            rejected.append((line_no, "unparseable date"))
            continue
        try:
            dose = float(dose_s)
        except ValueError:
            rejected.append((line_no, "unparseable dose"))
            continue
        if not np.isfinite(dose):
            rejected.append((line_no, "unparseable dose"))
            continue
        if dose < 0:
            rejected.append((line_no, "negative dose"))
            continue
        route = route.lower()
        if (drug.lower(), route) not in factor_table:
            rejected.append((line_no, "unknown drug"))
            continue
        try:
            los = float(los_s)
        except ValueError:
            rejected.append((line_no, "unparseable length of stay"))
            continue
        if not np.isfinite(los) or los < 0:
            rejected.append((line_no, "negative length of stay"))
            continue
        records.append(
            VisitRecord(pid, visit_date, drug.lower(), dose, route, dept, los)
        )
    return VisitLoadResult(records, rejected)


def samples_sidecar_path(path: str | Path) -> Path:
    """Feature-name manifest path that travels with a samples CSV."""
    path = Path(path)
    return path.with_name(path.stem + ".features.txt")


def write_samples(
    samples: Sequence[SupervisedSample],
    path: str | Path,
    feature_names: Sequence[str],
    header_lines: Iterable[str] = (),
) -> None:
    """Write samples to CSV plus a sidecar manifest (one feature name per line)."""
    path = Path(path)
    n_feat = len(feature_names)
    for s in samples:
        if len(s.features) != n_feat:
            raise DataError(
                f"sample for {s.patient_id} has {len(s.features)} features, manifest has {n_feat}"
            )
    cols = ["patient_id", "index_date", "horizon", "target", "is_zero"]
    cols += [f"f_{i}" for i in range(n_feat)]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for s in samples:
            w.writerow(
                [s.patient_id, s.index_date.isoformat(), s.horizon, repr(float(s.target)), int(s.is_zero)]
                + [repr(float(v)) for v in s.features]
            )
    with open(samples_sidecar_path(path), "w") as fh:
        for name in feature_names:
            fh.write(name + "\n")


def load_samples(path: str | Path) -> tuple[list[SupervisedSample], list[str]]:
    """Inverse of write_samples; returns (samples, feature_names)."""
    path = Path(path)
    header, rows = _data_rows(path)
    fixed = ["patient_id", "index_date", "horizon", "target", "is_zero"]
    if header[: len(fixed)] != fixed or any(not c.startswith("f_") for c in header[len(fixed):]):
        raise DataError(f"{path}: malformed header {header!r}")
    n_feat = len(header) - len(fixed)

    sidecar = samples_sidecar_path(path)
    if sidecar.exists():
        feature_names = [ln.strip() for ln in sidecar.read_text().splitlines() if ln.strip()]
        if len(feature_names) != n_feat:
            raise DataError(
                f"{sidecar}: manifest lists {len(feature_names)} names, CSV has {n_feat} feature columns"
            )
    else:
        feature_names = [f"f_{i}" for i in range(n_feat)]

    samples = []
    for line_no, row in rows:
        if len(row) != len(header):
            raise DataError(f"{path}:{line_no}: wrong column count")
        try:
            samples.append(
                SupervisedSample(
                    patient_id=row[0],
                    index_date=date.fromisoformat(row[1]),
                    horizon=row[2],
                    target=float(row[3]),
                    is_zero=bool(int(row[4])),
                    features=tuple(float(v) for v in row[5:]),
                )
            )
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from exc
    return samples, feature_names


def feature_matrix(samples: Sequence[SupervisedSample]) -> np.ndarray:
    return np.array([s.features for s in samples], dtype=np.float64)


def target_vector(samples: Sequence[SupervisedSample]) -> np.ndarray:
    return np.array([s.target for s in samples], dtype=np.float64)


def zero_labels(samples: Sequence[SupervisedSample]) -> np.ndarray:
    """1 where the target is a real change, 0 where it is an exact zero."""
    return np.array([0 if s.is_zero else 1 for s in samples], dtype=np.int64)


def _validate_fractions(fractions: Sequence[float]) -> None:
    if len(fractions) != 4:
        raise DataError("fractions must be (train, cal1, val, test)")
    if any(f <= 0 for f in fractions):
        raise DataError("fractions must all be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)!r}")


def make_split(
    n: int,
    fractions: Sequence[float] = (0.5, 0.15, 0.15, 0.2),
    seed: int = 0,
    patient_ids: Sequence[str] | None = None,
    stratify_labels: Sequence[int] | None = None,
) -> DatasetSplit:
    """Randomly partition n samples into train / cal1 / val / test.

    Partition sizes are floor(fraction * n) with the remainder assigned to
    train. When patient_ids are supplied, whole patients are assigned to one
    partition (sizes then track the targets as closely as group sizes allow)
    and the assignment depends only on the set of patients, not on row order.
    stratify_labels (ungrouped only) splits each stratum proportionally.
    """
    _validate_fractions(fractions)
    if n < 4:
        raise DataError("insufficient samples: need at least 4")
    if patient_ids is not None and stratify_labels is not None:
        raise DataError("stratification is not supported together with patient grouping")
    if patient_ids is not None and len(patient_ids) != n:
        raise DataError("patient_ids length must equal n")
    if stratify_labels is not None and len(stratify_labels) != n:
        raise DataError("stratify_labels length must equal n")

    g = _rng(seed, "split")
    n_cal1 = int(fractions[1] * n)
    n_val = int(fractions[2] * n)
    n_test = int(fractions[3] * n)

    if patient_ids is not None:
        groups: dict[str, list[int]] = {}
        for i, pid in enumerate(patient_ids):
            groups.setdefault(str(pid), []).append(i)
        order = sorted(groups)
        g.shuffle(order)
        # Greedy: each patient goes to the partition with the largest deficit.
        names = ["train", "cal1", "val", "test"]
        targets = {"train": n - n_cal1 - n_val - n_test, "cal1": n_cal1, "val": n_val, "test": n_test}
        counts = {k: 0 for k in names}
        assigned: dict[str, list[int]] = {k: [] for k in names}
        for pid in order:
            part = max(names, key=lambda k: (targets[k] - counts[k], -names.index(k)))
            assigned[part].extend(groups[pid])
            counts[part] += len(groups[pid])
        return DatasetSplit(*(np.array(sorted(assigned[k]), dtype=np.int64) for k in names))

    if stratify_labels is not None:
        labels = np.asarray(stratify_labels)
        parts: dict[str, list[int]] = {"train": [], "cal1": [], "val": [], "test": []}
        for lab in np.unique(labels):
            idx = np.flatnonzero(labels == lab)
            perm = idx[g.permutation(len(idx))]
            m = len(idx)
            c1, v, t = int(fractions[1] * m), int(fractions[2] * m), int(fractions[3] * m)
            tr = m - c1 - v - t
            parts["train"].extend(perm[:tr])
            parts["cal1"].extend(perm[tr : tr + c1])
            parts["val"].extend(perm[tr + c1 : tr + c1 + v])
            parts["test"].extend(perm[tr + c1 + v :])
        return DatasetSplit(
            *(np.array(sorted(parts[k]), dtype=np.int64) for k in ["train", "cal1", "val", "test"])
        )

    perm = g.permutation(n)
    n_train = n - n_cal1 - n_val - n_test
    bounds = np.cumsum([n_train, n_cal1, n_val, n_test])
    return DatasetSplit(
        np.sort(perm[: bounds[0]]),
        np.sort(perm[bounds[0] : bounds[1]]),
        np.sort(perm[bounds[1] : bounds[2]]),
        np.sort(perm[bounds[2] : bounds[3]]),
    )
