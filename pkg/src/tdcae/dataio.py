"""Turbofan sensor-run parsing, labeling, engine-level splits and scaling.

The on-disk input format is the C-MAPSS plain-text layout: one record per
line, 26 whitespace-separated numeric fields (unit, cycle, 3 operational
settings, 21 sensors), no header. The 3 settings + 21 sensors form the
24-dimensional feature vector; unit and cycle are identifiers.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_SETTINGS = 3
N_SENSORS = 21
N_FEATURES = N_SETTINGS + N_SENSORS
NORMAL_FRACTION = 0.6
VAL_FRACTION = 0.1


class ParseError(ValueError):
    """Malformed input line (wrong field count or non-numeric value)."""


class DataIntegrityError(ValueError):
    """Structurally valid file with inconsistent content (e.g. cycle gaps)."""


def normal_cycle_count(life_length: int) -> int:
    """Number of leading cycles labeled normal: ceil(0.6 * T)."""
    return math.ceil(NORMAL_FRACTION * life_length)


def assign_labels(life_length: int) -> np.ndarray:
    """Boolean label vector, True = anomalous (the trailing 40% of life)."""
    labels = np.ones(life_length, dtype=bool)
    labels[: normal_cycle_count(life_length)] = False
    return labels


@dataclass(eq=False)
class EngineRun:
    """One engine's cycle-indexed feature series with 60/40 labels.

    features is [T x 24] float64; labels is [T] bool with True marking the
    anomalous trailing 40% of the engine's life. Cycles are implicitly
    1..T (consecutiveness is enforced at parse time).
    """

    unit_id: int
    features: np.ndarray
    labels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"features must be [T x {N_FEATURES}], got {self.features.shape}")
        if self.labels is None:
            self.labels = assign_labels(len(self.features))
        self.labels = np.asarray(self.labels, dtype=bool)
        if len(self.labels) != len(self.features):
            raise ValueError("labels length must match features length")

    @property
    def life_length(self) -> int:
        return len(self.features)

    @property
    def normal_count(self) -> int:
        return int(np.count_nonzero(~self.labels))

    def normal_features(self) -> np.ndarray:
        return self.features[~self.labels]

    def equals(self, other: "EngineRun") -> bool:
        return (
            self.unit_id == other.unit_id
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class DatasetSplit:
    """Engine-level train/test partition plus the per-engine row split fraction."""

    train_engines: frozenset[int]
    test_engines: frozenset[int]
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.train_engines & self.test_engines:
            raise ValueError("train and test engine sets overlap")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature min/max fitted on normal-label rows of training engines."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "minimum", np.asarray(self.minimum, dtype=np.float64))
        object.__setattr__(self, "maximum", np.asarray(self.maximum, dtype=np.float64))
        if self.minimum.shape != self.maximum.shape:
            raise ValueError("min/max shape mismatch")
        if np.any(self.maximum < self.minimum):
            raise ValueError("max < min for some feature")


def parse_cmapss(path: str | Path) -> list[EngineRun]:
    """Parse a C-MAPSS text file into one labeled EngineRun per unit.

    Raises ParseError (with the 1-based line number) on malformed lines and
    DataIntegrityError if any unit's cycles are not consecutive from 1.
    """
    path = Path(path)
    by_unit: dict[int, list[tuple[int, list[float]]]] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue  # tolerate blank lines
            if len(fields) != 2 + N_FEATURES:
                raise ParseError(
                    f"{path.name}:{lineno}: expected {2 + N_FEATURES} fields, got {len(fields)}"
                )
            try:
                unit = int(float(fields[0]))
                cycle = int(float(fields[1]))
                values = [float(v) for v in fields[2:]]
            except ValueError as exc:
                raise ParseError(f"{path.name}:{lineno}: non-numeric field ({exc})") from None
            by_unit.setdefault(unit, []).append((cycle, values))

    runs = []
    for unit in sorted(by_unit):
        rows = sorted(by_unit[unit], key=lambda r: r[0])
        cycles = [c for c, _ in rows]
        if cycles != list(range(1, len(rows) + 1)):
            raise DataIntegrityError(
                f"{path.name}: unit {unit} cycles are not consecutive from 1"
            )
        if len(rows) < 5:
            # central differences and the smoothing windows need neighbors
            raise DataIntegrityError(f"{path.name}: unit {unit} has fewer than 5 cycles")
        features = np.array([v for _, v in rows], dtype=np.float64)
        runs.append(EngineRun(unit_id=unit, features=features))
    return runs


def split_engines(runs: list[EngineRun], test_fraction: float, seed: int) -> DatasetSplit:
    """Partition whole engines into train/test with a seeded shuffle.

    Deterministic for a fixed seed; the test side gets round(n * fraction)
    engines, clamped so both sides are non-empty.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    units = sorted(run.unit_id for run in runs)
    if len(units) < 2:
        raise ValueError("need at least 2 engines to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    n_test = int(round(test_fraction * len(units)))
    n_test = min(max(n_test, 1), len(units) - 1)
    shuffled = [units[i] for i in order]
    return DatasetSplit(
        train_engines=frozenset(shuffled[n_test:]),
        test_engines=frozenset(shuffled[:n_test]),
    )


def fit_scaler(runs: list[EngineRun]) -> ScalerParams:
    """Per-feature min/max over the normal-labeled rows of the given runs."""
    normal_rows = [run.normal_features() for run in runs if run.normal_count > 0]
    if not normal_rows:
        raise ValueError("no normal-labeled rows to fit scaler on")
    pooled = np.vstack(normal_rows)
    return ScalerParams(minimum=pooled.min(axis=0), maximum=pooled.max(axis=0))


def apply_scaler(run: EngineRun, scaler: ScalerParams) -> EngineRun:
    """Min-max scale a run: (x - min) / (max - min), constant features to 0.

    Values outside the fitted range are NOT clipped; out-of-range excursions
    during degradation are exactly the signal downstream detection needs.
    """
    span = scaler.maximum - scaler.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = (run.features - scaler.minimum) / safe
    scaled[:, span == 0] = 0.0
    return EngineRun(unit_id=run.unit_id, features=scaled, labels=run.labels.copy())


def normal_row_split(run: EngineRun, val_fraction: float = VAL_FRACTION) -> tuple[range, range]:
    """Contiguous 90/10 split of a run's normal rows: (train range, val range).

    Contiguity preserves the temporal neighbors that central differences
    need; the validation block is the tail of the normal segment.
    """
    n_normal = run.normal_count
    n_train = n_normal - int(math.floor(val_fraction * n_normal))
    return range(0, n_train), range(n_train, n_normal)


# --- columnar CSV serialization (unit, cycle, f0..f23, label) ----------------

CSV_HEADER = "unit,cycle," + ",".join(f"f{i}" for i in range(N_FEATURES)) + ",label"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_runs_csv(runs: list[EngineRun], path: str | Path) -> None:
    """Write runs to the labeled columnar CSV format (exact float round-trip)."""
    lines = [CSV_HEADER]
    for run in runs:
        for t in range(run.life_length):
            label = "anomalous" if run.labels[t] else "normal"
            values = ",".join(repr(float(v)) for v in run.features[t])
            lines.append(f"{run.unit_id},{t + 1},{values},{label}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_runs_csv(path: str | Path) -> list[EngineRun]:
    """Inverse of write_runs_csv."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ParseError(f"{path.name}: unexpected header {header!r}")
        by_unit: dict[int, list[tuple[int, list[float], bool]]] = {}
        for lineno, line in enumerate(fh, start=2):
            fields = line.strip().split(",")
            if len(fields) == 1 and not fields[0]:
                continue
            if len(fields) != 3 + N_FEATURES:
                raise ParseError(f"{path.name}:{lineno}: expected {3 + N_FEATURES} fields")
            try:
                unit, cycle = int(fields[0]), int(fields[1])
                values = [float(v) for v in fields[2:-1]]
            except ValueError as exc:
                raise ParseError(f"{path.name}:{lineno}: non-numeric field ({exc})") from None
            if fields[-1] not in ("normal", "anomalous"):
                raise ParseError(f"{path.name}:{lineno}: bad label {fields[-1]!r}")
            by_unit.setdefault(unit, []).append((cycle, values, fields[-1] == "anomalous"))

    runs = []
    for unit in sorted(by_unit):
        rows = sorted(by_unit[unit], key=lambda r: r[0])
        if [c for c, _, _ in rows] != list(range(1, len(rows) + 1)):
            raise DataIntegrityError(f"{path.name}: unit {unit} cycles are not consecutive")
        if len(rows) < 5:
            raise DataIntegrityError(f"{path.name}: unit {unit} has fewer than 5 cycles")
        features = np.array([v for _, v, _ in rows], dtype=np.float64)
        labels = np.array([a for _, _, a in rows], dtype=bool)
        runs.append(EngineRun(unit_id=unit, features=features, labels=labels))
    return runs


def write_cmapss(runs: list[EngineRun], path: str | Path) -> None:
    """Write runs in the raw 26-column C-MAPSS text layout (labels implied by 60/40)."""
    lines = []
    for run in runs:
        for t in range(run.life_length):
            values = " ".join(repr(float(v)) for v in run.features[t])
            lines.append(f"{run.unit_id} {t + 1} {values}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# --- synthetic surrogate ------------------------------------------------------

def synthetic_runs(
    n_engines: int = 12,
    mean_life: int = 160,
    seed: int = 0,
    noise: float = 0.015,
    drift_gain: float = 3.0,
    constant: bool = False,
) -> list[EngineRun]:
    """Generate surrogate engine runs: bounded oscillatory channels plus a
    late-life monotone drift ramping in shortly before the 60/40 boundary.

    With constant=True every row of an engine repeats (fixed-point training
    check). Degradation onset is at 55% of life so the labeled-anomalous
    region overlaps real drift, mimicking turbofan degradation data.
    """
    rng = np.random.default_rng(seed)
    runs = []
    for unit in range(1, n_engines + 1):
        T = int(rng.integers(int(0.8 * mean_life), int(1.2 * mean_life) + 1))
        t = np.arange(T, dtype=np.float64)
        base = rng.uniform(-1.0, 1.0, N_FEATURES)
        if constant:
            features = np.tile(base, (T, 1))
            runs.append(EngineRun(unit_id=unit, features=features))
            continue
        # period 5-12 cycles: inside the detector's smoothing window, so the
        # oscillation is averaged out at detection time yet gives central
        # differences real dynamics to learn at training time
        omega = rng.uniform(0.5, 1.2)
        phase = rng.uniform(0, 2 * np.pi, N_FEATURES)
        amp = rng.uniform(0.2, 0.6, N_FEATURES)
        direction = rng.choice([-1.0, 1.0], N_FEATURES) * rng.uniform(0.5, 1.5, N_FEATURES)
        onset = 0.55 * T
        ramp = np.clip((t - onset) / (T - onset), 0.0, None) ** 2
        features = (
            base
            + amp * np.sin(omega * t[:, None] + phase)
            + drift_gain * direction * ramp[:, None]
            + noise * rng.standard_normal((T, N_FEATURES))
        )
        # settings columns stay near-constant, like single-condition flight data
        features[:, :N_SETTINGS] = base[:N_SETTINGS] + noise * rng.standard_normal((T, N_SETTINGS))
        runs.append(EngineRun(unit_id=unit, features=features))
    return runs
