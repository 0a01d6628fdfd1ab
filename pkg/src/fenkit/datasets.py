"""Process data handling: CSV ingestion, standardization, and a seeded
synthetic generator for coupled multivariate data with injected faults.

Datasets are frozen after construction; every operation returns a new
object, so instances are safe to share across threads.
"""

import configparser
from dataclasses import dataclass

import numpy as np

from .numerics import EPS_STD

FAULT_TYPES = ("step", "random_variation", "slow_drift", "sticking", "none")

_BURN_IN = 500


@dataclass(frozen=True)
class ProcessDataset:
    """A samples-by-variables measurement matrix with per-row labels.

    Labels are integers: 0 marks a normal sample, any positive value is a
    fault id.  Labels record when a fault is declared active, not whether
    it is visible in the data.
    """

    values: np.ndarray
    labels: np.ndarray
    sample_interval_minutes: float = 3.0
    name: str = "dataset"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"dataset needs a non-empty 2-d matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains non-finite entries")
        labels = np.array(self.labels, dtype=np.int64)
        if labels.shape != (values.shape[0],):
            raise ValueError(
                f"labels length {labels.shape} does not match row count {values.shape[0]}"
            )
        if self.sample_interval_minutes <= 0:
            raise ValueError("sample_interval_minutes must be positive")
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]

    def split(self, n_first: int) -> tuple["ProcessDataset", "ProcessDataset"]:
        """Split into leading/trailing phases of n_first and n - n_first rows."""
        if not (0 < n_first < self.n_samples):
            raise ValueError(f"split point {n_first} outside (0, {self.n_samples})")
        head = ProcessDataset(
            self.values[:n_first], self.labels[:n_first],
            self.sample_interval_minutes, f"{self.name}/train",
        )
        tail = ProcessDataset(
            self.values[n_first:], self.labels[n_first:],
            self.sample_interval_minutes, f"{self.name}/test",
        )
        return head, tail

    def with_labels(self, labels: np.ndarray) -> "ProcessDataset":
        return ProcessDataset(self.values, labels, self.sample_interval_minutes, self.name)


@dataclass(frozen=True)
class ScalerStats:
    """Per-column mean and (floored) standard deviation of a training set."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        std = np.array(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean/std must be matching 1-d vectors")
        if np.any(std < EPS_STD):
            raise ValueError(f"std entries must be >= {EPS_STD}")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings for the coupled linear-Gaussian generator with one injected fault."""

    n_variables: int
    n_train: int
    n_test: int
    fault_type: str = "none"
    fault_amplitude: float = 1.0
    fault_channels: tuple = ()
    fault_onset: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fault_channels", tuple(int(c) for c in self.fault_channels))
        if self.n_variables < 1 or self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_variables, n_train and n_test must be positive")
        if self.fault_type not in FAULT_TYPES:
            raise ValueError(f"fault_type must be one of {FAULT_TYPES}, got {self.fault_type!r}")
        if not (0 <= self.fault_onset < self.n_test):
            raise ValueError(f"fault_onset {self.fault_onset} outside test phase [0, {self.n_test})")
        for ch in self.fault_channels:
            if not (0 <= ch < self.n_variables):
                raise ValueError(f"fault channel {ch} outside [0, {self.n_variables})")
        if self.fault_type != "none" and not self.fault_channels:
            raise ValueError("fault_channels must be non-empty for a declared fault")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")


def load_csv(path, has_header: bool = False, name: str | None = None) -> ProcessDataset:
    """Load a comma-separated numeric export, one row per sampling instant.

    All labels default to normal; fault labels are attached afterwards from
    a sidecar or an onset index (exports carry no label column).
    Malformed input reports the offending line and column.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError:
        raise FileNotFoundError(f"data file not found: {path}") from None

    start = 0
    if has_header:
        if not lines:
            raise ValueError(f"{path}: empty file cannot carry a header")
        start = 1
    rows = []
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ValueError(
                f"{path}: ragged row at line {lineno}: expected {width} fields, got {len(fields)}"
            )
        parsed = []
        for col, token in enumerate(fields):
            try:
                value = float(token)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric field at line {lineno}, column {col + 1}: {token!r}"
                ) from None
            if not np.isfinite(value):
                raise ValueError(
                    f"{path}: non-finite field at line {lineno}, column {col + 1}: {token!r}"
                )
            parsed.append(value)
        rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    return ProcessDataset(values, np.zeros(len(rows), dtype=np.int64),
                          name=name or str(path))


def write_csv(dataset: ProcessDataset, path) -> None:
    """Write the value matrix as comma-separated text, full float precision."""
    with open(path, "w", encoding="utf-8") as handle:
        for row in dataset.values:
            handle.write(",".join(repr(float(v)) for v in row))
            handle.write("\n")


def attach_onset_labels(dataset: ProcessDataset, onset: int, fault_id: int = 1) -> ProcessDataset:
    """Label rows >= onset as faulty; the usual transport for exported data."""
    if not (0 <= onset <= dataset.n_samples):
        raise ValueError(f"onset {onset} outside [0, {dataset.n_samples}]")
    labels = np.zeros(dataset.n_samples, dtype=np.int64)
    labels[onset:] = fault_id
    return dataset.with_labels(labels)


def fit_standardize(train: ProcessDataset) -> ScalerStats:
    """Per-column mean/std of the training set, std floored so constant
    (frozen-sensor) columns standardize to zero instead of erroring."""
    if train.n_samples < 2:
        raise ValueError("standardization needs at least 2 training rows")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0, ddof=1)
    return ScalerStats(mean=mean, std=np.maximum(std, EPS_STD))


def apply_standardize(data: ProcessDataset, stats: ScalerStats) -> ProcessDataset:
    if data.n_variables != stats.mean.shape[0]:
        raise ValueError(
            f"column count mismatch: data has {data.n_variables}, stats has {stats.mean.shape[0]}"
        )
    values = (data.values - stats.mean) / stats.std
    return ProcessDataset(values, data.labels, data.sample_interval_minutes, data.name)


def _coupling_matrix(m: int) -> np.ndarray:
    """Tridiagonal transition matrix rescaled to spectral radius 0.95."""
    a = np.zeros((m, m))
    np.fill_diagonal(a, 0.8)
    idx = np.arange(m - 1)
    a[idx, idx + 1] = 0.1
    a[idx + 1, idx] = 0.1
    radius = np.max(np.abs(np.linalg.eigvals(a)))
    return a * (0.95 / radius)


def generate_synthetic(config: SyntheticConfig) -> ProcessDataset:
    """Generate a coupled stationary sequence with the configured fault.

    The normal dynamics are x_t = A x_{t-1} + w_t with A stable and
    non-diagonal, so channels are cross- and auto-correlated.  The fault
    acts on fault_channels from fault_onset (an index into the test phase):

      step             additive fault_amplitude * channel std
      random_variation injected noise std scaled by (1 + fault_amplitude)
      slow_drift       linear ramp reaching fault_amplitude * channel std
                       at the end of the sequence
      sticking         channel frozen at its onset value

    Identical configs produce bit-identical datasets.  Split the result
    with dataset.split(config.n_train).
    """
    m = config.n_variables
    n_total = config.n_train + config.n_test
    onset_abs = config.n_train + config.fault_onset
    rng = np.random.default_rng(config.seed)
    a = _coupling_matrix(m)

    # One noise draw for every step regardless of fault type keeps the
    # zero-amplitude fault bit-identical to the no-fault sequence.
    noise = rng.standard_normal((_BURN_IN + n_total, m))
    if config.fault_type == "random_variation":
        scale_rows = _BURN_IN + onset_abs
        for ch in config.fault_channels:
            noise[scale_rows:, ch] *= 1.0 + config.fault_amplitude

    states = np.zeros((_BURN_IN + n_total, m))
    prev = np.zeros(m)
    for t in range(_BURN_IN + n_total):
        prev = a @ prev + noise[t]
        states[t] = prev
    values = states[_BURN_IN:]

    channel_std = np.maximum(values[: config.n_train].std(axis=0, ddof=1), EPS_STD)

    if config.fault_type == "step":
        for ch in config.fault_channels:
            values[onset_abs:, ch] += config.fault_amplitude * channel_std[ch]
    elif config.fault_type == "slow_drift":
        last = n_total - 1
        span = max(last - onset_abs, 1)
        ramp = (np.arange(onset_abs, n_total) - onset_abs) / span
        for ch in config.fault_channels:
            values[onset_abs:, ch] += config.fault_amplitude * channel_std[ch] * ramp
    elif config.fault_type == "sticking":
        for ch in config.fault_channels:
            values[onset_abs:, ch] = values[onset_abs, ch]

    labels = np.zeros(n_total, dtype=np.int64)
    if config.fault_type != "none":
        labels[onset_abs:] = 1
    return ProcessDataset(values, labels, name=f"synthetic-{config.fault_type}-{config.seed}")


def write_sidecar(config: SyntheticConfig, path) -> None:
    """Key-value metadata recording exactly how a dataset was produced."""
    parser = configparser.ConfigParser()
    parser["synthetic"] = {
        "n_variables": str(config.n_variables),
        "n_train": str(config.n_train),
        "n_test": str(config.n_test),
        "fault_type": config.fault_type,
        "fault_amplitude": repr(config.fault_amplitude),
        "fault_channels": " ".join(str(c) for c in config.fault_channels),
        "fault_onset": str(config.fault_onset),
        "seed": str(config.seed),
    }
    with open(path, "w", encoding="utf-8") as handle:
        parser.write(handle)


def synthetic_config_from_section(section) -> SyntheticConfig:
    """SyntheticConfig from one parsed key-value section (sidecars and
    scenario blocks share the key set)."""
    channels = tuple(int(tok) for tok in section.get("fault_channels", "").split())
    return SyntheticConfig(
        n_variables=section.getint("n_variables"),
        n_train=section.getint("n_train"),
        n_test=section.getint("n_test"),
        fault_type=section.get("fault_type", "none"),
        fault_amplitude=section.getfloat("fault_amplitude", 1.0),
        fault_channels=channels,
        fault_onset=section.getint("fault_onset", 0),
        seed=int(section.get("seed", "0")),
    )


def read_synthetic_config(path) -> SyntheticConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    if "synthetic" not in parser:
        raise ValueError(f"{path}: missing [synthetic] section")
    return synthetic_config_from_section(parser["synthetic"])
