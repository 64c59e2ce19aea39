"""Dataset I/O, per-minute standardization, smoothing, stratified splits and synthetic data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import MINUTES_PER_WEEK
from .tensor import ContractError


class ParseError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


@dataclass
class ActigraphyRecord:
    participant_id: str
    series: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float32)
        if self.series.ndim != 1:
            raise ContractError(f"{self.participant_id}: series must be one-dimensional")
        if not np.all(np.isfinite(self.series)):
            raise ContractError(f"{self.participant_id}: series contains non-finite values")
        if self.label is not None and self.label not in (0, 1):
            raise ContractError(f"{self.participant_id}: label must be 0 or 1")


def as_matrix(records):
    return np.stack([r.series for r in records]).astype(np.float32)


def labels_of(records):
    labels = [r.label for r in records]
    if any(lab is None for lab in labels):
        raise ContractError("records without labels where labels are required")
    return np.asarray(labels, dtype=np.int64)


def with_series(records, matrix):
    return [
        ActigraphyRecord(r.participant_id, row, r.label)
        for r, row in zip(records, matrix)
    ]


# -- CSV -----------------------------------------------------------------


def save_csv(records, path, digits=6):
    """Write ``participant_id,label,m0,...`` rows; floats use ``digits`` significant digits."""
    if not records:
        raise ContractError("nothing to save")
    length = len(records[0].series)
    fmt = f"%.{digits}g"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("participant_id,label," + ",".join(f"m{i}" for i in range(length)) + "\n")
        for r in records:
            if len(r.series) != length:
                raise ContractError(f"{r.participant_id}: series length differs from first record")
            label = "" if r.label is None else str(int(r.label))
            values = ",".join(fmt % v for v in r.series.tolist())
            fh.write(f"{r.participant_id},{label},{values}\n")


def load_csv(path, series_len=None, require_labels=False):
    """Parse a dataset CSV into records, in file order."""
    path = Path(path)
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
        if header[:2] != ["participant_id", "label"]:
            raise ParseError(f"{path}:1: header must start with participant_id,label")
        length = len(header) - 2
        if header[2:] != [f"m{i}" for i in range(length)]:
            raise ParseError(f"{path}:1: minute columns must be m0..m{length - 1}")
        if series_len is not None and length != series_len:
            raise ParseError(f"{path}:1: expected {series_len} minute columns, found {length}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != length + 2:
                raise ParseError(
                    f"{path}:{lineno}: expected {length} values, found {len(cells) - 2}"
                )
            pid, label_cell = cells[0], cells[1].strip()
            if pid in seen:
                raise ParseError(f"{path}:{lineno}: duplicate participant_id {pid!r}")
            seen.add(pid)
            if label_cell == "":
                if require_labels:
                    raise ParseError(f"{path}:{lineno}: missing label for {pid!r}")
                label = None
            elif label_cell in ("0", "1"):
                label = int(label_cell)
            else:
                raise ParseError(f"{path}:{lineno}: label must be 0, 1 or empty, got {label_cell!r}")
            try:
                series = np.array(cells[2:], dtype=np.float64)
            except ValueError:
                bad = next(c for c in cells[2:] if not _is_number(c))
                raise ParseError(f"{path}:{lineno}: non-numeric value {bad!r}") from None
            if not np.all(np.isfinite(series)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            records.append(ActigraphyRecord(pid, series, label))
    return records


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def write_manifest(ids, path):
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_manifest(path):
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# -- standardization -----------------------------------------------------


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-8

    def apply(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        ok = self.std >= self.eps
        safe = np.where(ok, self.std, 1.0)
        return np.where(ok, (matrix - self.mean) / safe, 0.0).astype(np.float32)


def fit_standardization(matrix, eps=1e-8):
    matrix = np.asarray(matrix, dtype=np.float64)
    return StandardizationStats(matrix.mean(axis=0), matrix.std(axis=0), eps)


def standardize_per_minute(records, eps=1e-8, stats=None):
    """Z-score each minute position across participants (population std).

    With ``stats`` given, those moments are applied instead of refitting, which
    is the train-statistics-on-test alternative.
    """
    if stats is None:
        if len(records) < 2:
            raise ContractError("standardization needs at least two records")
        stats = fit_standardization(as_matrix(records), eps)
    return with_series(records, stats.apply(as_matrix(records))), stats


# -- smoothing -----------------------------------------------------------


def savgol_coefficients(window, poly):
    """Weights giving the centre value of a least-squares degree-``poly`` fit."""
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    vander = np.vander(x, poly + 1, increasing=True)
    # first row of the pseudo-inverse evaluates the fitted polynomial at 0
    return np.linalg.pinv(vander)[0]


def savgol_smooth(series, window=51, poly=3):
    """Savitzky-Golay smoothing with point-reflected edges.

    Edges are extended by reflecting through the end sample
    (``2*x[0] - x[k]``), so straight lines pass through unchanged.
    """
    if window % 2 == 0 or window < 1:
        raise ContractError(f"window must be a positive odd integer, got {window}")
    if poly >= window or poly < 0:
        raise ContractError(f"polynomial order {poly} must be below window {window}")
    x = np.asarray(series, dtype=np.float64)
    if x.shape[-1] < window:
        raise ContractError(f"series length {x.shape[-1]} shorter than window {window}")
    half = window // 2
    left = 2 * x[..., :1] - x[..., half:0:-1]
    right = 2 * x[..., -1:] - x[..., -2 : -half - 2 : -1]
    padded = np.concatenate([left, x, right], axis=-1)
    coeffs = savgol_coefficients(window, poly)
    windows = np.lib.stride_tricks.sliding_window_view(padded, window, axis=-1)
    return (windows @ coeffs).astype(np.float32)


def smooth_records(records, window=51, poly=3):
    return with_series(records, savgol_smooth(as_matrix(records), window, poly))


# -- stratified subsets --------------------------------------------------


@dataclass
class SplitSpec:
    test_size: int = 2000
    subset_sizes: list = field(default_factory=lambda: [500, 1000, 2500, None])
    val_fraction: float = 0.20
    seed: int = 0


@dataclass
class SplitResult:
    test: list
    subsets: dict  # size label -> (train records, val records)


def size_label(size):
    return "N" if size is None else str(size)


def _allocate(counts, total):
    """Per-class quotas summing to ``total`` (largest remainder on the class shares)."""
    n = sum(counts.values())
    exact = {c: total * k / n for c, k in counts.items()}
    quota = {c: math.floor(v) for c, v in exact.items()}
    short = total - sum(quota.values())
    order = sorted(counts, key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[:short]:
        quota[c] += 1
    return quota


def _stratified_take(records, total, rng):
    """Split ``records`` into (taken, rest) with class shares preserved in ``taken``."""
    by_class = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.label, []).append(i)
    quota = _allocate({c: len(v) for c, v in by_class.items()}, total)
    chosen = []
    for c in sorted(by_class):
        idx = np.asarray(by_class[c])
        chosen.extend(rng.permutation(idx)[: quota[c]].tolist())
    chosen = sorted(chosen)
    mask = np.zeros(len(records), dtype=bool)
    mask[chosen] = True
    taken = [records[i] for i in rng.permutation(np.flatnonzero(mask))]
    rest = [r for r, m in zip(records, mask) if not m]
    return taken, rest


def stratified_subsets(records, spec: SplitSpec) -> SplitResult:
    """Held-out stratified test set, then per-size stratified train/val subsets.

    Subsets of different sizes are drawn independently from the same pool, so
    they may overlap one another; participants within a subset are distinct.
    """
    labels = labels_of(records)
    if len(set(labels.tolist())) < 2:
        raise ContractError("stratified splitting needs both classes present")
    fixed = [s for s in spec.subset_sizes if s is not None]
    if spec.test_size + (max(fixed) if fixed else 0) > len(records):
        raise ContractError(
            f"test_size {spec.test_size} + largest subset {max(fixed, default=0)} "
            f"exceeds {len(records)} participants"
        )
    rng = np.random.default_rng(spec.seed)
    test, pool = _stratified_take(records, spec.test_size, rng)
    subsets = {}
    for size in spec.subset_sizes:
        n = len(pool) if size is None else size
        subset, _ = _stratified_take(pool, n, rng)
        n_val = int(round(spec.val_fraction * n))
        val, train = _stratified_take(subset, n_val, rng)
        subsets[size_label(size)] = (train, val)
    return SplitResult(test, subsets)


def write_split_manifests(result: SplitResult, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_manifest([r.participant_id for r in result.test], directory / "test.txt")
    for label, (train, val) in result.subsets.items():
        write_manifest([r.participant_id for r in train], directory / f"train_{label}.txt")
        write_manifest([r.participant_id for r in val], directory / f"val_{label}.txt")


# -- synthetic data ------------------------------------------------------


def synth_generate(n, seed=0, effect=1.0, series_len=MINUTES_PER_WEEK, noise=0.3):
    """Balanced synthetic week-long activity traces.

    Each trace is a daily rhythm plus a weekday/weekend modulation plus
    Gaussian noise, with per-participant jitter in phase and amplitude.
    Label-1 participants are shifted later in the day and dampened in
    amplitude in proportion to ``effect``; ``effect=0`` gives identical class
    distributions.
    """
    if n < 2:
        raise ContractError("need at least two participants")
    if effect < 0:
        raise ContractError("effect must be non-negative")
    rng = np.random.default_rng(seed)
    labels = np.array([0, 1] * (n // 2) + [0] * (n % 2))
    labels = rng.permutation(labels)
    t = np.arange(series_len, dtype=np.float64)
    day = 2 * np.pi * t / 1440.0
    weekday = np.floor(t / 1440.0) % 7
    weekend = (weekday >= 5).astype(np.float64)
    records = []
    width = len(str(n - 1))
    for i, y in enumerate(labels):
        phase = rng.normal(0.0, 0.25) + 0.9 * effect * y
        amp = rng.normal(1.0, 0.1) * (1.0 - 0.35 * effect * y)
        level = rng.normal(2.0, 0.1)
        weekly = 0.3 * rng.normal(1.0, 0.2) * weekend
        series = (
            level
            + amp * np.sin(day - phase)
            + 0.4 * amp * np.sin(2 * day - 2 * phase)
            + weekly
            + noise * rng.standard_normal(series_len)
        )
        records.append(ActigraphyRecord(f"P{i:0{width}d}", series, int(y)))
    return records
