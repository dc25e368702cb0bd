"""Dataset handling: CSV ingestion, standardization, periodic encoding,
farthest-point test splits, and the bundled synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ConditionedDataset:
    """Paired conditions X (N, D_x) and observations Y (N, D_y).

    Standardization statistics are computed on training data only and
    carried along so they can be re-applied to test data unchanged.
    """

    X: np.ndarray
    Y: np.ndarray
    x_names: list = field(default_factory=list)
    y_names: list = field(default_factory=list)
    x_stats: ColumnStats = None
    y_stats: ColumnStats = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        if np.isnan(self.X).any() or np.isnan(self.Y).any():
            raise ValueError("dataset contains NaN values")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if not self.x_names:
            self.x_names = [f"x{i}" for i in range(self.X.shape[1])]
        if not self.y_names:
            self.y_names = [f"y{i}" for i in range(self.Y.shape[1])]

    @property
    def n(self):
        return self.X.shape[0]

    def standardized(self):
        """Fit standardization on this data and apply it; returns a new
        dataset carrying the statistics."""
        xs = ColumnStats(self.X.mean(axis=0), _safe_std(self.X))
        ys = ColumnStats(self.Y.mean(axis=0), _safe_std(self.Y))
        return ConditionedDataset(
            (self.X - xs.mean) / xs.std, (self.Y - ys.mean) / ys.std,
            list(self.x_names), list(self.y_names), xs, ys)

    def apply_stats(self, x_stats: ColumnStats, y_stats: ColumnStats):
        """Apply previously fitted statistics (no refit: no leakage)."""
        return ConditionedDataset(
            (self.X - x_stats.mean) / x_stats.std,
            (self.Y - y_stats.mean) / y_stats.std,
            list(self.x_names), list(self.y_names), x_stats, y_stats)

    def subset(self, indices):
        return ConditionedDataset(self.X[indices], self.Y[indices],
                                  list(self.x_names), list(self.y_names),
                                  self.x_stats, self.y_stats)


def _safe_std(a):
    s = a.std(axis=0)
    return np.where(s > 0, s, 1.0)


def encode_periodic(values, period):
    """(sin, cos) encoding of a periodic column."""
    if period <= 0:
        raise ValueError("period must be positive")
    values = np.asarray(values, dtype=np.float64)
    angle = 2.0 * np.pi * values / period
    return np.sin(angle), np.cos(angle)


def split_farthest_point(x, test_size, seed=0):
    """Greedy farthest-point test split.

    The seed point is drawn from `seed`; each following test point
    maximizes the minimum Euclidean distance to the points already in the
    test set (ties broken by ascending index).  Returns (train_idx,
    test_idx).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if not 1 <= test_size < n:
        raise ValueError("test_size must be in [1, N)")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    test = [first]
    min_dist = np.linalg.norm(x - x[first], axis=1)
    min_dist[first] = -np.inf
    for _ in range(test_size - 1):
        nxt = int(np.argmax(min_dist))       # argmax takes the lowest index on ties
        test.append(nxt)
        d = np.linalg.norm(x - x[nxt], axis=1)
        min_dist = np.minimum(min_dist, d)
        min_dist[nxt] = -np.inf
    test_idx = np.array(test)
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


# -- CSV I/O --------------------------------------------------------------

def read_csv(path):
    """Read a numeric CSV with a header row; returns (names, array)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64)
    if np.isnan(data).any():
        raise ValueError(f"{path}: NaN after ingestion")
    return header, data


def write_csv(path, names, data):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def dataset_from_csv(path, x_cols, y_cols, periodic=None):
    """Build a dataset from a CSV file.

    periodic: {column_name: period}; each such condition column is
    replaced by its sine/cosine pair.
    """
    names, data = read_csv(path)
    index = {n: i for i, n in enumerate(names)}
    missing = [c for c in list(x_cols) + list(y_cols) if c not in index]
    if missing:
        raise ValueError(f"columns not in {path}: {missing}")
    periodic = periodic or {}
    x_parts, x_names = [], []
    for c in x_cols:
        col = data[:, index[c]]
        if c in periodic:
            s, co = encode_periodic(col, periodic[c])
            x_parts += [s, co]
            x_names += [f"{c}_sin", f"{c}_cos"]
        else:
            x_parts.append(col)
            x_names.append(c)
    y = data[:, [index[c] for c in y_cols]]
    x = np.column_stack(x_parts) if x_parts else np.zeros((data.shape[0], 0))
    return ConditionedDataset(x, y, x_names, list(y_cols))


# -- bundled synthetic datasets ------------------------------------------

def heteroscedastic_sinusoid(n=1200, seed=0):
    """1D toy set: smooth mean with an input-dependent noise level."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=n)
    mean = np.sin(2.0 * np.pi * x)
    noise_sd = 0.05 + 0.45 * (1.0 + np.cos(2.0 * np.pi * x)) / 2.0
    y = mean + noise_sd * rng.standard_normal(n)
    return ConditionedDataset(x[:, None], y[:, None], ["x"], ["y"])


def conditional_mixture(n=1200, seed=0):
    """2D conditional two-component mixture.

    The two component centers and the mixing weight move with the
    condition, so the conditional density is bimodal for most inputs.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    center = np.column_stack([0.8 * np.sin(np.pi * x[:, 0]),
                              0.8 * np.cos(np.pi * x[:, 1])])
    weight = 1.0 / (1.0 + np.exp(-2.0 * x[:, 0]))
    pick = rng.uniform(size=n) < weight
    sign = np.where(pick, 1.0, -1.0)
    y = sign[:, None] * center + 0.15 * rng.standard_normal((n, 2))
    return ConditionedDataset(x, y, ["x0", "x1"], ["y0", "y1"])


def digits_like(n=100, d_y=8, seed=0, noise_sd=0.05):
    """Low-dimensional 'digit-like' vectors on a 1D manifold; used by the
    natural-gradient validation demo (unconditional model)."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, size=n)
    phases = np.linspace(0.0, np.pi, d_y)
    amps = 1.0 + 0.5 * np.cos(phases)
    y = amps * np.sin(2.0 * np.pi * t[:, None] + phases)
    y = y + noise_sd * rng.standard_normal((n, d_y))
    x = np.zeros((n, 0))
    return ConditionedDataset(x, y, [], [f"p{i}" for i in range(d_y)])
