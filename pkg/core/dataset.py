"""
Dataset Module
Loads, validates and holds the estimation sample
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pandas.errors import EmptyDataError, ParserError

from core.errors import ConfigurationError, DataError, ParseError

logger = logging.getLogger(__name__)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Estimation sample: response y, scalar regressor x, covariates w (n x d)
    and optional cluster labels. Arrays are read-only after construction.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    cluster: Optional[np.ndarray] = None
    w_names: tuple = ()
    drop_report: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.w.shape[1]

    @property
    def n_clusters(self):
        if self.cluster is None:
            return None
        return int(np.unique(self.cluster).size)

    @classmethod
    def from_arrays(cls, y, x, w=None, cluster=None, w_names=None, drop_report=None):
        """
        Build a validated Dataset from array-likes

        Args:
            y: Response values (length n)
            x: Regressor values (length n)
            w: Covariates, shape (n,), (n, d) or None
            cluster: Optional group labels (length n)
            w_names: Optional covariate names

        Returns:
            Dataset: validated, immutable sample
        """
        y = np.asarray(y, dtype=float).ravel()
        x = np.asarray(x, dtype=float).ravel()
        n = x.shape[0]

        if w is None:
            w = np.empty((n, 0))
        else:
            w = np.asarray(w, dtype=float)
            if w.ndim == 1:
                w = w.reshape(-1, 1)

        if y.shape[0] != n or w.shape[0] != n:
            raise DataError(f"Column lengths differ: y={y.shape[0]}, x={n}, w={w.shape[0]}")
        if n < 2:
            raise DataError(f"At least 2 observations required (got {n})")
        if not np.all(np.isfinite(x)):
            raise DataError("x contains non-finite values")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(w)):
            raise DataError("y or w contains non-finite values")

        if cluster is not None:
            cluster = np.asarray(cluster).ravel()
            if cluster.shape[0] != n:
                raise DataError(f"Cluster labels have length {cluster.shape[0]}, expected {n}")
            n_groups = np.unique(cluster).size
            if n_groups < 2:
                raise DataError(f"At least 2 clusters required (got {n_groups})")
            cluster = _frozen(cluster, dtype=cluster.dtype)

        if w_names is None:
            w_names = tuple(f"w{k + 1}" for k in range(w.shape[1]))
        if len(w_names) != w.shape[1]:
            raise DataError("Number of covariate names does not match w")

        return cls(
            y=_frozen(y),
            x=_frozen(x),
            w=_frozen(w),
            cluster=cluster,
            w_names=tuple(w_names),
            drop_report=dict(drop_report or {}),
        )

    def subset(self, rows):
        """Return a new Dataset restricted to (or reordered by) ``rows``"""
        rows = np.asarray(rows)
        return Dataset.from_arrays(
            self.y[rows],
            self.x[rows],
            self.w[rows],
            None if self.cluster is None else self.cluster[rows],
            self.w_names,
        )

    def summary(self):
        """
        Get summary statistics

        Returns:
            dict: n, d, clusters, x range, means
        """
        return {
            'n': self.n,
            'd': self.d,
            'clusters': self.n_clusters,
            'x_min': float(self.x.min()),
            'x_max': float(self.x.max()),
            'x_mean': float(self.x.mean()),
            'y_mean': float(self.y.mean()),
            'w_mean': [float(m) for m in self.w.mean(axis=0)],
            'dropped_rows': int(self.drop_report.get('dropped', 0)),
        }


@dataclass(frozen=True, eq=False)
class SortIndex:
    """Stable ascending ordering of x"""

    perm: np.ndarray
    distinct_count: int


def sort_index(data):
    """
    Stable ascending permutation of x

    Args:
        data: Dataset

    Returns:
        SortIndex: permutation and number of distinct x values
    """
    perm = np.argsort(data.x, kind="stable")
    xs = data.x[perm]
    distinct = 1 + int(np.count_nonzero(np.diff(xs) > 0))
    return SortIndex(perm=_frozen(perm, dtype=np.intp), distinct_count=distinct)


def invert_permutation(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def apply_permutation(data, perm):
    """Reorder every column of ``data`` by ``perm``"""
    return data.subset(perm)


def _numeric_column(frame, name):
    raw = frame[name]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() & raw.notna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: header line and 1-based numbering
        raise ParseError(
            f"Non-numeric value {raw.iloc[row]!r} in column '{name}' at row {row + 2}",
            row=row + 2,
            column=name,
        )
    return values


def load_csv(path, y_col, x_col, w_cols=(), cluster_col=None):
    """
    Load a comma-separated file with a header row

    Rows with a missing value in any selected column are dropped and the
    count is recorded in ``Dataset.drop_report``.

    Args:
        path: CSV file path
        y_col: Response column
        x_col: Regressor column
        w_cols: Covariate columns
        cluster_col: Optional cluster column

    Returns:
        Dataset: validated sample
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Data file does not exist: {path}")

    try:
        frame = pd.read_csv(
            path, sep=",", header=0, dtype=str, encoding="utf-8",
            skipinitialspace=True, keep_default_na=True,
        )
    except UnicodeDecodeError as e:
        raise DataError(f"{path.name} is not valid UTF-8 (byte offset {e.start})") from e
    except EmptyDataError as e:
        raise DataError(f"{path.name} is empty") from e
    except ParserError as e:
        line = re.search(r"line (\d+)", str(e))
        raise ParseError(
            f"Malformed CSV in {path.name}: {e}",
            row=int(line.group(1)) if line else None,
        ) from e
    frame = frame.apply(lambda col: col.map(lambda v: v.strip() if isinstance(v, str) else v))
    frame = frame.replace("", np.nan)

    w_cols = list(w_cols)
    selected = [y_col, x_col] + w_cols + ([cluster_col] if cluster_col else [])
    missing = [c for c in selected if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"Missing column(s) in {path.name}: {', '.join(missing)}")

    numeric = {name: _numeric_column(frame, name) for name in [y_col, x_col] + w_cols}
    table = pd.DataFrame(numeric)
    if cluster_col:
        table["__cluster__"] = frame[cluster_col]

    keep = table.notna().all(axis=1).to_numpy()
    dropped = int((~keep).sum())
    table = table[keep]

    if table.shape[0] == 0:
        raise DataError(f"No usable rows in {path.name} after dropping missing values")
    if dropped:
        logger.warning("Dropped %d of %d rows with missing values", dropped, keep.size)

    return Dataset.from_arrays(
        y=table[y_col].to_numpy(),
        x=table[x_col].to_numpy(),
        w=table[w_cols].to_numpy() if w_cols else None,
        cluster=table["__cluster__"].to_numpy() if cluster_col else None,
        w_names=tuple(w_cols),
        drop_report={'dropped': dropped, 'read': int(keep.size)},
    )
