"""Return and factor panels plus their CSV representations.

A panel is a time-by-asset matrix of per-period excess returns with optional
date and ticker labels. The CSV layout is: first column a date label
(ISO-8601 string) or integer index, header row of tickers, one row per
period, missing cells empty. Cleaned backtest panels may carry missing
cells; panels fed to estimators must be fully observed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError


@dataclass
class ReturnPanel:
    """T x N matrix of excess returns (rows = periods, columns = assets)."""

    values: np.ndarray
    dates: list | None = None
    tickers: list | None = None
    allow_missing: bool = field(default=False, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError(f"panel values must be 2-D, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DataError(f"panel must have T >= 1 and N >= 1, got {vals.shape}")
        if not self.allow_missing and not np.all(np.isfinite(vals)):
            raise DataError("panel contains non-finite entries")
        if self.allow_missing and np.any(np.isinf(vals)):
            raise DataError("panel contains infinite entries")
        if self.dates is not None and len(self.dates) != vals.shape[0]:
            raise DataError("date labels do not match the number of rows")
        if self.tickers is not None and len(self.tickers) != vals.shape[1]:
            raise DataError("tickers do not match the number of columns")
        self.values = vals

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def column_subset(self, indices) -> "ReturnPanel":
        idx = np.asarray(indices, dtype=np.intp)
        tickers = [self.tickers[i] for i in idx] if self.tickers is not None else None
        return ReturnPanel(self.values[:, idx], dates=self.dates, tickers=tickers,
                           allow_missing=self.allow_missing)


@dataclass
class FactorPanel:
    """T x K matrix of investable factor excess returns."""

    values: np.ndarray
    labels: list | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError(f"factor values must be 2-D, got shape {vals.shape}")
        if vals.shape[1] < 1:
            raise DataError("factor panel needs K >= 1 columns")
        if not np.all(np.isfinite(vals)):
            raise DataError("factor panel contains non-finite entries")
        if self.labels is not None and len(self.labels) != vals.shape[1]:
            raise DataError("factor labels do not match the number of columns")
        self.values = vals

    @property
    def n_factors(self) -> int:
        return self.values.shape[1]


def _frame_to_panel(frame: pd.DataFrame, allow_missing: bool) -> ReturnPanel:
    return ReturnPanel(
        frame.to_numpy(dtype=np.float64),
        dates=list(frame.index),
        tickers=[str(c) for c in frame.columns],
        allow_missing=allow_missing,
    )


def load_return_panel(path, allow_missing: bool = False) -> ReturnPanel:
    """Read a panel CSV (date column + ticker header) into a ReturnPanel."""
    frame = pd.read_csv(path, index_col=0)
    if frame.shape[1] < 1:
        raise DataError(f"{path}: no asset columns found")
    try:
        return _frame_to_panel(frame, allow_missing)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_factor_panel(path) -> FactorPanel:
    """Read a factor CSV (same layout as a return panel)."""
    frame = pd.read_csv(path, index_col=0)
    if frame.shape[1] < 1:
        raise DataError(f"{path}: no factor columns found")
    vals = frame.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise DataError(f"{path}: factor panel contains missing or non-finite cells")
    return FactorPanel(vals, labels=[str(c) for c in frame.columns])


def save_return_panel(panel: ReturnPanel, path) -> None:
    dates = panel.dates if panel.dates is not None else list(range(panel.n_periods))
    tickers = panel.tickers if panel.tickers is not None else [
        f"A{j}" for j in range(panel.n_assets)
    ]
    frame = pd.DataFrame(panel.values, index=dates, columns=tickers)
    frame.to_csv(path, index_label="date")
