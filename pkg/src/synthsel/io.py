"""Panel ingestion, preprocessing and report serialization.

Input format: CSV with a header whose first column is ``time`` and whose
remaining columns are unit names; one column is designated the treated
unit.  The treatment period names the first post-treatment row.  An
optional covariate CSV uses the same layout with covariate names in the
first column and one row per covariate.

Reports are UTF-8 JSON with a ``schema_version`` field; tabular artifacts
(fitted paths, effect paths, score curves, benchmark tables) are written
as plain CSV for plotting.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PanelParseError
from .panel import PanelDataset
from .simulation import BenchmarkReport

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    """One command's resolved configuration, echoed into every report."""

    input: str | None = None
    treated: str | None = None
    treatment_period: str | None = None
    covariates: str | None = None
    estimator: str | None = None
    lam: float | None = None
    m: int | None = None
    v: str | None = None
    method: str | None = None
    grid: str | None = None
    m_grid: str | None = None
    ma_window: int = 1
    demean: bool = False
    seed: int | None = None
    output: str | None = None

    def __post_init__(self):
        if self.ma_window < 1:
            raise ConfigurationError("moving-average window must be >= 1")

    def as_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


@dataclass(frozen=True)
class LoadedPanel:
    """Arrays plus the label metadata needed for readable reports."""

    dataset: PanelDataset
    treated: str
    donor_names: tuple[str, ...]
    pre_times: tuple[str, ...]
    post_times: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()


def _read_rows(path: str) -> list[list[str]]:
    with open(path, "r", encoding="utf-8-sig", newline="") as handle:
        return [row for row in csv.reader(handle) if row and any(cell.strip() for cell in row)]


def _parse_value(cell: str, row: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise PanelParseError(f"non-numeric cell {cell!r}", row=row, column=column)


def load_panel(
    path: str,
    treated: str,
    treatment_period: str,
    covariates_path: str | None = None,
) -> LoadedPanel:
    """Read an outcome panel, split it at the treatment period, and attach
    optional covariates."""
    rows = _read_rows(path)
    if not rows:
        raise PanelParseError("empty input file", row=0)
    header = [cell.strip() for cell in rows[0]]
    if not header or header[0].lower() != "time":
        raise PanelParseError("first header column must be 'time'", row=1, column=header[0] if header else "")
    units = header[1:]
    if treated not in units:
        raise PanelParseError(f"treated column {treated!r} not found", column=treated)
    width = len(header)
    times: list[str] = []
    values: list[list[float]] = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise PanelParseError(
                f"ragged row: expected {width} cells, found {len(row)}", row=i
            )
        times.append(row[0].strip())
        values.append(
            [_parse_value(cell, i, header[j + 1]) for j, cell in enumerate(row[1:])]
        )
    if treatment_period not in times:
        raise PanelParseError(f"treatment period {treatment_period!r} not in the time column")
    cut = times.index(treatment_period)
    if cut < 2:
        raise PanelParseError(
            f"need at least 2 pre-treatment periods before {treatment_period!r}"
        )
    mat = np.asarray(values, dtype=float)
    t_col = units.index(treated)
    donor_cols = [j for j in range(len(units)) if j != t_col]
    donor_names = tuple(units[j] for j in donor_cols)

    z = d = None
    covariate_names: tuple[str, ...] = ()
    if covariates_path is not None:
        cov_rows = _read_rows(covariates_path)
        if not cov_rows:
            raise PanelParseError("empty covariate file", row=0)
        cov_header = [cell.strip() for cell in cov_rows[0]]
        if cov_header[1:] != units:
            raise PanelParseError(
                "covariate file units must match the outcome file units in order"
            )
        names = []
        zs = []
        ds = []
        for i, row in enumerate(cov_rows[1:], start=2):
            if len(row) != width:
                raise PanelParseError(
                    f"ragged covariate row: expected {width} cells, found {len(row)}", row=i
                )
            names.append(row[0].strip())
            vals = [_parse_value(cell, i, cov_header[j + 1]) for j, cell in enumerate(row[1:])]
            zs.append(vals[t_col])
            ds.append([vals[j] for j in donor_cols])
        covariate_names = tuple(names)
        z = np.asarray(zs, dtype=float)
        d = np.asarray(ds, dtype=float)

    has_post = cut < len(times)
    dataset = PanelDataset(
        y=mat[:cut, t_col],
        x=mat[:cut][:, donor_cols],
        z=z,
        d=d,
        post_y=mat[cut:, t_col] if has_post and cut < mat.shape[0] else None,
        post_x=mat[cut:][:, donor_cols] if has_post and cut < mat.shape[0] else None,
    )
    return LoadedPanel(
        dataset=dataset,
        treated=treated,
        donor_names=donor_names,
        pre_times=tuple(times[:cut]),
        post_times=tuple(times[cut:]),
        covariate_names=covariate_names,
    )


def moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` periods are
    dropped by the caller."""
    if window < 1:
        raise ConfigurationError("moving-average window must be >= 1")
    series = np.asarray(series, dtype=float)
    if window == 1:
        return series.copy()
    kernel = np.full(window, 1.0 / window)
    out = np.convolve(series, kernel, mode="full")[window - 1 : series.shape[0]]
    return out


def preprocess(panel: PanelDataset, ma_window: int = 1, demean: bool = False) -> PanelDataset:
    """Trailing moving average plus pre-treatment-mean removal.

    The filter is backward looking and the means come from pre-treatment
    periods only, so no post-treatment information leaks across the
    boundary.  The first ``ma_window - 1`` pre-treatment periods are
    dropped; post-period filtering reuses the trailing pre-period values.
    """
    if ma_window < 1:
        raise ConfigurationError("moving-average window must be >= 1")
    if ma_window > panel.n:
        raise ConfigurationError(
            f"moving-average window {ma_window} exceeds the {panel.n} pre-treatment periods"
        )
    y, x = panel.y, panel.x
    post_y, post_x = panel.post_y, panel.post_x
    if ma_window > 1:
        full_y = y if post_y is None else np.concatenate([y, post_y])
        full_x = x if post_x is None else np.vstack([x, post_x])
        filt_y = moving_average(full_y, ma_window)
        filt_x = np.column_stack(
            [moving_average(full_x[:, j], ma_window) for j in range(full_x.shape[1])]
        )
        n_pre = panel.n - (ma_window - 1)
        y, x = filt_y[:n_pre], filt_x[:n_pre]
        if post_y is not None:
            post_y, post_x = filt_y[n_pre:], filt_x[n_pre:]
    if demean:
        y_mean = y.mean()
        x_mean = x.mean(axis=0)
        y = y - y_mean
        x = x - x_mean
        if post_y is not None:
            post_y = post_y - y_mean
            post_x = post_x - x_mean
    return PanelDataset(y=y, x=x, z=panel.z, d=panel.d, post_y=post_y, post_x=post_x)


def preprocess_loaded(loaded: LoadedPanel, ma_window: int = 1, demean: bool = False) -> LoadedPanel:
    """Preprocess and keep the time labels aligned with the dropped periods."""
    dataset = preprocess(loaded.dataset, ma_window=ma_window, demean=demean)
    return LoadedPanel(
        dataset=dataset,
        treated=loaded.treated,
        donor_names=loaded.donor_names,
        pre_times=loaded.pre_times[ma_window - 1 :],
        post_times=loaded.post_times,
        covariate_names=loaded.covariate_names,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def to_jsonable(value):
    """Recursively convert numpy containers into plain JSON values."""
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(dataclasses.asdict(value))
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def render_report(command: str, config: dict, results: dict) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": to_jsonable(config),
        "results": to_jsonable(results),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report(path: str | None, command: str, config: dict, results: dict) -> str:
    text = render_report(command, config, results)
    if path:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    return text


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([to_jsonable(cell) for cell in row])


def benchmark_csv_text(report: BenchmarkReport) -> str:
    """Benchmark table as CSV: one row per method, fixed column order."""
    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        [
            "method",
            "mse_tau1",
            "mse_tau12",
            "mse_lambda",
            "mse_risk_raw",
            "mse_risk_per_n",
            "mean_rank_corr",
        ]
    )
    for row in report.methods:
        writer.writerow(
            [
                row.method,
                _fmt(row.mse_tau1),
                _fmt(row.mse_tau12),
                _fmt(row.mse_lambda),
                _fmt(row.mse_risk_raw),
                _fmt(row.mse_risk_per_n),
                _fmt(row.mean_rank_corr),
            ]
        )
    return buf.getvalue()


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_panel_csv(path: str, loaded: LoadedPanel) -> None:
    """Round-trippable outcome panel (pre and post periods concatenated)."""
    ds = loaded.dataset
    times = list(loaded.pre_times) + list(loaded.post_times)
    y = ds.y if ds.post_y is None else np.concatenate([ds.y, ds.post_y])
    x = ds.x if ds.post_x is None else np.vstack([ds.x, ds.post_x])
    header = ["time", loaded.treated, *loaded.donor_names]
    rows = [[times[i], repr(float(y[i])), *(repr(float(v)) for v in x[i])] for i in range(len(times))]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
