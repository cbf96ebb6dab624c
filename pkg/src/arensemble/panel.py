"""Forecast panels: aligned member forecasts, targets and lead-time bookkeeping.

A panel holds ``T`` rows of ``m`` member forecasts ``X`` and the realized
targets ``y`` they try to predict.  Row ``t`` of ``X`` was issued ``lead_time``
steps before ``y[t]`` became known, so an online method predicting row ``t``
may only consume targets of rows ``<= t - lead_time``.  :class:`TargetFeed`
enforces that rule and can log every read for leakage audits.
"""

import csv
import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import LeakageError, PanelError
from .validation import check_forecasts, check_positive_int, check_series, check_targets


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ForecastPanel:
    """Immutable table of member forecasts and targets.

    Parameters
    ----------
    timestamps : array of int, shape (T,)
        Integer step indices, strictly increasing within each series.
    X : array, shape (T, m)
        Member forecasts in target units.
    y : array, shape (T,)
        Realized targets.
    members : tuple of str
        Member column names, in column order of ``X``.
    series : array, shape (T,), optional
        Event label per row (e.g. one storm per label).  Rows of one series
        must be contiguous.
    lead_time : int
        Steps between forecast issuance and target realization.
    """

    timestamps: np.ndarray
    X: np.ndarray
    y: np.ndarray
    members: tuple = ()
    series: np.ndarray = None
    lead_time: int = 1

    def __post_init__(self):
        X = check_forecasts(self.X)
        y = check_targets(self.y, X.shape[0])
        ts = np.asarray(self.timestamps)
        if ts.shape != y.shape:
            raise PanelError(f"timestamps have shape {ts.shape}, expected {y.shape}")
        if not np.issubdtype(ts.dtype, np.integer):
            if not np.all(np.mod(ts, 1) == 0):
                raise PanelError("timestamps must be integer step indices")
            ts = ts.astype(np.int64)
        series = check_series(self.series, X.shape[0])
        members = tuple(self.members) or tuple(f"m{j}" for j in range(X.shape[1]))
        if len(members) != X.shape[1]:
            raise PanelError(f"{len(members)} member names for {X.shape[1]} columns")
        check_positive_int(self.lead_time, "lead_time")
        _check_order(ts, series)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "series", None if series is None else _frozen(series))
        object.__setattr__(self, "members", members)

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_members(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n_rows

    @property
    def segments(self):
        """List of ``(start, stop)`` row ranges, one per contiguous series."""
        if self.series is None:
            return [(0, self.n_rows)]
        change = np.flatnonzero(self.series[1:] != self.series[:-1]) + 1
        bounds = [0, *change.tolist(), self.n_rows]
        return list(zip(bounds[:-1], bounds[1:]))

    def rows(self, start, stop):
        """Contiguous row slice as a new panel."""
        sl = slice(start, stop)
        return dataclasses.replace(
            self,
            timestamps=self.timestamps[sl],
            X=self.X[sl],
            y=self.y[sl],
            series=None if self.series is None else self.series[sl],
        )

    def with_values(self, X=None, y=None):
        return dataclasses.replace(
            self, X=self.X if X is None else X, y=self.y if y is None else y
        )

    def feed(self, recorder=None):
        """Lead-time gated access to this panel's targets."""
        return TargetFeed(self.y, self.lead_time, recorder=recorder)

    def to_csv(self, path=None, schema=None):
        """Write the panel in the schema read by :func:`load_panel`.

        Returns the CSV text when ``path`` is None.
        """
        schema = schema or PanelSchema()
        header = [schema.timestamp]
        if self.series is not None:
            header.append(schema.series or "series")
        header += list(self.members) + [schema.target]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for t in range(self.n_rows):
            row = [int(self.timestamps[t])]
            if self.series is not None:
                row.append(self.series[t])
            row += [repr(float(v)) for v in self.X[t]] + [repr(float(self.y[t]))]
            w.writerow(row)
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return path


def _check_order(ts, series):
    if ts.size < 2:
        return
    same = np.ones(ts.size - 1, dtype=bool) if series is None else series[1:] == series[:-1]
    bad = same & (np.diff(ts) <= 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1
        raise PanelError(
            f"timestamps not strictly increasing at row {row} "
            f"({ts[row - 1]} -> {ts[row]})",
            row=row,
        )
    if series is not None:
        change = np.flatnonzero(series[1:] != series[:-1]) + 1
        starts = series[np.r_[0, change]]
        labels, counts = np.unique(starts, return_counts=True)
        if (counts > 1).any():
            label = labels[counts > 1][0]
            raise PanelError(f"rows of series {label!r} are not contiguous")


def concat_panels(*panels):
    """Stack panels row-wise (e.g. train and validation splits)."""
    first = panels[0]
    series = None
    if first.series is not None:
        series = np.concatenate([p.series for p in panels])
    return ForecastPanel(
        timestamps=np.concatenate([p.timestamps for p in panels]),
        X=np.vstack([p.X for p in panels]),
        y=np.concatenate([p.y for p in panels]),
        members=first.members,
        series=series,
        lead_time=first.lead_time,
    )


@dataclass
class PanelSchema:
    """Column mapping for panel CSV files.

    ``members=None`` takes every column that is not the timestamp, target
    or series column, in file order.
    """

    timestamp: str = "timestamp"
    target: str = "target"
    members: list = None
    series: str = None


def load_panel(path, schema=None, lead_time=1):
    """Read a panel CSV (UTF-8, header row, ``.`` decimal point).

    Rows with missing or unparsable cells are rejected, never imputed.  The
    error names the 0-based data row (header excluded).
    """
    schema = schema or PanelSchema()
    with open(path, encoding="utf-8", newline="") as fh:
        return _parse_panel(csv.reader(fh), schema, lead_time)


def read_panel_text(text, schema=None, lead_time=1):
    return _parse_panel(csv.reader(io.StringIO(text)), schema or PanelSchema(), lead_time)


def _parse_panel(reader, schema, lead_time):
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PanelError("empty CSV file") from None
    index = {name: j for j, name in enumerate(header)}
    for name in (schema.timestamp, schema.target, schema.series):
        if name is not None and name not in index:
            raise PanelError(f"column {name!r} not found in header {header}")
    reserved = {schema.timestamp, schema.target, schema.series}
    members = schema.members or [h for h in header if h not in reserved]
    missing = [m for m in members if m not in index]
    if missing:
        raise PanelError(f"member columns {missing} not found in header")
    if not members:
        raise PanelError("no member forecast columns")

    ts, X, y, series = [], [], [], []
    for row_no, row in enumerate(reader):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelError(
                f"row {row_no}: expected {len(header)} fields, got {len(row)}", row=row_no
            )
        try:
            t = float(row[index[schema.timestamp]])
            vals = [float(row[index[m]]) for m in members]
            target = float(row[index[schema.target]])
        except ValueError as exc:
            raise PanelError(f"row {row_no}: {exc}", row=row_no) from None
        if t != int(t):
            raise PanelError(f"row {row_no}: timestamp {t} is not an integer step", row=row_no)
        if not (np.isfinite(vals).all() and np.isfinite(target)):
            raise PanelError(f"row {row_no}: missing or non-finite value", row=row_no)
        ts.append(int(t))
        X.append(vals)
        y.append(target)
        if schema.series is not None:
            series.append(row[index[schema.series]].strip())
    if not ts:
        raise PanelError("CSV has a header but no data rows")
    return ForecastPanel(
        timestamps=np.array(ts, dtype=np.int64),
        X=np.array(X, dtype=float),
        y=np.array(y, dtype=float),
        members=tuple(members),
        series=np.array(series) if schema.series is not None else None,
        lead_time=lead_time,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation fractions; the test split is the rest."""

    train_frac: float = 0.5
    val_frac: float = 0.25

    def __post_init__(self):
        if not (0 < self.train_frac < 1 and 0 < self.val_frac < 1):
            raise ValueError("train_frac and val_frac must lie in (0, 1)")
        if self.train_frac + self.val_frac >= 1:
            raise ValueError("train_frac + val_frac must be < 1")

    def boundaries(self, n_rows):
        """Row indices ``(b1, b2)`` where validation and test start."""
        b1 = int(np.floor(self.train_frac * n_rows + 0.5))
        b2 = int(np.floor((self.train_frac + self.val_frac) * n_rows + 0.5))
        return b1, b2


def split_chronological(panel, spec=None):
    """Split into contiguous (train, val, test) panels without shuffling."""
    spec = spec or SplitSpec()
    b1, b2 = spec.boundaries(panel.n_rows)
    sizes = (b1, b2 - b1, panel.n_rows - b2)
    if min(sizes) < 1:
        raise PanelError(f"split of {panel.n_rows} rows with {spec} leaves an empty part {sizes}")
    return panel.rows(0, b1), panel.rows(b1, b2), panel.rows(b2, panel.n_rows)


@dataclass(frozen=True)
class Standardizer:
    """Affine rescaling by the mean and sample std (ddof=1) of training targets.

    The same ``(mu, sigma)`` is applied to the targets and to every member
    column, so forecast errors scale by ``1/sigma`` only.
    """

    mu: float
    sigma: float

    @classmethod
    def fit(cls, y):
        y = check_targets(y)
        if y.size < 2:
            raise PanelError("need at least 2 targets to standardize")
        sigma = float(np.std(y, ddof=1))
        if not sigma > 0:
            raise PanelError("training targets are constant; cannot standardize")
        return cls(float(np.mean(y)), sigma)

    def transform(self, a):
        return (np.asarray(a, dtype=float) - self.mu) / self.sigma

    def inverse(self, a):
        return np.asarray(a, dtype=float) * self.sigma + self.mu

    def apply(self, panel):
        return panel.with_values(X=self.transform(panel.X), y=self.transform(panel.y))

    def invert(self, panel):
        return panel.with_values(X=self.inverse(panel.X), y=self.inverse(panel.y))

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma}


def fit_standardizer(train):
    """Standardizer from the targets of a training panel."""
    return Standardizer.fit(train.y)


@dataclass
class AccessLog:
    """Records every target read made through a :class:`TargetFeed`.

    ``phase`` is a free-form label set by the caller (the pipeline uses
    ``"select"``, ``"refit"``, ``"test"`` and ``"evaluate"``).
    """

    phase: str = ""
    entries: list = field(default_factory=list)

    def record(self, index, now):
        self.entries.append((self.phase, index, now))

    def indices(self, phase=None):
        return [i for p, i, _ in self.entries if phase is None or p == phase]


class TargetFeed:
    """Lead-time gated view of a target vector.

    ``reveal(s, now)`` returns ``y[s]`` only if it would be known when
    predicting row ``now``, i.e. ``s <= now - lead_time``.  Indices are
    relative to this feed; ``offset`` maps them to absolute rows for logging.
    """

    def __init__(self, y, lead_time=1, *, recorder=None, offset=0):
        self._y = np.asarray(y, dtype=float)
        self.lead_time = check_positive_int(lead_time, "lead_time")
        self.recorder = recorder
        self.offset = offset

    def __len__(self):
        return self._y.shape[0]

    def reveal(self, s, now):
        if s > now - self.lead_time:
            raise LeakageError(
                f"target of row {self.offset + s} requested while predicting row "
                f"{self.offset + now} with lead time {self.lead_time}"
            )
        if self.recorder is not None:
            self.recorder.record(self.offset + s, self.offset + now)
        return float(self._y[s])

    def window(self, start, stop):
        """Sub-feed over rows ``[start, stop)`` sharing the recorder."""
        return TargetFeed(
            self._y[start:stop], self.lead_time, recorder=self.recorder, offset=self.offset + start
        )

    def hindsight(self):
        """All targets at once (evaluation only); logged with ``now=None``."""
        if self.recorder is not None:
            for s in range(len(self)):
                self.recorder.record(self.offset + s, None)
        return self._y.copy()


class ScaledFeed(TargetFeed):
    """Gate-preserving view of another feed that standardizes revealed targets."""

    def __init__(self, feed, std):
        self._inner = feed
        self._std = std
        self.lead_time = feed.lead_time
        self.recorder = feed.recorder
        self.offset = feed.offset

    def __len__(self):
        return len(self._inner)

    def reveal(self, s, now):
        return float(self._std.transform(self._inner.reveal(s, now)))

    def window(self, start, stop):
        return ScaledFeed(self._inner.window(start, stop), self._std)

    def hindsight(self):
        return self._std.transform(self._inner.hindsight())


def as_feed(y, lead_time):
    if isinstance(y, TargetFeed):
        return y
    return TargetFeed(check_targets(y), lead_time)
