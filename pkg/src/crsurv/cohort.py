"""Cohort ingestion and person-period expansion.

A cohort is a list of :class:`SubjectRecord`, one per individual, holding the
terminal period, the event code (0 = right censored, 1..R = competing events)
and the already-expanded covariate columns.  :func:`expand_person_period`
turns the cohort into the long format consumed by every likelihood routine.
"""

from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

COVARIATE_KINDS = ("binary", "categorical", "continuous")


class CohortError(ValueError):
    """Raised for malformed cohort files, schemas or expansion requests."""


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    terminal_time: int
    event: int
    covariates: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=float).reshape(-1)
        cov.setflags(write=False)
        object.__setattr__(self, "covariates", cov)
        if int(self.terminal_time) < 1:
            raise CohortError(f"subject {self.subject_id}: terminal_time must be >= 1")
        if int(self.event) < 0:
            raise CohortError(f"subject {self.subject_id}: negative event code")
        object.__setattr__(self, "terminal_time", int(self.terminal_time))
        object.__setattr__(self, "event", int(self.event))

    @property
    def censored(self) -> bool:
        return self.event == 0


@dataclass(frozen=True)
class CohortMeta:
    """Column bookkeeping for a cohort.

    ``covariate_names`` are the k* candidate covariates a model may include;
    ``column_groups`` maps each candidate to the design columns it owns (a
    categorical candidate owns one dummy per non-reference level).
    """

    event_labels: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()
    column_names: tuple[str, ...] = ()
    column_groups: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    covariate_kinds: Mapping[str, str] = field(default_factory=dict)
    levels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        owned = sorted(j for name in self.covariate_names for j in self.column_groups[name])
        if owned != list(range(len(self.column_names))):
            raise CohortError("column groups must partition the design columns")

    @property
    def n_events(self) -> int:
        return len(self.event_labels)

    @property
    def k(self) -> int:
        return len(self.column_names)

    @property
    def k_star(self) -> int:
        return len(self.covariate_names)

    @classmethod
    def plain(cls, n_events: int, k: int, names: Sequence[str] | None = None) -> "CohortMeta":
        """Metadata where every design column is its own candidate covariate."""
        names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(k))
        if len(names) != k:
            raise CohortError("number of names must equal k")
        return cls(
            event_labels=tuple(f"event{r + 1}" for r in range(n_events)),
            covariate_names=names,
            column_names=names,
            column_groups={name: (j,) for j, name in enumerate(names)},
            covariate_kinds={name: "continuous" for name in names},
        )

    def columns_for(self, mask: Sequence[bool] | None) -> np.ndarray:
        """Design-column indices selected by a candidate-covariate mask."""
        if mask is None:
            return np.arange(self.k)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.k_star,):
            raise CohortError(f"mask length {mask.size} != k* = {self.k_star}")
        cols = [j for name, keep in zip(self.covariate_names, mask) if keep
                for j in self.column_groups[name]]
        return np.array(sorted(cols), dtype=int)


def load_schema(path: str | Path) -> CohortMeta:
    """Read a schema file.

    The file is INI-style key/value text::

        [events]
        1 = withdrawal
        2 = expulsion

        [covariates]
        female = binary
        school = categorical: public, private, subsidized
        age = continuous

    Event codes must be 1..R without gaps.  The first categorical level is the
    reference cell and gets no dummy column.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise CohortError(f"{path}: {exc}") from exc
    if not parser.has_section("events"):
        raise CohortError(f"{path}: missing [events] section")

    events = {}
    for code, label in parser.items("events"):
        try:
            events[int(code)] = label.strip()
        except ValueError:
            raise CohortError(f"{path}: event code {code!r} is not an integer") from None
    if sorted(events) != list(range(1, len(events) + 1)):
        raise CohortError(f"{path}: event codes must be 1..R")

    names, kinds, levels, column_names, groups = [], {}, {}, [], {}
    if parser.has_section("covariates"):
        for name, spec in parser.items("covariates"):
            kind, _, rest = spec.partition(":")
            kind = kind.strip().lower()
            if kind not in COVARIATE_KINDS:
                raise CohortError(f"{path}: covariate {name!r} has unknown type {kind!r}")
            names.append(name)
            kinds[name] = kind
            if kind == "categorical":
                lv = tuple(s.strip() for s in rest.split(",") if s.strip())
                if len(lv) < 2:
                    raise CohortError(f"{path}: categorical {name!r} needs >= 2 levels")
                levels[name] = lv
                cols = [f"{name}:{level}" for level in lv[1:]]
            else:
                cols = [name]
            groups[name] = tuple(range(len(column_names), len(column_names) + len(cols)))
            column_names.extend(cols)

    return CohortMeta(
        event_labels=tuple(events[r] for r in sorted(events)),
        covariate_names=tuple(names),
        column_names=tuple(column_names),
        column_groups=groups,
        covariate_kinds=kinds,
        levels=levels,
    )


def _encode_covariate(meta: CohortMeta, name: str, raw: str, lineno: int) -> list[float]:
    raw = raw.strip()
    if raw == "" or raw.upper() in ("NA", "NAN"):
        raise CohortError(f"line {lineno}: missing value for covariate {name!r}")
    kind = meta.covariate_kinds[name]
    if kind == "categorical":
        lv = meta.levels[name]
        if raw not in lv:
            raise CohortError(f"line {lineno}: unknown level {raw!r} for {name!r}")
        return [1.0 if raw == level else 0.0 for level in lv[1:]]
    try:
        value = float(raw)
    except ValueError:
        raise CohortError(f"line {lineno}: non-numeric value {raw!r} for {name!r}") from None
    if not np.isfinite(value):
        raise CohortError(f"line {lineno}: missing value for covariate {name!r}")
    if kind == "binary" and value not in (0.0, 1.0):
        raise CohortError(f"line {lineno}: binary covariate {name!r} must be 0 or 1")
    return [value]


def load_cohort(path: str | Path, schema: CohortMeta) -> list[SubjectRecord]:
    """Parse and validate a cohort CSV against ``schema``.

    Lines starting with ``#`` are metadata and skipped.  Rows with a missing
    covariate are rejected (complete cases only); errors name the file line.
    """
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        numbered = [(i, line) for i, line in enumerate(fh, start=1) if not line.startswith("#")]
    reader = csv.DictReader([line for _, line in numbered])
    if reader.fieldnames is None:
        raise CohortError(f"{path}: empty cohort")
    required = ["subject_id", "terminal_time", "event", *schema.covariate_names]
    missing = [c for c in required if c not in reader.fieldnames]
    if missing:
        raise CohortError(f"{path}: missing columns {missing}")
    for row in reader:
        lineno = numbered[reader.line_num - 1][0]
        if None in row or any(v is None for v in row.values()):
            raise CohortError(f"line {lineno}: malformed row (wrong field count)")
        try:
            t = int(row["terminal_time"])
            event = int(row["event"])
        except ValueError:
            raise CohortError(f"line {lineno}: malformed row") from None
        if t < 1:
            raise CohortError(f"line {lineno}: terminal_time must be >= 1")
        if not 0 <= event <= schema.n_events:
            raise CohortError(f"line {lineno}: unknown event code {event}")
        cov = []
        for name in schema.covariate_names:
            cov.extend(_encode_covariate(schema, name, row[name], lineno))
        records.append(SubjectRecord(row["subject_id"], t, event, np.array(cov)))
    if not records:
        raise CohortError(f"{path}: empty cohort")
    counts = event_counts(records, schema.n_events)
    logger.info("loaded %d subjects; censored=%d; events=%s",
                len(records), counts[0], dict(zip(schema.event_labels, counts[1:])))
    return records


def event_counts(records: Sequence[SubjectRecord], n_events: int) -> np.ndarray:
    """Counts per outcome code 0..R (index 0 is censoring)."""
    return np.bincount([rec.event for rec in records], minlength=n_events + 1)


@dataclass(frozen=True)
class PersonPeriodFrame:
    """Long-format data: one row per subject and period at risk.

    ``design`` has ``t0 + k`` columns: one indicator per baseline period
    (the first is the cause-specific intercept, the last covers every period
    from ``t0`` on) followed by the selected covariate columns.
    """

    subject: np.ndarray
    period: np.ndarray
    outcome: np.ndarray
    design: np.ndarray
    covariates: np.ndarray
    t0: int
    n_events: int
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("subject", "period", "outcome", "design", "covariates"):
            getattr(self, name).setflags(write=False)

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_rows(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_subjects(self) -> int:
        return self.covariates.shape[0]

    @property
    def period_index(self) -> np.ndarray:
        """Collapsed period (1..t0) of each row."""
        return np.minimum(self.period, self.t0)

    def xtx(self) -> np.ndarray:
        """Subject-level cross-product X'X of the selected covariates."""
        return self.covariates.T @ self.covariates

    def terminal(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (terminal_time, event) per subject."""
        n = self.n_subjects
        times = np.zeros(n, dtype=int)
        np.maximum.at(times, self.subject, self.period)
        events = np.zeros(n, dtype=int)
        last = self.period == times[self.subject]
        events[self.subject[last]] = self.outcome[last]
        return times, events


def period_design(periods: np.ndarray, t0: int) -> np.ndarray:
    """Indicator columns for the baseline periods, collapsing t >= t0."""
    idx = np.minimum(np.asarray(periods), t0) - 1
    out = np.zeros((idx.size, t0))
    out[np.arange(idx.size), idx] = 1.0
    return out


def expand_person_period(
    records: Sequence[SubjectRecord],
    meta: CohortMeta,
    t0: int = 16,
    mask: Sequence[bool] | None = None,
) -> PersonPeriodFrame:
    """Expand subjects into person-period rows.

    Subject i contributes rows for periods 1..t_i; the outcome is 0 before
    t_i and the subject's event code at t_i.  Periods beyond ``t0`` keep their
    own row but share the terminal period indicator.
    """
    if t0 < 2:
        raise CohortError("t0 must be >= 2")
    cols = meta.columns_for(mask)
    n = len(records)
    if n:
        x_all = np.vstack([rec.covariates for rec in records]).reshape(n, -1)
        if x_all.shape[1] != meta.k:
            raise CohortError(f"covariate length {x_all.shape[1]} != k = {meta.k}")
    else:
        x_all = np.zeros((0, meta.k))
    for rec in records:
        if rec.event > meta.n_events:
            raise CohortError(f"subject {rec.subject_id}: unknown event code {rec.event}")
    x = np.ascontiguousarray(x_all[:, cols])

    times = np.array([rec.terminal_time for rec in records], dtype=int)
    events = np.array([rec.event for rec in records], dtype=int)
    subject = np.repeat(np.arange(n), times)
    starts = np.cumsum(times) - times
    period = np.arange(subject.size) - np.repeat(starts, times) + 1
    outcome = np.zeros(subject.size, dtype=int)
    outcome[starts + times - 1] = events
    design = np.hstack([period_design(period, t0), x[subject]])
    names = tuple(meta.column_names[j] for j in cols)
    return PersonPeriodFrame(subject, period, outcome, design, x, t0, meta.n_events, names)


@dataclass(frozen=True)
class SeparationCell:
    event: int
    period: int
    at_risk: int


def detect_separation(frame: PersonPeriodFrame) -> list[SeparationCell]:
    """List (event, collapsed period) cells with rows at risk but no events.

    Informational only; such cells push the maximum-likelihood period effect
    to minus infinity, which the heavy-tailed prior handles.
    """
    pidx = frame.period_index
    at_risk = np.bincount(pidx, minlength=frame.t0 + 1)
    cells = []
    for r in range(1, frame.n_events + 1):
        hits = np.bincount(pidx[frame.outcome == r], minlength=frame.t0 + 1)
        for t in range(1, frame.t0 + 1):
            if at_risk[t] > 0 and hits[t] == 0:
                cells.append(SeparationCell(r, t, int(at_risk[t])))
    return cells
