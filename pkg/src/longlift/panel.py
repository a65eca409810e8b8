"""Cohort panel construction from user-day event logs.

Users are split into cohorts by arm and entry day. The panel holds, for
every cohort and every in-window day, the sample mean of the metric and
the variance of that mean; it is the single input every estimator
downstream consumes. Two modes exist:

* ``metric``   -- the mean of the logged metric over users active that day.
* ``presence`` -- the fraction of the full cohort active that day (the
  empirical retention curve).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

ARM_TREATMENT = "treatment"
ARM_CONTROL = "control"
ARMS = (ARM_CONTROL, ARM_TREATMENT)

MODE_METRIC = "metric"
MODE_PRESENCE = "presence"
MODES = (MODE_METRIC, MODE_PRESENCE)

#: Sample variances below this are floored so a degenerate constant cohort
#: (common in presence mode with zero churn) cannot produce an infinite
#: inverse-variance weight downstream.
VARIANCE_FLOOR = 1e-12

EVENTS_HEADER = ["user_id", "arm", "entry_day", "day", "metric", "active"]
PANEL_HEADER = ["arm", "t0", "t", "n", "mean", "var_of_mean", "usable"]

_ARM_ALIASES = {
    "t": ARM_TREATMENT,
    "treatment": ARM_TREATMENT,
    "c": ARM_CONTROL,
    "control": ARM_CONTROL,
}
_ARM_SHORT = {ARM_TREATMENT: "T", ARM_CONTROL: "C"}


class PanelError(ValueError):
    """Raised when an event log violates the panel input contract."""


def canonical_arm(arm: str) -> str:
    try:
        return _ARM_ALIASES[str(arm).strip().lower()]
    except KeyError:
        raise PanelError(f"unknown arm {arm!r}: expected one of T, C, treatment, control") from None


@dataclass(frozen=True)
class UserRecord:
    """One user's arm, entry day and per-day observations.

    ``observations`` is a sequence of ``(day, metric, active)`` triples with
    at most one entry per day. An inactive day contributes nothing in metric
    mode and counts as absent in presence mode, exactly like a missing row.
    """

    user_id: str
    arm: str
    entry_day: int
    observations: Sequence[tuple[int, float, bool]] = ()


@dataclass(frozen=True)
class CohortCell:
    """Sample mean and variance-of-mean for one (arm, entry day, day) cell.

    ``var_of_mean`` is the floored sample variance divided by ``n``; cells
    with fewer than two contributing users are flagged unusable because the
    variance of the mean is undefined there.
    """

    arm: str
    t0: int
    t: int
    n: int
    mean: float
    var_of_mean: float
    usable: bool


class EventLog:
    """Columnar, immutable view of an event log.

    Users are stored in a canonical order (arm, entry day, user id) so that
    aggregation is independent of input record order and bootstrap weight
    vectors have a well-defined indexing. Only active observations are kept;
    an inactive row is equivalent to a missing one for every consumer.
    """

    __slots__ = (
        "T", "user_ids", "treated", "entry", "cohort_of_user",
        "r_user", "r_day", "r_val", "r_cohort", "n_users",
    )

    def __init__(self, T, user_ids, treated, entry, r_user, r_day, r_val):
        self.T = int(T)
        self.user_ids = tuple(user_ids)
        self.n_users = len(self.user_ids)
        self.treated = treated
        self.entry = entry
        self.cohort_of_user = entry + treated.astype(np.int64) * self.T
        self.r_user = r_user
        self.r_day = r_day
        self.r_val = r_val
        self.r_cohort = self.cohort_of_user[r_user]

    @classmethod
    def from_records(cls, records: Iterable[UserRecord], T: int) -> "EventLog":
        T = int(T)
        if T < 2:
            raise PanelError(f"experiment duration must be at least 2 days, got {T}")
        info: dict[str, tuple[str, int]] = {}
        obs: dict[str, dict[int, tuple[float, bool]]] = {}
        for rec in records:
            arm = canonical_arm(rec.arm)
            t0 = int(rec.entry_day)
            uid = str(rec.user_id)
            if not 0 <= t0 < T:
                raise PanelError(f"user {uid!r}: entry day {t0} outside [0, {T})")
            if uid in info:
                if info[uid] != (arm, t0):
                    raise PanelError(f"user {uid!r} appears with conflicting arm or entry day")
            else:
                info[uid] = (arm, t0)
                obs[uid] = {}
            for day, metric, active in rec.observations:
                day = int(day)  # sub-day timestamps truncate to the day index
                if not t0 <= day < T:
                    raise PanelError(f"user {uid!r}: observation day {day} outside [{t0}, {T})")
                if day in obs[uid]:
                    raise PanelError(f"duplicate observation for user {uid!r} on day {day}")
                m = float(metric)
                if not np.isfinite(m) or m < 0:
                    raise PanelError(f"user {uid!r}, day {day}: metric must be finite and >= 0, got {metric!r}")
                obs[uid][day] = (m, bool(active))
        if not info:
            raise PanelError("no user records: cannot build an empty cohort grid")

        order = sorted(info, key=lambda u: (info[u][0], info[u][1], u))
        index = {uid: i for i, uid in enumerate(order)}
        treated = np.array([info[u][0] == ARM_TREATMENT for u in order], dtype=bool)
        entry = np.array([info[u][1] for u in order], dtype=np.int64)

        r_user, r_day, r_val = [], [], []
        for uid in order:
            for day in sorted(obs[uid]):
                m, active = obs[uid][day]
                if active:
                    r_user.append(index[uid])
                    r_day.append(day)
                    r_val.append(m)
        return cls(
            T, order, treated, entry,
            np.asarray(r_user, dtype=np.int64),
            np.asarray(r_day, dtype=np.int64),
            np.asarray(r_val, dtype=np.float64),
        )

    def arm_indices(self, arm: str) -> np.ndarray:
        mask = self.treated if canonical_arm(arm) == ARM_TREATMENT else ~self.treated
        return np.flatnonzero(mask)

    def validate_weights(self, user_weights) -> np.ndarray:
        w = np.asarray(user_weights)
        if w.shape != (self.n_users,):
            raise PanelError(f"user_weights must have shape ({self.n_users},), got {w.shape}")
        if not np.issubdtype(w.dtype, np.integer) or (w < 0).any():
            raise PanelError("user_weights must be non-negative integer frequency counts")
        return w.astype(np.float64)

    def aggregate(self, mode: str = MODE_METRIC, user_weights=None) -> "CohortPanel":
        """Aggregate into a :class:`CohortPanel`.

        ``user_weights`` are optional integer frequency counts (one per user
        in canonical order); the result is identical to aggregating a log in
        which each user appears ``weight`` times, which is what bootstrap
        resampling needs.
        """
        if mode not in MODES:
            raise PanelError(f"unknown panel mode {mode!r}")
        T = self.T
        n_cells = 2 * T * T
        if user_weights is None:
            w_user = np.ones(self.n_users, dtype=np.float64)
        else:
            w_user = self.validate_weights(user_weights)
        r_w = w_user[self.r_user]
        r_cell = self.r_cohort * T + self.r_day

        act = np.bincount(r_cell, weights=r_w, minlength=n_cells)
        if mode == MODE_METRIC:
            n = act
            s1 = np.bincount(r_cell, weights=r_w * self.r_val, minlength=n_cells)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = s1 / n
            dev = self.r_val - mean[r_cell]
            ss = np.bincount(r_cell, weights=r_w * dev * dev, minlength=n_cells)
        else:
            cohort_w = np.bincount(self.cohort_of_user, weights=w_user, minlength=2 * T)
            n = np.repeat(cohort_w, T)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = act / n
            # 0/1 data: sum of squared deviations has a closed form
            ss = act * (1.0 - mean) ** 2 + (n - act) * mean ** 2

        with np.errstate(invalid="ignore", divide="ignore"):
            svar = np.maximum(ss / (n - 1.0), VARIANCE_FLOOR)
            var_of_mean = svar / n

        enrolled = np.bincount(self.cohort_of_user, minlength=2 * T)
        cells: dict[tuple[str, int, int], CohortCell] = {}
        for cohort in range(2 * T):
            if enrolled[cohort] == 0:
                continue
            arm = ARM_TREATMENT if cohort >= T else ARM_CONTROL
            t0 = cohort % T
            for t in range(t0, T):
                idx = cohort * T + t
                n_c = int(round(n[idx]))
                usable = n_c >= 2
                cells[(arm, t0, t)] = CohortCell(
                    arm=arm, t0=t0, t=t, n=n_c,
                    mean=float(mean[idx]) if n_c > 0 else float("nan"),
                    var_of_mean=float(var_of_mean[idx]) if usable else float("nan"),
                    usable=usable,
                )
        return CohortPanel(T=T, mode=mode, cells=cells, _log=self, _weights=w_user)

    def day_values(self, arm: str, t0: int, day: int, mode: str = MODE_METRIC):
        """Per-user values of cohort (arm, t0) on one day.

        Returns ``(values, available, weights)`` over the cohort's users.
        In metric mode ``available`` marks users active that day; in
        presence mode every enrolled user is available with a 0/1 value.
        """
        cidx = (canonical_arm(arm) == ARM_TREATMENT) * self.T + int(t0)
        users = np.flatnonzero(self.cohort_of_user == cidx)
        sel = (self.r_cohort == cidx) & (self.r_day == day)
        val = np.zeros(self.n_users)
        has = np.zeros(self.n_users, dtype=bool)
        val[self.r_user[sel]] = self.r_val[sel]
        has[self.r_user[sel]] = True
        if mode == MODE_PRESENCE:
            return has[users].astype(np.float64), np.ones(users.size, dtype=bool), users
        return val[users], has[users], users


@dataclass
class CohortPanel:
    """Grid of cohort cells for one mode, with the source log attached.

    ``cells`` maps ``(arm, t0, t)`` to :class:`CohortCell` on the triangular
    support ``t0 <= t < T``. The source log is kept privately so estimators
    that need user-level pairing (repeated-measure covariance) can reach it.
    """

    T: int
    mode: str
    cells: Mapping[tuple[str, int, int], CohortCell]
    _log: EventLog | None = field(default=None, repr=False, compare=False)
    _weights: np.ndarray | None = field(default=None, repr=False, compare=False)

    def get(self, arm: str, t0: int, t: int) -> CohortCell | None:
        return self.cells.get((arm, t0, t))

    def usable(self, arm: str, t0: int, t: int) -> CohortCell | None:
        cell = self.cells.get((arm, t0, t))
        return cell if cell is not None and cell.usable else None

    def baseline_mean_covariance(self, arm: str, t: int) -> float:
        """Covariance between the day-t and day-0 sample means of cohort t0=0.

        Estimated from users observed on both days (the cohorts share their
        sampling units across days, so repeated measures are correlated).
        Returns 0.0 when pairing is impossible.
        """
        if t == 0:
            cell = self.usable(arm, 0, 0)
            return cell.var_of_mean if cell is not None else 0.0
        if self._log is None:
            return 0.0
        c_t = self.usable(arm, 0, t)
        c_0 = self.usable(arm, 0, 0)
        if c_t is None or c_0 is None:
            return 0.0
        x, has_x, users = self._log.day_values(arm, 0, t, self.mode)
        y, has_y, _ = self._log.day_values(arm, 0, 0, self.mode)
        pair = has_x & has_y
        if not pair.any():
            return 0.0
        w = (self._weights if self._weights is not None else np.ones(self._log.n_users))[users][pair]
        n_pair = float(w.sum())
        if n_pair < 2:
            return 0.0
        x, y = x[pair], y[pair]
        mx = float((w * x).sum()) / n_pair
        my = float((w * y).sum()) / n_pair
        s_xy = float((w * (x - mx) * (y - my)).sum()) / (n_pair - 1.0)
        return n_pair * s_xy / (c_t.n * c_0.n)

    def to_csv(self, path) -> None:
        write_panel_csv(self, path)


def build_panel(records, T: int, mode: str = MODE_METRIC, user_weights=None) -> CohortPanel:
    """Aggregate user records (or an :class:`EventLog`) into a cohort panel."""
    log = as_event_log(records, T)
    return log.aggregate(mode, user_weights=user_weights)


def as_event_log(records, T: int | None = None) -> EventLog:
    if isinstance(records, EventLog):
        if T is not None and int(T) != records.T:
            raise PanelError(f"event log was built with T={records.T}, requested T={T}")
        return records
    if T is None:
        T = infer_duration(records)
    return EventLog.from_records(records, T)


def infer_duration(records: Iterable[UserRecord]) -> int:
    """Experiment duration implied by a record set: one past the last day seen."""
    last = -1
    for rec in records:
        last = max(last, int(rec.entry_day))
        for day, _, _ in rec.observations:
            last = max(last, int(day))
    if last < 0:
        raise PanelError("no user records: cannot infer experiment duration")
    return max(last + 1, 2)


def _fmt(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def read_events_csv(path) -> list[UserRecord]:
    """Read an event log CSV (``user_id,arm,entry_day,day,metric,active``).

    Malformed rows are rejected with their line number. Sub-day timestamps
    in the day columns are truncated to integer days.
    """
    by_user: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        if [h.strip() for h in header] != EVENTS_HEADER:
            raise PanelError(f"{path}, line 1: expected header {','.join(EVENTS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise PanelError(f"{path}, line {lineno}: expected 6 fields, got {len(row)}")
            uid, arm_raw, entry_raw, day_raw, metric_raw, active_raw = row
            try:
                arm = canonical_arm(arm_raw)
                entry = int(float(entry_raw))
                day = int(float(day_raw))
                metric = float(metric_raw)
            except (PanelError, ValueError) as exc:
                raise PanelError(f"{path}, line {lineno}: {exc}") from None
            active_raw = active_raw.strip()
            if active_raw not in ("0", "1"):
                raise PanelError(f"{path}, line {lineno}: active must be 0 or 1, got {active_raw!r}")
            rec = by_user.setdefault(uid, {"arm": arm, "entry": entry, "obs": []})
            rec["obs"].append((day, metric, active_raw == "1"))
    return [
        UserRecord(uid, rec["arm"], rec["entry"], tuple(sorted(rec["obs"])))
        for uid, rec in by_user.items()
    ]


def write_events_csv(records: Iterable[UserRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENTS_HEADER)
        for rec in records:
            arm = _ARM_SHORT[canonical_arm(rec.arm)]
            for day, metric, active in rec.observations:
                writer.writerow([rec.user_id, arm, rec.entry_day, day, _fmt(metric), int(active)])


def write_panel_csv(panel: CohortPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_HEADER)
        for key in sorted(panel.cells, key=lambda k: (_ARM_SHORT[k[0]], k[1], k[2])):
            cell = panel.cells[key]
            writer.writerow([
                _ARM_SHORT[cell.arm], cell.t0, cell.t, cell.n,
                _fmt(cell.mean), _fmt(cell.var_of_mean), int(cell.usable),
            ])
