"""Implicit calibration from mouse clicks.

Usage logs are replayed offline: press/release pairs become click
opportunities, three independent filters (application context, press
duration, screen-corner proximity) discard unreliable ones, and the
survivors yield capture timestamps at the webcam frame rate.

Log file format: one event per line, comma separated, ``#`` comments and
blank lines ignored.  Times are seconds, positions are screen pixels::

    t,press,x,y
    t,release,x,y
    t,context,label
    t,gaze,x,y
    t,frame
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import ScreenModel, px_distance_cm

EVENT_KINDS = ("press", "release", "context", "gaze", "frame")
MAX_GAZE_GAP_S = 0.05
_EPS = 1e-9


class AppContext(str, Enum):
    FILE_MANAGING = "file_managing"
    BROWSING = "browsing"
    TEXT_EDITING = "text_editing"
    VIDEO = "video"
    GAMING = "gaming"
    OTHER = "other"


class LogFormatError(ValueError):
    pass


class UnsortedLogError(ValueError):
    def __init__(self, index: int, line: int | None = None):
        where = f"line {line}" if line is not None else f"event {index}"
        super().__init__(f"unsorted: {where} goes back in time")
        self.index = index
        self.line = line


class EmptyGazeStreamError(ValueError):
    pass


@dataclass(frozen=True)
class UsageEvent:
    t: float
    kind: str
    cursor: tuple[float, float] | None = None
    context: AppContext | None = None
    gaze_pt: tuple[float, float] | None = None
    line: int | None = None     # source line, for diagnostics


@dataclass(frozen=True)
class ClickOpportunity:
    press_t: float
    release_t: float
    cursor: tuple[float, float]     # press-time cursor, used as the label
    context: AppContext
    id: int = 0

    @property
    def duration(self) -> float:
        return self.release_t - self.press_t


@dataclass(frozen=True)
class FilterCriteria:
    allowed_contexts: frozenset = frozenset(
        {AppContext.FILE_MANAGING, AppContext.BROWSING, AppContext.TEXT_EDITING})
    max_duration_s: float = 0.1
    corner_margin_px: float = 100.0
    frame_rate_hz: float = 30.0
    post_release_s: float = 0.2
    corner_metric: str = "euclidean"    # or "chebyshev"

    def __post_init__(self):
        object.__setattr__(self, "allowed_contexts",
                           frozenset(AppContext(c) for c in self.allowed_contexts))
        if not self.allowed_contexts:
            raise ValueError("allowed_contexts must be non-empty")
        for name in ("max_duration_s", "corner_margin_px", "frame_rate_hz", "post_release_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.corner_metric not in ("euclidean", "chebyshev"):
            raise ValueError("corner_metric must be 'euclidean' or 'chebyshev'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["allowed_contexts"] = sorted(c.value for c in self.allowed_contexts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FilterCriteria":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "FilterCriteria":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AlignedClickSample:
    capture_t: float
    cursor: tuple[float, float]
    opportunity_id: int
    phase: str      # "press_window" | "post_release"


# ---------------------------------------------------------------------------
# log io


def _floats(row, n, lineno):
    try:
        vals = tuple(float(v) for v in row[:n])
    except ValueError as exc:
        raise LogFormatError(f"line {lineno}: {exc}") from None
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise LogFormatError(f"line {lineno}: expected {n} finite numbers")
    return vals


def parse_event_rows(rows) -> list[UsageEvent]:
    events = []
    for lineno, row in rows:
        row = [c.strip() for c in row]
        if len(row) < 2:
            raise LogFormatError(f"line {lineno}: expected 't,kind,...'")
        (t,) = _floats(row[:1], 1, lineno)
        kind = row[1]
        rest = row[2:]
        if kind in ("press", "release", "gaze"):
            if len(rest) != 2:
                raise LogFormatError(f"line {lineno}: {kind} needs x,y")
            xy = _floats(rest, 2, lineno)
            if kind == "gaze":
                events.append(UsageEvent(t, kind, gaze_pt=xy, line=lineno))
            else:
                events.append(UsageEvent(t, kind, cursor=xy, line=lineno))
        elif kind == "context":
            if len(rest) != 1:
                raise LogFormatError(f"line {lineno}: context needs a label")
            try:
                ctx = AppContext(rest[0])
            except ValueError:
                raise LogFormatError(f"line {lineno}: unknown context {rest[0]!r}") from None
            events.append(UsageEvent(t, kind, context=ctx, line=lineno))
        elif kind == "frame":
            events.append(UsageEvent(t, kind, line=lineno))
        else:
            raise LogFormatError(f"line {lineno}: unknown event kind {kind!r}")
    return events


def _data_rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            yield lineno, row


def read_log(path) -> list[UsageEvent]:
    return parse_event_rows(_data_rows(path))


def write_log(events, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for e in events:
            if e.kind in ("press", "release"):
                w.writerow([repr(e.t), e.kind, repr(e.cursor[0]), repr(e.cursor[1])])
            elif e.kind == "gaze":
                w.writerow([repr(e.t), e.kind, repr(e.gaze_pt[0]), repr(e.gaze_pt[1])])
            elif e.kind == "context":
                w.writerow([repr(e.t), e.kind, e.context.value])
            else:
                w.writerow([repr(e.t), e.kind])


def read_gaze(path) -> tuple[np.ndarray, np.ndarray]:
    """Gaze file: ``t,x,y`` per line."""
    ts, pts = [], []
    for lineno, row in _data_rows(path):
        if len(row) != 3:
            raise LogFormatError(f"line {lineno}: expected t,x,y")
        t, x, y = _floats([c.strip() for c in row], 3, lineno)
        ts.append(t)
        pts.append((x, y))
    return np.asarray(ts, dtype=float), np.asarray(pts, dtype=float).reshape(-1, 2)


def gaze_from_events(events) -> tuple[np.ndarray, np.ndarray]:
    g = [e for e in events if e.kind == "gaze"]
    return (np.array([e.t for e in g], dtype=float),
            np.array([e.gaze_pt for e in g], dtype=float).reshape(-1, 2))


def check_sorted(events) -> None:
    for i in range(1, len(events)):
        if events[i].t < events[i - 1].t:
            raise UnsortedLogError(i, events[i].line)


# ---------------------------------------------------------------------------
# pipeline


def detect_clicks(log) -> list[ClickOpportunity]:
    """Pair each press with the release that follows it; a press followed by
    another press before any release is dropped.  The active context is the
    most recent context event (``other`` before the first one)."""
    check_sorted(log)
    ctx = AppContext.OTHER
    pending = None
    out = []
    for e in log:
        if e.kind == "context":
            ctx = e.context
        elif e.kind == "press":
            pending = (e, ctx)
        elif e.kind == "release" and pending is not None:
            press, pctx = pending
            out.append(ClickOpportunity(press.t, e.t, press.cursor, pctx, id=len(out)))
            pending = None
    return out


def keep_context(opp, criteria) -> bool:
    return opp.context in criteria.allowed_contexts


def keep_duration(opp, criteria) -> bool:
    return opp.duration <= criteria.max_duration_s + _EPS


def corner_distance(cursor, screen_res, metric: str = "euclidean") -> float:
    w, h = screen_res
    x, y = cursor
    corners = ((0.0, 0.0), (w, 0.0), (0.0, h), (w, h))
    if metric == "chebyshev":
        return min(max(abs(x - cx), abs(y - cy)) for cx, cy in corners)
    return min(math.hypot(x - cx, y - cy) for cx, cy in corners)


def keep_location(opp, criteria, screen_res) -> bool:
    return corner_distance(opp.cursor, screen_res, criteria.corner_metric) >= criteria.corner_margin_px


def filter_context(opps, criteria: FilterCriteria) -> list[ClickOpportunity]:
    return [o for o in opps if keep_context(o, criteria)]


def filter_duration(opps, criteria: FilterCriteria) -> list[ClickOpportunity]:
    return [o for o in opps if keep_duration(o, criteria)]


def filter_location(opps, criteria: FilterCriteria, screen_res=(1920, 1080)) -> list[ClickOpportunity]:
    return [o for o in opps if keep_location(o, criteria, screen_res)]


def run_stages(opps, criteria: FilterCriteria, screen_res=(1920, 1080), order: str = "ABC") -> dict:
    """Apply the filters in ``order``; returns the opportunity list after each stage."""
    steps = {"A": lambda xs: filter_context(xs, criteria),
             "B": lambda xs: filter_duration(xs, criteria),
             "C": lambda xs: filter_location(xs, criteria, screen_res)}
    if sorted(order) != ["A", "B", "C"]:
        raise ValueError("order must be a permutation of 'ABC'")
    stages = {"raw": list(opps)}
    cur = stages["raw"]
    for s in order:
        cur = steps[s](cur)
        stages[s] = cur
    return stages


def press_window_count(duration: float, criteria: FilterCriteria) -> int:
    return int(math.floor(min(duration, criteria.max_duration_s) * criteria.frame_rate_hz + _EPS)) + 1


def extract_samples(opp: ClickOpportunity, criteria: FilterCriteria = FilterCriteria()) -> list[AlignedClickSample]:
    dt = 1.0 / criteria.frame_rate_hz
    out = [AlignedClickSample(opp.press_t + k * dt, opp.cursor, opp.id, "press_window")
           for k in range(press_window_count(opp.duration, criteria))]
    n_post = int(math.floor(criteria.post_release_s * criteria.frame_rate_hz + _EPS))
    out += [AlignedClickSample(opp.release_t + k * dt, opp.cursor, opp.id, "post_release")
            for k in range(1, n_post + 1)]
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class AlignmentReport:
    stage_counts: dict                      # raw, A, B, C
    stage_mean_error_cm: dict               # mean click error over each stage's survivors
    context_mean_error_cm: dict             # over all raw opportunities, by context
    context_counts: dict
    samples_per_click: float
    samples_per_minute: float
    n_samples: int
    duration_s: float
    samples: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        return d

    def context_table(self) -> str:
        lines = ["context,clicks,mean_error_cm"]
        for ctx in AppContext:
            n = self.context_counts.get(ctx.value, 0)
            err = self.context_mean_error_cm.get(ctx.value)
            lines.append(f"{ctx.value},{n},{'' if err is None else f'{err:.6f}'}")
        return "\n".join(lines) + "\n"

    def stage_table(self) -> str:
        lines = ["stage,count,mean_error_cm"]
        for s in ("raw", "A", "B", "C"):
            err = self.stage_mean_error_cm.get(s)
            lines.append(f"{s},{self.stage_counts[s]},{'' if err is None else f'{err:.6f}'}")
        return "\n".join(lines) + "\n"


def click_errors_cm(opps, gaze_t: np.ndarray, gaze_xy: np.ndarray, screen: ScreenModel,
                    max_gap_s: float = MAX_GAZE_GAP_S) -> dict[int, float]:
    """Cursor-to-gaze distance per click, using the gaze sample nearest in time to
    the press; clicks with no gaze sample within ``max_gap_s`` are omitted."""
    out = {}
    if len(gaze_t) == 0:
        return out
    order = np.argsort(gaze_t, kind="stable")
    gt, gxy = gaze_t[order], gaze_xy[order]
    for o in opps:
        j = int(np.searchsorted(gt, o.press_t))
        cands = [k for k in (j - 1, j) if 0 <= k < len(gt)]
        k = min(cands, key=lambda c: (abs(gt[c] - o.press_t), c))
        if abs(gt[k] - o.press_t) <= max_gap_s + _EPS:
            out[o.id] = float(px_distance_cm(screen, np.asarray(o.cursor, float), gxy[k]))
    return out


def _mean(vals):
    return float(np.mean(vals)) if len(vals) else None


def alignment_report(opps, gaze_stream, screen: ScreenModel = ScreenModel(),
                     criteria: FilterCriteria = FilterCriteria(),
                     duration_s: float | None = None) -> AlignmentReport:
    """Run the filters over raw ``opps`` and aggregate alignment statistics.

    ``gaze_stream`` is a ``(times, points)`` pair.  An empty stream is an
    error unless there is nothing to align.
    """
    gaze_t, gaze_xy = (np.asarray(a, dtype=float) for a in gaze_stream)
    gaze_xy = gaze_xy.reshape(-1, 2)
    opps = list(opps)
    if len(gaze_t) == 0 and opps:
        raise EmptyGazeStreamError("gaze stream is empty")
    stages = run_stages(opps, criteria, (screen.width_px, screen.height_px))
    errs = click_errors_cm(opps, gaze_t, gaze_xy, screen)

    stage_err = {s: _mean([errs[o.id] for o in lst if o.id in errs]) for s, lst in stages.items()}
    ctx_err, ctx_n = {}, {}
    for ctx in AppContext:
        members = [o for o in opps if o.context == ctx]
        if members:
            ctx_n[ctx.value] = len(members)
            ctx_err[ctx.value] = _mean([errs[o.id] for o in members if o.id in errs])

    samples = [s for o in stages["C"] for s in extract_samples(o, criteria)]
    final = len(stages["C"])
    if duration_s is None:
        times = [o.press_t for o in opps] + [o.release_t for o in opps] + list(gaze_t)
        duration_s = (max(times) - min(times)) if times else 0.0
    return AlignmentReport(
        stage_counts={s: len(v) for s, v in stages.items()},
        stage_mean_error_cm=stage_err,
        context_mean_error_cm=ctx_err,
        context_counts=ctx_n,
        samples_per_click=len(samples) / final if final else 0.0,
        samples_per_minute=len(samples) / (duration_s / 60.0) if duration_s > 0 else 0.0,
        n_samples=len(samples),
        duration_s=float(duration_s),
        samples=samples,
    )


def log_span(events) -> float:
    return (events[-1].t - events[0].t) if events else 0.0


def replay(events, criteria: FilterCriteria = FilterCriteria(), screen: ScreenModel = ScreenModel(),
           gaze_stream=None) -> AlignmentReport:
    """Full pipeline over a parsed log; gaze comes from the log unless given."""
    opps = detect_clicks(events)
    gaze = gaze_stream if gaze_stream is not None else gaze_from_events(events)
    return alignment_report(opps, gaze, screen, criteria, duration_s=log_span(events))


# ---------------------------------------------------------------------------
# synthetic logs


def random_log(rng: np.random.Generator, n_events: int = 60, screen_res=(1920, 1080),
               gaze_noise_px: float = 40.0) -> list[UsageEvent]:
    """Random, time-sorted log mixing clicks, drags, stray presses, context
    switches and a gaze sample at every press."""
    w, h = screen_res
    t = 0.0
    events = []
    for _ in range(n_events):
        t += float(rng.exponential(1.0))
        r = rng.random()
        if r < 0.15:
            events.append(UsageEvent(t, "context", context=list(AppContext)[rng.integers(len(AppContext))]))
        elif r < 0.9:
            xy = (float(rng.uniform(0, w)), float(rng.uniform(0, h)))
            if rng.random() < 0.2:      # bias some clicks toward corners
                xy = (float(np.clip(rng.choice([0, w]) + rng.uniform(-90, 90), 0, w)),
                      float(np.clip(rng.choice([0, h]) + rng.uniform(-90, 90), 0, h)))
            g = (xy[0] + float(rng.normal(0, gaze_noise_px)), xy[1] + float(rng.normal(0, gaze_noise_px)))
            events.append(UsageEvent(t, "gaze", gaze_pt=g))
            events.append(UsageEvent(t, "press", cursor=xy))
            if rng.random() < 0.9:
                t += float(rng.choice([rng.uniform(0.005, 0.12), rng.uniform(0.15, 1.0)]))
                events.append(UsageEvent(t, "release", cursor=xy))
        else:
            events.append(UsageEvent(t, "frame"))
    return events
