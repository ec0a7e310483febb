"""Tracking, play-by-play and box-score ingestion.

Three comma-separated schemas, each opened by a version line:

``# latentpass-tracking v1``
    ``game_id,timestamp_s,ball_x,ball_y,ball_z`` followed by ten player
    slots ``pK_side,pK_id,pK_x,pK_y`` (K = 1..10).  ``side`` is ``H`` or
    ``A``; an unused slot is ``-,NA,NA,NA``; an untracked coordinate is ``NA``.
``# latentpass-playbyplay v1``
    ``game_id,timestamp_s,event_kind,player_id`` (``player_id`` may be ``NA``).
``# latentpass-boxscore v1``
    ``game_id,player_id,position,points,assists,rebounds``; position is G, F or C.

The same content is accepted as XML::

    <tracking game="7"><frame t="0.04"><ball x="" y="" z=""/>
        <player id="" side="H" x="" y=""/>...</frame></tracking>
    <playbyplay game="7"><event t="" kind="" player=""/></playbyplay>
    <boxscore game="7"><player id="" position="G" points="" assists="" rebounds=""/></boxscore>

Rows that cannot be read are skipped and counted.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import CovariateRecord, ModelInputError, PassEvent, PositionClass
from .spatial import N_TILES, PassLocation, PlayerFields

logger = logging.getLogger(__name__)

FRAME_RATE = 25.0
N_SLOTS = 10
MISSING = "NA"
EMPTY_SIDE = "-"
SIDES = ("H", "A")

TRACKING_SCHEMA = "latentpass-tracking v1"
PLAYBYPLAY_SCHEMA = "latentpass-playbyplay v1"
BOXSCORE_SCHEMA = "latentpass-boxscore v1"

TRACKING_HEADER = ["game_id", "timestamp_s", "ball_x", "ball_y", "ball_z"] + [
    f"p{k}_{col}" for k in range(1, N_SLOTS + 1) for col in ("side", "id", "x", "y")
]
PLAYBYPLAY_HEADER = ["game_id", "timestamp_s", "event_kind", "player_id"]
BOXSCORE_HEADER = ["game_id", "player_id", "position", "points", "assists", "rebounds"]

MATCH_TOLERANCE = 0.1         # seconds between an annotation and its frame
CARRIER_RADIUS = 3.0          # feet from the ball
CARRIER_HYSTERESIS = 5        # frames a new carrier must persist
INTERVAL_FRAMES = 5
MIN_DISTANCE = 0.1            # feet
OPENNESS_CAP = math.log(1.0 / MIN_DISTANCE)


class IngestError(ModelInputError):
    pass


class EventKind(str, enum.Enum):
    DRIBBLE = "dribble"
    PASS = "pass"
    SHOT_MADE = "shot_made"
    SHOT_MISSED = "shot_missed"
    TURNOVER = "turnover"
    FOUL = "foul"
    VIOLATION_RESET = "violation_reset"
    REBOUND = "rebound"
    OTHER = "other"


# Source-specific labels. Anything not listed here maps to OTHER.
EVENT_ALIASES = {
    **{k.value: k for k in EventKind},
    "made shot": EventKind.SHOT_MADE,
    "made_shot": EventKind.SHOT_MADE,
    "missed shot": EventKind.SHOT_MISSED,
    "missed_shot": EventKind.SHOT_MISSED,
    "kicked ball violation": EventKind.VIOLATION_RESET,
    "violation": EventKind.VIOLATION_RESET,
}


class Outcome(str, enum.Enum):
    MADE = "made"
    MISSED = "missed"
    TURNOVER = "turnover"
    RESET = "reset"


BOUNDARIES = {
    EventKind.SHOT_MADE: Outcome.MADE,
    EventKind.SHOT_MISSED: Outcome.MISSED,
    EventKind.TURNOVER: Outcome.TURNOVER,
    EventKind.VIOLATION_RESET: Outcome.RESET,
    EventKind.FOUL: None,
}


@dataclass(frozen=True)
class PlayerSpot:
    side: str
    location: tuple[float, float] | None


@dataclass(frozen=True)
class TrackingFrame:
    game: int
    timestamp: float
    ball: tuple[float, float]
    ball_z: float | None
    players: Mapping[int, PlayerSpot]


@dataclass(frozen=True)
class PlayAnnotation:
    game: int
    timestamp: float
    kind: EventKind
    player: int | None


@dataclass(frozen=True)
class BoxscoreRow:
    game: int
    player: int
    position: PositionClass
    points: int
    assists: int
    rebounds: int


@dataclass
class Diagnostics:
    counts: Counter = field(default_factory=Counter)
    messages: list = field(default_factory=list)

    def add(self, kind: str, message: str):
        self.counts[kind] += 1
        self.messages.append(f"{kind}: {message}")
        logger.debug("%s: %s", kind, message)

    def merge(self, other: "Diagnostics"):
        self.counts.update(other.counts)
        self.messages.extend(other.messages)

    @property
    def corrupt_rows(self) -> int:
        return self.counts["corrupt_row"]


@dataclass
class ParseResult:
    records: list
    diagnostics: Diagnostics


# -- reading helpers -------------------------------------------------------

def _read_text(source) -> str:
    if isinstance(source, (str, Path)) and not (isinstance(source, str) and "\n" in source):
        path = Path(source)
        try:
            return path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
    if isinstance(source, str):
        return source
    return source.read()


def _csv_rows(text: str, schema: str, header: list[str]):
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        return []
    first = lines[0].strip()
    if first != f"# {schema}":
        raise IngestError(f"unknown schema line {first!r}, expected '# {schema}'")
    if len(lines) < 2:
        return []
    if next(csv.reader([lines[1]])) != header:
        raise IngestError(f"unexpected column header for {schema}")
    return list(enumerate(csv.reader(lines[2:]), start=3))


def _opt_float(token: str) -> float | None:
    if token == MISSING:
        return None
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {token!r}")
    return value


def _opt_int(token: str) -> int | None:
    return None if token == MISSING else int(token)


def _is_xml(text: str) -> bool:
    return text.lstrip().startswith("<")


# -- tracking --------------------------------------------------------------

def _frame_from_row(row) -> TrackingFrame:
    if len(row) != len(TRACKING_HEADER):
        raise ValueError(f"{len(row)} fields, expected {len(TRACKING_HEADER)}")
    game, t = int(row[0]), float(row[1])
    bx, by = float(row[2]), float(row[3])
    if not all(math.isfinite(v) for v in (t, bx, by)):
        raise ValueError("non-finite time or ball location")
    players = {}
    for k in range(N_SLOTS):
        side, pid, x, y = row[5 + 4 * k: 9 + 4 * k]
        if side == EMPTY_SIDE:
            if (pid, x, y) != (MISSING, MISSING, MISSING):
                raise ValueError(f"slot {k + 1} marked empty but has content")
            continue
        if side not in SIDES:
            raise ValueError(f"unknown side marker {side!r}")
        x, y = _opt_float(x), _opt_float(y)
        if (x is None) != (y is None):
            raise ValueError(f"half-missing coordinates in slot {k + 1}")
        pid = int(pid)
        if pid in players:
            raise ValueError(f"player {pid} appears twice")
        players[pid] = PlayerSpot(side, None if x is None else (x, y))
    return TrackingFrame(game, t, (bx, by), _opt_float(row[4]), players)


def _frames_from_xml(text: str, diag: Diagnostics) -> list[TrackingFrame]:
    root = ET.fromstring(text)
    if root.tag != "tracking":
        raise IngestError(f"expected <tracking>, got <{root.tag}>")
    game = int(root.get("game"))
    frames = []
    for n, el in enumerate(root.iter("frame")):
        try:
            ball = el.find("ball")
            players = {}
            for p in el.iter("player"):
                x, y = p.get("x", MISSING), p.get("y", MISSING)
                loc = None if MISSING in (x, y) else (float(x), float(y))
                if p.get("side") not in SIDES:
                    raise ValueError(f"unknown side {p.get('side')!r}")
                players[int(p.get("id"))] = PlayerSpot(p.get("side"), loc)
            if len(players) > N_SLOTS:
                raise ValueError("more than ten players")
            frames.append(TrackingFrame(game, float(el.get("t")),
                                        (float(ball.get("x")), float(ball.get("y"))),
                                        _opt_float(ball.get("z", MISSING)), players))
        except (TypeError, ValueError, AttributeError) as exc:
            diag.add("corrupt_row", f"frame element {n}: {exc}")
    return frames


def parse_tracking(source) -> ParseResult:
    """Frames ordered by time; rows out of order or unreadable are skipped."""
    text = _read_text(source)
    diag = Diagnostics()
    if _is_xml(text):
        candidates = _frames_from_xml(text, diag)
    else:
        candidates = []
        for line_no, row in _csv_rows(text, TRACKING_SCHEMA, TRACKING_HEADER):
            try:
                candidates.append(_frame_from_row(row))
            except ValueError as exc:
                diag.add("corrupt_row", f"line {line_no}: {exc}")
    frames, last = [], {}
    for fr in candidates:
        if fr.game in last and fr.timestamp <= last[fr.game]:
            diag.add("corrupt_row", f"game {fr.game} time {fr.timestamp} not after {last[fr.game]}")
            continue
        last[fr.game] = fr.timestamp
        frames.append(fr)
    return ParseResult(frames, diag)


def _fmt(value: float | None) -> str:
    return MISSING if value is None else repr(float(value))


def serialize_tracking(frames: Sequence[TrackingFrame]) -> str:
    buf = io.StringIO()
    buf.write(f"# {TRACKING_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACKING_HEADER)
    for fr in frames:
        row = [str(fr.game), _fmt(fr.timestamp), _fmt(fr.ball[0]), _fmt(fr.ball[1]), _fmt(fr.ball_z)]
        for pid, spot in fr.players.items():
            loc = spot.location or (None, None)
            row += [spot.side, str(pid), _fmt(loc[0]), _fmt(loc[1])]
        row += [EMPTY_SIDE, MISSING, MISSING, MISSING] * (N_SLOTS - len(fr.players))
        w.writerow(row)
    return buf.getvalue()


# -- play by play ----------------------------------------------------------

def _event_kind(label: str, diag: Diagnostics, where: str) -> EventKind:
    kind = EVENT_ALIASES.get(label.strip().lower())
    if kind is None:
        diag.add("unknown_event", f"{where}: label {label!r} read as other")
        return EventKind.OTHER
    return kind


def parse_playbyplay(source) -> ParseResult:
    text = _read_text(source)
    diag = Diagnostics()
    out = []
    if _is_xml(text):
        root = ET.fromstring(text)
        if root.tag != "playbyplay":
            raise IngestError(f"expected <playbyplay>, got <{root.tag}>")
        game = int(root.get("game"))
        for n, el in enumerate(root.iter("event")):
            try:
                out.append(PlayAnnotation(game, float(el.get("t")),
                                          _event_kind(el.get("kind"), diag, f"event {n}"),
                                          _opt_int(el.get("player", MISSING))))
            except (TypeError, ValueError) as exc:
                diag.add("corrupt_row", f"event element {n}: {exc}")
    else:
        for line_no, row in _csv_rows(text, PLAYBYPLAY_SCHEMA, PLAYBYPLAY_HEADER):
            try:
                if len(row) != len(PLAYBYPLAY_HEADER):
                    raise ValueError(f"{len(row)} fields")
                t = float(row[1])
                if not math.isfinite(t):
                    raise ValueError("non-finite time")
                out.append(PlayAnnotation(int(row[0]), t,
                                          _event_kind(row[2], diag, f"line {line_no}"),
                                          _opt_int(row[3])))
            except ValueError as exc:
                diag.add("corrupt_row", f"line {line_no}: {exc}")
    out.sort(key=lambda a: (a.game, a.timestamp))
    return ParseResult(out, diag)


def serialize_playbyplay(annotations: Sequence[PlayAnnotation]) -> str:
    buf = io.StringIO()
    buf.write(f"# {PLAYBYPLAY_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLAYBYPLAY_HEADER)
    for a in annotations:
        w.writerow([a.game, _fmt(a.timestamp), a.kind.value, MISSING if a.player is None else a.player])
    return buf.getvalue()


# -- box score -------------------------------------------------------------

def _box_row(game, player, position, points, assists, rebounds) -> BoxscoreRow:
    return BoxscoreRow(int(game), int(player), PositionClass(position),
                       int(points), int(assists), int(rebounds))


def parse_boxscore(source) -> ParseResult:
    text = _read_text(source)
    diag = Diagnostics()
    out = []
    if _is_xml(text):
        root = ET.fromstring(text)
        if root.tag != "boxscore":
            raise IngestError(f"expected <boxscore>, got <{root.tag}>")
        game = root.get("game")
        for n, el in enumerate(root.iter("player")):
            try:
                out.append(_box_row(game, el.get("id"), el.get("position"), el.get("points"),
                                    el.get("assists"), el.get("rebounds")))
            except (TypeError, ValueError) as exc:
                diag.add("corrupt_row", f"player element {n}: {exc}")
    else:
        for line_no, row in _csv_rows(text, BOXSCORE_SCHEMA, BOXSCORE_HEADER):
            try:
                if len(row) != len(BOXSCORE_HEADER):
                    raise ValueError(f"{len(row)} fields")
                out.append(_box_row(*row))
            except ValueError as exc:
                diag.add("corrupt_row", f"line {line_no}: {exc}")
    return ParseResult(out, diag)


def serialize_boxscore(rows: Sequence[BoxscoreRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# {BOXSCORE_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOXSCORE_HEADER)
    for r in rows:
        w.writerow([r.game, r.player, r.position.value, r.points, r.assists, r.rebounds])
    return buf.getvalue()


# -- merging and possessions -----------------------------------------------

@dataclass
class GameRecord:
    game: int
    frames: list[TrackingFrame]
    annotations: list[tuple[PlayAnnotation, int]]   # (annotation, frame index)
    positions: dict[int, PositionClass]
    boxscore: list[BoxscoreRow]
    diagnostics: Diagnostics

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])


def merge_streams(frames, annotations, boxscore) -> GameRecord:
    """Bind each annotation to the nearest frame within 0.1 s; drop the rest."""
    games = {f.game for f in frames} | {a.game for a in annotations} | {b.game for b in boxscore}
    if len(games) != 1:
        raise IngestError(f"streams disagree on the game id: {sorted(games)}")
    game = games.pop()
    diag = Diagnostics()
    times = np.array([f.timestamp for f in frames])
    bound = []
    for a in sorted(annotations, key=lambda a: a.timestamp):
        if not len(times):
            diag.add("unmatched_annotation", f"{a.kind.value} at {a.timestamp}: no frames")
            continue
        k = int(np.searchsorted(times, a.timestamp))
        near = [i for i in (k - 1, k) if 0 <= i < len(times)]
        best = min(near, key=lambda i: (abs(times[i] - a.timestamp), i))
        if abs(times[best] - a.timestamp) > MATCH_TOLERANCE + 1e-9:
            diag.add("unmatched_annotation", f"{a.kind.value} at {a.timestamp}: nearest frame "
                                             f"{abs(times[best] - a.timestamp):.3f} s away")
            continue
        bound.append((a, best))
    positions = {b.player: b.position for b in boxscore}
    return GameRecord(game, list(frames), bound, positions, list(boxscore), diag)


@dataclass(frozen=True)
class Possession:
    game: int
    start: float
    end: float
    offense: str | None
    outcome: Outcome | None
    excluded: bool
    complete: bool
    first_frame: int
    last_frame: int              # inclusive

    @property
    def frame_range(self) -> range:
        return range(self.first_frame, self.last_frame + 1)


def _offense_side(record: GameRecord, annotations, first, last) -> str | None:
    sides = Counter()
    for a, idx in annotations:
        if a.player is None or a.kind in (EventKind.FOUL, EventKind.REBOUND, EventKind.OTHER):
            continue
        spot = record.frames[idx].players.get(a.player)
        if spot is not None:
            sides[spot.side] += 1
    if sides:
        return sides.most_common(1)[0][0]
    for fr in record.frames[first:last + 1]:
        carrier = _nearest_to_ball(fr)
        if carrier is not None:
            return fr.players[carrier].side
    return None


def segment_possessions(record: GameRecord) -> list[Possession]:
    """Split the frames at shots, turnovers, resets and fouls.

    A possession ending in a foul is kept but marked excluded; frames after
    the last boundary form an incomplete possession.
    """
    out = []
    start = 0
    pending = []
    n = len(record.frames)
    for a, idx in record.annotations:
        pending.append((a, idx))
        if a.kind not in BOUNDARIES:
            continue
        if idx < start:
            record.diagnostics.add("empty_possession", f"{a.kind.value} at {a.timestamp} "
                                                        "shares a frame with the previous boundary")
            pending = []
            continue
        out.append(Possession(record.game, record.frames[start].timestamp,
                              record.frames[idx].timestamp,
                              _offense_side(record, pending, start, idx),
                              BOUNDARIES[a.kind], a.kind is EventKind.FOUL, True, start, idx))
        start = idx + 1
        pending = []
    if start < n:
        out.append(Possession(record.game, record.frames[start].timestamp,
                              record.frames[-1].timestamp,
                              _offense_side(record, pending, start, n - 1),
                              None, False, False, start, n - 1))
    return out


# -- carrier and covariates ------------------------------------------------

def _nearest_to_ball(frame: TrackingFrame) -> int | None:
    best, best_d = None, CARRIER_RADIUS
    bx, by = frame.ball
    for pid in sorted(frame.players):
        loc = frame.players[pid].location
        if loc is None:
            continue
        d = math.hypot(loc[0] - bx, loc[1] - by)
        if d <= best_d and (best is None or d < best_d):
            best, best_d = pid, d
    return best


def carrier_track(frames: Sequence[TrackingFrame]) -> list[int | None]:
    """Ball carrier per frame with a five-frame hysteresis on changes."""
    current, candidate, run = None, None, 0
    out = []
    for fr in frames:
        raw = _nearest_to_ball(fr)
        if raw == current:
            candidate, run = None, 0
        elif raw == candidate:
            run += 1
        else:
            candidate, run = raw, 1
        if candidate is not None and run >= CARRIER_HYSTERESIS:
            current, candidate, run = candidate, None, 0
        out.append(current)
    return out


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def openness(defenders, sender_xy, receiver_xy) -> float:
    """``log(clip(d, 0.1, 1) / 0.1)`` for the closest defender's distance ``d`` to the passing lane."""
    if not defenders:
        return OPENNESS_CAP
    d = min(point_segment_distance(q, sender_xy, receiver_xy) for q in defenders)
    return math.log(min(max(d, MIN_DISTANCE), 1.0) / MIN_DISTANCE)


def closeness_ranks(sender_xy, teammates: Mapping[int, tuple[float, float]]) -> dict[int, int]:
    """Rank 1..k of each teammate by distance to the carrier, ties by player id."""
    order = sorted(teammates, key=lambda j: (math.dist(sender_xy, teammates[j]), j))
    return {j: r for r, j in enumerate(order, start=1)}


@dataclass
class Interval:
    index: int
    frames: range
    carrier: int | None
    dribbling: bool


def possession_intervals(record: GameRecord, possession: Possession,
                         carriers: Sequence[int | None] | None = None) -> list[Interval]:
    """Chunks of five frames with the carrier at each chunk's first frame."""
    frames = record.frames[possession.first_frame:possession.last_frame + 1]
    if carriers is None:
        carriers = carrier_track(frames)
    dribbles = sorted((idx, a.player) for a, idx in record.annotations
                      if a.kind is EventKind.DRIBBLE and idx in possession.frame_range)
    out = []
    carry_start, prev = 0, None
    for k, c in enumerate(carriers):
        if c != prev:
            carry_start, prev = k, c
        if k % INTERVAL_FRAMES:
            continue
        first = possession.first_frame + k
        dribbling = c is not None and any(
            p == c and possession.first_frame + carry_start <= idx <= first for idx, p in dribbles)
        out.append(Interval(first, range(first, min(first + INTERVAL_FRAMES, possession.last_frame + 1)),
                            c, dribbling))
    return out


def _field_value(fields: Mapping[int, PlayerFields] | None, sender, kind, loc, position=None):
    pf = None if fields is None else fields.get(sender)
    if pf is None:
        return 1.0 / N_TILES
    field_ = pf.xi if kind == "sender" else pf.xi_tilde[position]
    return float(field_(np.array([loc]))[0])


def extract_covariates(record: GameRecord, possession: Possession,
                       fields: Mapping[int, PlayerFields] | None = None,
                       diagnostics: Diagnostics | None = None) -> list[CovariateRecord]:
    """One record per (interval, teammate of the carrier) in an included possession."""
    diag = record.diagnostics if diagnostics is None else diagnostics
    if possession.excluded:
        return []
    out = []
    frame_dt = 1.0 / FRAME_RATE
    for iv in possession_intervals(record, possession):
        if iv.carrier is None:
            continue
        fr = record.frames[iv.index]
        spots = fr.players
        side = spots[iv.carrier].side
        if possession.offense is not None and side != possession.offense:
            continue
        if any(s.location is None for s in spots.values()):
            diag.add("missing_coordinates", f"game {record.game} interval {iv.index} skipped")
            continue
        s_i = spots[iv.carrier].location
        mates = {j: s.location for j, s in spots.items() if s.side == side and j != iv.carrier}
        if len(mates) != 4:
            diag.add("incomplete_lineup", f"game {record.game} interval {iv.index}: "
                                          f"{len(mates)} teammates on court")
            continue
        defenders = [s.location for s in spots.values() if s.side != side]
        nearest = min((math.dist(s_i, q) for q in defenders), default=math.hypot(47, 50))
        w3 = math.log(max(nearest, MIN_DISTANCE))
        ranks = closeness_ranks(s_i, mates)
        xi_s = _field_value(fields, iv.carrier, "sender", s_i)
        for j in sorted(mates):
            pos = record.positions.get(j)
            if pos is None:
                diag.add("unknown_position", f"player {j} missing from the box score; read as G")
                pos = PositionClass.GUARD
            s_j = mates[j]
            w = (1.0, 1.0 if iv.dribbling else 0.0, w3, float(ranks[j]), openness(defenders, s_i, s_j))
            out.append(CovariateRecord(record.game, iv.index, iv.carrier, j, w, xi_s,
                                       _field_value(fields, iv.carrier, "receiver", s_j, pos),
                                       len(iv.frames) * frame_dt))
    return out


def extract_passes(record: GameRecord, possession: Possession):
    """Pass events and pass locations of one possession.

    The receiver is the next carrier after the pass annotation.  Returns
    ``(events, locations)``; events whose interval has no matching cell are
    dropped later by the caller.
    """
    if possession.excluded:
        return [], []
    frames = record.frames[possession.first_frame:possession.last_frame + 1]
    carriers = carrier_track(frames)
    events, locations = [], []
    for a, idx in record.annotations:
        if a.kind is not EventKind.PASS or idx not in possession.frame_range:
            continue
        k = idx - possession.first_frame
        sender = a.player if a.player is not None else carriers[k]
        if sender is None:
            record.diagnostics.add("unattributed_pass", f"pass at {a.timestamp} without a passer")
            continue
        receiver, recv_k = None, None
        for kk in range(k + 1, len(carriers)):
            c = carriers[kk]
            if c is not None and c != sender:
                receiver, recv_k = c, kk
                break
        sender_spot = frames[k].players.get(sender)
        if receiver is None or sender_spot is None:
            record.diagnostics.add("unattributed_pass", f"pass at {a.timestamp} has no receiver")
            continue
        recv_spot = frames[recv_k].players[receiver]
        if recv_spot.side != sender_spot.side:
            record.diagnostics.add("intercepted_pass", f"pass at {a.timestamp} went to the other side")
            continue
        interval = possession.first_frame + (k // INTERVAL_FRAMES) * INTERVAL_FRAMES
        events.append(PassEvent(record.game, possession.first_frame, interval, sender, receiver))
        if sender_spot.location is not None and recv_spot.location is not None:
            pos = record.positions.get(receiver, PositionClass.GUARD)
            locations.append(PassLocation(record.game, sender, receiver, pos,
                                          sender_spot.location, recv_spot.location))
    return events, locations


@dataclass
class IngestResult:
    covariates: list[CovariateRecord]
    events: list[PassEvent]
    pass_locations: list[PassLocation]
    possessions: list[Possession]
    positions: dict[int, PositionClass]
    diagnostics: Diagnostics


def load_game(tracking, playbyplay, boxscore) -> tuple[GameRecord, list[Possession]]:
    parsed = [parse_tracking(tracking), parse_playbyplay(playbyplay), parse_boxscore(boxscore)]
    record = merge_streams(*(p.records for p in parsed))
    for p in parsed:
        record.diagnostics.merge(p.diagnostics)
    return record, segment_possessions(record)


def ingest_games(games: Sequence[tuple[GameRecord, list[Possession]]],
                 fields: Mapping[int, PlayerFields] | None = None,
                 build_fields=None) -> IngestResult:
    """Events, pass locations and covariates of several loaded games.

    Without ``fields``, ``build_fields(pass_locations)`` (if given) is called
    on the passes of all games before covariates are extracted.
    """
    diag = Diagnostics()
    events, locations, possessions, positions = [], [], [], {}
    for record, poss in games:
        positions.update(record.positions)
        possessions.extend(poss)
        for p in poss:
            ev, loc = extract_passes(record, p)
            events.extend(ev)
            locations.extend(loc)
    if fields is None and build_fields is not None:
        fields = build_fields(locations)
    covariates = []
    for record, poss in games:
        for p in poss:
            covariates.extend(extract_covariates(record, p, fields))
        diag.merge(record.diagnostics)
    keys = {c.cell_key for c in covariates}
    kept, used = [], set()
    for ev in events:
        slot = (ev.game, ev.interval_index)
        if ev.cell_key not in keys:
            diag.add("pass_without_cell", f"{ev} dropped")
        elif slot in used:
            diag.add("second_pass_in_interval", f"{ev} dropped")
        else:
            kept.append(ev)
            used.add(slot)
    return IngestResult(covariates, kept, locations, possessions, positions, diag)
