import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentpass.core import PositionClass
from latentpass.ingest import (CARRIER_HYSTERESIS, INTERVAL_FRAMES, OPENNESS_CAP, BoxscoreRow, EventKind,
                               IngestError, Outcome, PlayAnnotation, PlayerSpot, TrackingFrame,
                               carrier_track, closeness_ranks, extract_covariates, ingest_games,
                               load_game, merge_streams, openness, parse_boxscore, parse_playbyplay,
                               parse_tracking, possession_intervals, segment_possessions,
                               serialize_boxscore, serialize_playbyplay, serialize_tracking)

DT = 0.04
HOME = {1: (10.0, 25.0), 2: (20.0, 10.0), 3: (25.0, 40.0), 4: (35.0, 25.0), 5: (5.0, 5.0)}
AWAY = {11: (60.0, 28.0), 12: (62.0, 13.0), 13: (67.0, 37.0), 14: (73.0, 22.0), 15: (68.0, 8.0)}


def make_frame(i, ball, home=HOME, away=AWAY, game=7):
    players = {p: PlayerSpot("H", xy) for p, xy in home.items()}
    players.update({p: PlayerSpot("A", xy) for p, xy in away.items()})
    return TrackingFrame(game, round(i * DT, 10), ball, None, players)


def make_record(n_frames, annotations, ball_for=lambda i: HOME[1], **kw):
    frames = [make_frame(i, ball_for(i), **kw) for i in range(n_frames)]
    notes = [PlayAnnotation(7, t, kind, player) for t, kind, player in annotations]
    box = [BoxscoreRow(7, p, PositionClass.GUARD, 0, 0, 0) for p in (*HOME, *AWAY)]
    return merge_streams(frames, notes, box)


def game7(fixtures, fmt="csv"):
    folder = fixtures / ("game7" if fmt == "csv" else "game7_xml")
    return load_game(*(folder / f"{name}.{fmt}" for name in ("tracking", "playbyplay", "boxscore")))


# -- parsing ---------------------------------------------------------------

def test_empty_tracking_file_gives_no_frames(fixtures):
    result = parse_tracking(fixtures / "tracking_empty.csv")
    assert result.records == []
    assert not result.diagnostics.counts


def test_three_frames_read_verbatim(fixtures):
    frames = parse_tracking(fixtures / "tracking_three_frames.csv").records
    assert [f.timestamp for f in frames] == [0.0, 0.04, 0.08]
    first = frames[0]
    assert first.game == 7 and first.ball == (10.0, 25.0) and first.ball_z == 4.0
    assert first.players[1] == PlayerSpot("H", (10.0, 25.0))
    assert first.players[15] == PlayerSpot("A", (8.0, 8.0))
    assert len(first.players) == 10


def test_one_corrupt_row_is_skipped_and_counted(fixtures):
    result = parse_tracking(fixtures / "tracking_one_corrupt.csv")
    assert len(result.records) == 4
    assert result.diagnostics.corrupt_rows == 1


def test_unknown_schema_version_is_rejected(fixtures):
    with pytest.raises(IngestError, match="schema"):
        parse_tracking(fixtures / "tracking_bad_version.csv")


def test_out_of_order_frame_is_dropped(fixtures):
    lines = (fixtures / "tracking_three_frames.csv").read_text().splitlines(keepends=True)
    swapped = "".join(lines[:2] + [lines[3], lines[2], lines[4]])
    result = parse_tracking(swapped)
    assert [f.timestamp for f in result.records] == [0.04, 0.08]
    assert result.diagnostics.corrupt_rows == 1


def test_single_pass_annotation(fixtures):
    result = parse_playbyplay(fixtures / "playbyplay_one_pass.csv")
    assert result.records == [PlayAnnotation(7, 1.6, EventKind.PASS, 1)]


def test_unknown_label_read_as_other(fixtures):
    result = parse_playbyplay(fixtures / "playbyplay_unknown_label.csv")
    assert [a.kind for a in result.records].count(EventKind.OTHER) == 1
    assert result.diagnostics.counts["unknown_event"] == 1


def test_missing_file_raises_ingest_error(tmp_path):
    with pytest.raises(IngestError):
        parse_boxscore(tmp_path / "absent.csv")


# -- merging ---------------------------------------------------------------

def test_annotation_on_a_frame_binds_to_it():
    rec = make_record(50, [(0.8, EventKind.PASS, 1)])
    assert [idx for _, idx in rec.annotations] == [20]


def test_annotation_between_frames_binds_to_nearest():
    rec = make_record(50, [(0.81, EventKind.PASS, 1), (0.83, EventKind.DRIBBLE, 1)])
    assert [idx for _, idx in rec.annotations] == [20, 21]


def test_annotation_far_from_frames_is_dropped():
    rec = make_record(50, [(1.96 + 0.5, EventKind.PASS, 1)])
    assert rec.annotations == []
    assert rec.diagnostics.counts["unmatched_annotation"] == 1


def test_game_mismatch_is_an_error():
    frames = [make_frame(i, HOME[1]) for i in range(3)]
    with pytest.raises(IngestError, match="game"):
        merge_streams(frames, [PlayAnnotation(8, 0.0, EventKind.PASS, 1)], [])


# -- possessions -----------------------------------------------------------

def test_made_shot_closes_a_possession():
    rec = make_record(60, [(0.4, EventKind.PASS, 1), (1.2, EventKind.SHOT_MADE, 2)])
    poss = segment_possessions(rec)
    assert poss[0].outcome is Outcome.MADE and not poss[0].excluded and poss[0].complete
    assert (poss[0].first_frame, poss[0].last_frame) == (0, 30)
    assert poss[1].outcome is None and not poss[1].complete


def test_foul_ended_possession_is_excluded():
    rec = make_record(40, [(0.4, EventKind.PASS, 1), (1.56, EventKind.FOUL, 12)])
    poss = segment_possessions(rec)
    assert poss[0].excluded
    assert extract_covariates(rec, poss[0]) == []


def test_boundaries_partition_all_frames():
    rec = make_record(100, [(0.8, EventKind.SHOT_MISSED, 1), (2.0, EventKind.TURNOVER, 11),
                            (3.0, EventKind.VIOLATION_RESET, 2)])
    poss = segment_possessions(rec)
    covered = [i for p in poss for i in p.frame_range]
    assert covered == list(range(100))
    assert [p.outcome for p in poss] == [Outcome.MISSED, Outcome.TURNOVER, Outcome.RESET, None]


def test_no_boundary_gives_one_incomplete_possession():
    rec = make_record(30, [(0.4, EventKind.DRIBBLE, 1)])
    (p,) = segment_possessions(rec)
    assert (p.first_frame, p.last_frame, p.complete, p.outcome) == (0, 29, False, None)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 79), max_size=8, unique=True),
       st.lists(st.sampled_from([EventKind.SHOT_MADE, EventKind.SHOT_MISSED, EventKind.TURNOVER,
                                 EventKind.FOUL, EventKind.VIOLATION_RESET, EventKind.PASS]), min_size=8,
                max_size=8))
def test_possessions_always_partition_frames(slots, kinds):
    rec = make_record(80, [(round(i * DT, 10), k, 1) for i, k in zip(sorted(slots), kinds)])
    covered = [i for p in segment_possessions(rec) for i in p.frame_range]
    assert covered == list(range(80))


# -- carrier ---------------------------------------------------------------

def test_carrier_switches_after_hysteresis():
    switch = 10
    rec = make_record(30, [], ball_for=lambda i: HOME[1] if i < switch else HOME[2])
    track = carrier_track(rec.frames)
    assert track[switch + CARRIER_HYSTERESIS - 2] == 1
    assert track[switch + CARRIER_HYSTERESIS - 1] == 2


def test_brief_flicker_does_not_change_carrier():
    rec = make_record(30, [], ball_for=lambda i: HOME[2] if 12 <= i < 15 else HOME[1])
    track = carrier_track(rec.frames)
    assert set(track[CARRIER_HYSTERESIS - 1:]) == {1}


def test_loose_ball_keeps_last_carrier():
    rec = make_record(30, [], ball_for=lambda i: HOME[1] if i < 10 else (50.0, 49.0))
    assert set(carrier_track(rec.frames)[CARRIER_HYSTERESIS - 1:]) == {1}


def test_dribble_latches_until_the_carrier_changes():
    rec = make_record(60, [(0.8, EventKind.DRIBBLE, 1)],
                      ball_for=lambda i: HOME[1] if i < 35 else HOME[2])
    (poss,) = segment_possessions(rec)
    flags = {iv.index: (iv.carrier, iv.dribbling) for iv in possession_intervals(rec, poss)}
    assert flags[15] == (1, False)
    assert flags[20] == (1, True) and flags[35] == (1, True)
    assert flags[40] == (2, False)


# -- covariates ------------------------------------------------------------

def test_closeness_ranks_follow_distance():
    mates = {7: (5.0, 0.0), 3: (0.0, 10.0), 9: (15.0, 0.0), 2: (0.0, -20.0)}
    assert closeness_ranks((0.0, 0.0), mates) == {7: 1, 3: 2, 9: 3, 2: 4}


def test_closeness_ties_broken_by_player_id():
    assert closeness_ranks((0.0, 0.0), {5: (1.0, 0.0), 4: (0.0, 1.0)}) == {4: 1, 5: 2}


def test_openness_bounds():
    assert openness([], (0, 0), (10, 0)) == pytest.approx(math.log(10))
    assert openness([(5.0, 3.0)], (0, 0), (10, 0)) == pytest.approx(OPENNESS_CAP)
    assert openness([(5.0, 0.0)], (0, 0), (10, 0)) == 0.0
    assert openness([(5.0, 0.5)], (0, 0), (10, 0)) == pytest.approx(math.log(5))
    # beyond the receiver the distance is to the endpoint
    assert openness([(10.3, 0.4)], (0, 0), (10, 0)) == pytest.approx(math.log(5))


def covariates_with_defender(defender_xy):
    away = {**AWAY, 11: defender_xy}
    rec = make_record(40, [], away=away)
    (poss,) = segment_possessions(rec)
    return extract_covariates(rec, poss)


def test_defender_one_foot_away_gives_zero_log_distance():
    cells = covariates_with_defender((HOME[1][0] + 1.0, HOME[1][1]))
    assert cells and all(c.w[2] == pytest.approx(0.0, abs=1e-12) for c in cells)


def test_open_lanes_reach_the_openness_cap():
    cells = covariates_with_defender((60.0, 28.0))
    assert cells
    assert all(c.w[4] == pytest.approx(math.log(10), abs=1e-3) for c in cells)


def test_fixture_game_cells(fixtures):
    rec, poss = game7(fixtures)
    res = ingest_games([(rec, poss)])
    assert len(res.covariates) == 76
    assert [(e.sender, e.receiver, e.interval_index) for e in res.events] == [(1, 2, 40), (11, 12, 90)]
    counts = res.diagnostics.counts
    assert counts["unmatched_annotation"] == 1
    assert counts["unknown_event"] == 1
    assert counts["missing_coordinates"] == 1


def test_fixture_ranks_form_one_to_four_per_interval(fixtures):
    res = ingest_games([game7(fixtures)])
    ranks = defaultdict(list)
    for c in res.covariates:
        ranks[(c.game, c.interval_index)].append(c.w[3])
    assert ranks and all(sorted(r) == [1.0, 2.0, 3.0, 4.0] for r in ranks.values())


def test_fixture_covariates_are_finite_and_intervals_are_five_frames(fixtures):
    res = ingest_games([game7(fixtures)])
    w = np.array([c.w for c in res.covariates])
    assert np.all(np.isfinite(w))
    assert np.all(w[:, 0] == 1.0)
    assert np.all((w[:, 4] >= 0) & (w[:, 4] <= OPENNESS_CAP + 1e-12))
    assert {c.interval_index % INTERVAL_FRAMES for c in res.covariates} == {0}
    frames = np.array([c.interval_length for c in res.covariates]) / DT
    assert np.allclose(frames, np.round(frames)) and frames.min() >= 1 and frames.max() == INTERVAL_FRAMES


def test_fixture_foul_possession_contributes_nothing(fixtures):
    rec, poss = game7(fixtures)
    fouled = [p for p in poss if p.excluded]
    assert len(fouled) == 1
    res = ingest_games([(rec, poss)])
    assert not [c for c in res.covariates if c.interval_index in fouled[0].frame_range]


def test_fixture_possessions_partition_frames(fixtures):
    rec, poss = game7(fixtures)
    assert [i for p in poss for i in p.frame_range] == list(range(len(rec.frames)))


# -- round trips -----------------------------------------------------------

@pytest.mark.parametrize("name, parse, write", [
    ("game7/tracking.csv", parse_tracking, serialize_tracking),
    ("game7/boxscore.csv", parse_boxscore, serialize_boxscore),
    ("tracking_three_frames.csv", parse_tracking, serialize_tracking),
    ("playbyplay_one_pass.csv", parse_playbyplay, serialize_playbyplay),
])
def test_serialize_reproduces_file_bytes(fixtures, name, parse, write):
    raw = (fixtures / name).read_bytes()
    assert write(parse(raw.decode()).records).encode() == raw


@pytest.mark.parametrize("name, parse, write", [
    ("tracking", parse_tracking, serialize_tracking),
    ("playbyplay", parse_playbyplay, serialize_playbyplay),
    ("boxscore", parse_boxscore, serialize_boxscore),
])
def test_parse_serialize_is_idempotent(fixtures, name, parse, write):
    once = parse(fixtures / "game7" / f"{name}.csv").records
    text = write(once)
    assert parse(text).records == once
    assert write(parse(text).records) == text


@pytest.mark.parametrize("name, parse", [("tracking", parse_tracking), ("playbyplay", parse_playbyplay),
                                         ("boxscore", parse_boxscore)])
def test_xml_matches_csv(fixtures, name, parse):
    assert parse(fixtures / "game7_xml" / f"{name}.xml").records == \
        parse(fixtures / "game7" / f"{name}.csv").records


def test_xml_and_csv_ingest_identically(fixtures):
    a, b = ingest_games([game7(fixtures)]), ingest_games([game7(fixtures, "xml")])
    assert a.covariates == b.covariates and a.events == b.events
    assert a.diagnostics.counts == b.diagnostics.counts
