"""Forward simulation of pass events from known parameters.

Each game is a run of equal-length intervals.  Five of the squad are on
court (a fresh random line-up every ``lineup_length`` intervals) and the
ball carrier of each interval is drawn uniformly from them.  The four
teammates are candidate receivers; each gets ``log theta = x.beta + u.v + e``
with ``e ~ N(0, 1)``.  Receivers compete with exponential arrival times and
the earliest arrival inside the interval, if any, is the pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import N_COVARIATES, CellTable, HazardLattice, ModelInputError, PassEvent
from .sampler import Truth
from .spatial import N_TILES

ON_COURT = 5


@dataclass(frozen=True)
class SyntheticSpec:
    n_games: int = 2
    n_players: int = 8
    target_observations: int = 10_000
    R: int = 2
    seed: int = 0
    interval_length: float = 0.2
    lineup_length: int = 50
    truth: Truth | None = None

    def __post_init__(self):
        if self.n_games < 1:
            raise ModelInputError("n_games must be >= 1")
        if self.n_players < ON_COURT:
            raise ModelInputError(f"need at least {ON_COURT} players, got {self.n_players}")
        if self.target_observations < self.n_games:
            raise ModelInputError("target_observations must give every game at least one interval")
        if self.R < 1:
            raise ModelInputError("R must be >= 1")
        if not self.interval_length > 0:
            raise ModelInputError("interval_length must be positive")
        if self.lineup_length < 1:
            raise ModelInputError("lineup_length must be positive")
        if self.truth is not None:
            n, G, R = self.n_players, self.n_games, self.R
            if (self.truth.beta.shape != (n, n, N_COVARIATES)
                    or self.truth.U.shape != (G, n, R) or self.truth.V.shape != (G, n, R)):
                raise ModelInputError("supplied truth does not match n_players, n_games and R")

    def intervals_per_game(self) -> list[int]:
        base, extra = divmod(self.target_observations, self.n_games)
        return [base + (g < extra) for g in range(self.n_games)]


@dataclass(eq=False)
class SyntheticData:
    cells: CellTable
    y: np.ndarray
    events: list[PassEvent]
    truth: Truth
    log_hazard: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def lattice(self) -> HazardLattice:
        return HazardLattice(self.cells, self.log_hazard)


def draw_truth(n_players, n_games, R, rng) -> Truth:
    beta = rng.standard_normal((n_players, n_players, N_COVARIATES))
    U = rng.standard_normal((n_games, n_players, R))
    V = rng.standard_normal((n_games, n_players, R))
    return Truth(beta, U, V)


def competing_arrivals(log_hazard, interval_length, rng) -> np.ndarray:
    """0/1 outcomes for rows of competing candidates.

    Each candidate's first arrival is exponential with rate ``exp(log_hazard)``;
    the earliest one wins if it falls inside the interval.
    """
    log_hazard = np.atleast_2d(np.asarray(log_hazard, dtype=float))
    with np.errstate(over="ignore", divide="ignore"):
        arrival = rng.exponential(size=log_hazard.shape) / np.exp(log_hazard)
    rows = np.arange(len(log_hazard))
    first = arrival.argmin(axis=1)
    fired = arrival[rows, first] <= interval_length
    y = np.zeros(log_hazard.shape)
    y[rows[fired], first[fired]] = 1.0
    return y


def generate(spec: SyntheticSpec) -> SyntheticData:
    root = np.random.SeedSequence(spec.seed)
    truth_seq, *game_seqs = root.spawn(1 + spec.n_games)
    if spec.truth is None:
        truth = draw_truth(spec.n_players, spec.n_games, spec.R, np.random.default_rng(truth_seq))
    else:
        truth = spec.truth

    dt = spec.interval_length
    blocks, events, hazards, labels = [], [], [], []
    for g, (n_int, seq) in enumerate(zip(spec.intervals_per_game(), game_seqs)):
        rng = np.random.default_rng(seq)
        n_blocks = math.ceil(n_int / spec.lineup_length)
        lineups = np.array([rng.choice(spec.n_players, ON_COURT, replace=False)
                            for _ in range(n_blocks)])
        lineup = np.repeat(lineups, spec.lineup_length, axis=0)[:n_int]
        carrier_slot = rng.integers(ON_COURT, size=n_int)
        carrier = lineup[np.arange(n_int), carrier_slot]
        others = np.array([np.delete(row, k) for row, k in zip(lineup, carrier_slot)])  # (n_int, 4)

        sender = np.repeat(carrier, 4)
        receiver = others.ravel()
        m = 4 * n_int
        X = np.empty((m, N_COVARIATES))
        X[:, 0] = 1.0
        X[:, 1] = np.repeat(rng.binomial(1, 0.5, n_int), 4)
        X[:, 2] = np.repeat(rng.normal(1.5, 0.5, n_int), 4)
        X[:, 3] = np.argsort(rng.random((n_int, 4)), axis=1).ravel() + 1
        X[:, 4] = rng.standard_normal(m)
        X[:, 5:] = np.clip(rng.normal(1 / N_TILES, 1 / N_TILES, (m, 2)), 1e-12, None)

        mean = (np.einsum("ck,ck->c", X, truth.beta[sender, receiver])
                + np.einsum("cr,cr->c", truth.U[g, sender], truth.V[g, receiver]))
        log_hazard = mean + rng.standard_normal(m)
        y = competing_arrivals(log_hazard.reshape(n_int, 4), dt, rng)
        fired = y.any(axis=1)
        first = y.argmax(axis=1)

        interval = np.repeat(np.arange(n_int), 4)
        for t in np.flatnonzero(fired):
            events.append(PassEvent(g, t // spec.lineup_length, int(t), int(carrier[t]),
                                    int(others[t, first[t]])))
        blocks.append(np.column_stack([
            np.full(m, g), interval, sender, receiver, X, np.full(m, dt)]))
        hazards.append(log_hazard)
        labels.append(y.ravel())

    cells = CellTable.from_array(np.vstack(blocks))
    y = np.concatenate(labels)
    meta = {
        "intervals": len(cells) // 4,
        "cells": len(cells),
        "events": len(events),
        "intervals_per_game": spec.intervals_per_game(),
    }
    return SyntheticData(cells, y, events, truth, np.concatenate(hazards), meta)


def temporal_split(cells: CellTable, fraction: float = 0.9) -> np.ndarray:
    """Training mask: per game, the first ``floor(fraction * N_g)`` intervals."""
    if not 0 < fraction < 1:
        raise ModelInputError(f"fraction must lie in (0, 1), got {fraction}")
    train_mask = np.zeros(len(cells), dtype=bool)
    for g in np.unique(cells.game):
        in_game = cells.game == g
        intervals = np.unique(cells.interval[in_game])
        keep = intervals[:math.floor(fraction * len(intervals))]
        train_mask |= in_game & np.isin(cells.interval, keep)
    return train_mask


def split_train_test(data: SyntheticData, fraction: float = 0.9):
    """Per game, the first ``floor(fraction * N_g)`` intervals train and the rest test."""
    cells = data.cells
    train_mask = temporal_split(cells, fraction)

    def part(mask):
        sub = cells.subset(mask)
        keys = set(sub.keys())
        evs = [e for e in data.events if e.cell_key in keys]
        return SyntheticData(sub, data.y[mask], evs, data.truth, data.log_hazard[mask],
                             {"intervals": len(set(zip(sub.game.tolist(), sub.interval.tolist())))})

    return part(train_mask), part(~train_mask)


def oracle_loglik(events, lattice, covariates) -> float:
    """Naive scalar-loop log-likelihood, kept independent of the model code."""
    dt_of = {}
    for rec in covariates:
        key = (rec.game, rec.interval_index, rec.sender, rec.receiver)
        if key in dt_of:
            raise ValueError(f"duplicate covariate record {key}")
        dt_of[key] = rec.interval_length
    fired = set()
    for ev in events:
        fired.add((ev.game, ev.interval_index, ev.sender, ev.receiver))
    cells = lattice.cells
    if len(dt_of) != len(cells):
        raise ValueError("covariates and lattice cover different cells")
    for key in fired:
        if key not in dt_of:
            raise ValueError(f"event {key} has no lattice cell")
    total = 0.0
    for c in range(len(cells)):
        key = (int(cells.game[c]), int(cells.interval[c]), int(cells.sender[c]), int(cells.receiver[c]))
        if key not in dt_of:
            raise ValueError(f"lattice cell {key} has no covariate record")
        h = float(lattice.log_hazard[c])
        if not math.isfinite(h):
            raise ValueError("non-finite log hazard")
        delta = dt_of[key]
        term = -math.exp(h) * delta
        if key in fired:
            term += h + math.log(delta)
        total += term
    return total
