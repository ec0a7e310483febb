"""Domain types, the log-hazard linear predictor and the interval likelihood.

A fitted data set is held column-wise in a :class:`CellTable`: one row per
(game, interval, sender, receiver) cell, i.e. per ball carrier and on-court
teammate in an observation interval.  The row order of a table is the order
of every per-cell array used elsewhere (labels, log hazards).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, wrightomega

N_TIME_COVARIATES = 5
N_COVARIATES = 7

# Column layout of the flat covariate matrix accepted by the estimators.
TABLE_COLUMNS = (
    "game",
    "interval",
    "sender",
    "receiver",
    "w1",
    "w2",
    "w3",
    "w4",
    "w5",
    "xi_sender",
    "xi_receiver",
    "interval_length",
)
_KEY = slice(0, 4)
_X = slice(4, 11)


class ModelInputError(ValueError):
    """Inputs with the wrong shape or inconsistent content."""


class ModelNumericError(ArithmeticError):
    """A non-finite quantity where a finite one is required."""


class PositionClass(str, enum.Enum):
    GUARD = "G"
    FORWARD = "F"
    CENTER = "C"


@dataclass(frozen=True)
class PassEvent:
    game: int
    possession: int
    interval_index: int
    sender: int
    receiver: int

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ModelInputError(f"pass from player {self.sender} to itself")

    @property
    def cell_key(self) -> tuple[int, int, int, int]:
        return (self.game, self.interval_index, self.sender, self.receiver)


@dataclass(frozen=True)
class CovariateRecord:
    """Covariates of one (dyad, interval) cell.

    ``w`` holds the five time-varying terms: constant, dribble indicator,
    log nearest-defender distance, closeness rank and openness.  Together
    with the two spatial field evaluations they make up the 7-vector used
    in the linear predictor (see :attr:`x`).
    """

    game: int
    interval_index: int
    sender: int
    receiver: int
    w: tuple[float, float, float, float, float]
    xi_at_sender: float
    xi_at_receiver: float
    interval_length: float

    def __post_init__(self):
        if len(self.w) != N_TIME_COVARIATES:
            raise ModelInputError(f"w must have 5 entries, got {len(self.w)}")
        if self.w[0] != 1.0:
            raise ModelInputError("w[0] is the constant term and must equal 1")
        if self.w[3] not in (1, 2, 3, 4):
            raise ModelInputError(f"closeness rank must be in 1..4, got {self.w[3]}")
        if not self.interval_length > 0:
            raise ModelInputError("interval_length must be positive")

    @property
    def cell_key(self) -> tuple[int, int, int, int]:
        return (self.game, self.interval_index, self.sender, self.receiver)

    @property
    def x(self) -> np.ndarray:
        return np.array([*self.w, self.xi_at_sender, self.xi_at_receiver], dtype=float)


@dataclass(frozen=True)
class DyadCoefficients:
    eta: tuple[float, ...]
    gamma: float
    gamma_tilde: float

    @classmethod
    def from_vector(cls, beta) -> "DyadCoefficients":
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (N_COVARIATES,):
            raise ModelInputError(f"beta must be a 7-vector, got shape {beta.shape}")
        return cls(tuple(beta[:5].tolist()), float(beta[5]), float(beta[6]))

    @property
    def vector(self) -> np.ndarray:
        return np.array([*self.eta, self.gamma, self.gamma_tilde], dtype=float)


@dataclass(frozen=True)
class LatentFactorSet:
    game: int
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if np.shape(self.U) != np.shape(self.V) or np.ndim(self.U) != 2:
            raise ModelInputError("U and V must be n x R matrices of equal shape")

    @property
    def R(self) -> int:
        return self.U.shape[1]


@dataclass(frozen=True, eq=False)
class CellTable:
    """Column store of covariate records.

    ``X`` is the (N, 7) covariate matrix, the remaining arrays have length N.
    """

    game: np.ndarray
    interval: np.ndarray
    sender: np.ndarray
    receiver: np.ndarray
    X: np.ndarray
    interval_length: np.ndarray
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.game)
        for name in ("interval", "sender", "receiver", "interval_length"):
            if len(getattr(self, name)) != n:
                raise ModelInputError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.X.shape != (n, N_COVARIATES):
            raise ModelInputError(f"X must have shape ({n}, 7), got {self.X.shape}")
        if np.any(self.sender == self.receiver):
            raise ModelInputError("cell with sender equal to receiver")
        if n and not np.all(self.interval_length > 0):
            raise ModelInputError("interval_length must be positive")

    def __len__(self):
        return len(self.game)

    @classmethod
    def from_array(cls, A) -> "CellTable":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[1] != len(TABLE_COLUMNS):
            raise ModelInputError(f"expected an (N, {len(TABLE_COLUMNS)}) array, got shape {A.shape}")
        keys = A[:, _KEY]
        if np.any(keys != np.round(keys)) or np.any(keys < 0):
            raise ModelInputError("game, interval, sender and receiver must be non-negative integers")
        keys = keys.astype(np.int64)
        return cls(
            keys[:, 0], keys[:, 1], keys[:, 2], keys[:, 3],
            np.ascontiguousarray(A[:, _X]), A[:, 11].copy(),
        )

    @classmethod
    def from_records(cls, records: Sequence[CovariateRecord]) -> "CellTable":
        if not records:
            return cls.from_array(np.empty((0, len(TABLE_COLUMNS))))
        return cls.from_array(np.array([
            [r.game, r.interval_index, r.sender, r.receiver, *r.w,
             r.xi_at_sender, r.xi_at_receiver, r.interval_length]
            for r in records
        ]))

    def to_array(self) -> np.ndarray:
        return np.column_stack([
            self.game, self.interval, self.sender, self.receiver, self.X, self.interval_length,
        ]).astype(float)

    def to_records(self) -> list[CovariateRecord]:
        return [
            CovariateRecord(int(g), int(t), int(i), int(j), tuple(x[:5].tolist()),
                            float(x[5]), float(x[6]), float(dt))
            for g, t, i, j, x, dt in zip(self.game, self.interval, self.sender,
                                         self.receiver, self.X, self.interval_length)
        ]

    def subset(self, mask) -> "CellTable":
        return CellTable(self.game[mask], self.interval[mask], self.sender[mask],
                         self.receiver[mask], self.X[mask], self.interval_length[mask])

    def keys(self) -> Iterable[tuple[int, int, int, int]]:
        return zip(self.game.tolist(), self.interval.tolist(),
                   self.sender.tolist(), self.receiver.tolist())

    @property
    def index(self) -> dict:
        """Map from cell key to row; raises on duplicate cells."""
        if self._index is None:
            index = {}
            for row, key in enumerate(self.keys()):
                if key in index:
                    raise ModelInputError(f"duplicate covariate record for cell {key}")
                index[key] = row
            object.__setattr__(self, "_index", index)
        return self._index

    @property
    def n_players(self) -> int:
        if not len(self):
            return 0
        return int(max(self.sender.max(), self.receiver.max())) + 1

    @property
    def games(self) -> np.ndarray:
        return np.unique(self.game)


@dataclass(frozen=True, eq=False)
class HazardLattice:
    """Latent log hazards, one per cell of ``cells`` in the same row order."""

    cells: CellTable
    log_hazard: np.ndarray

    def __post_init__(self):
        if self.log_hazard.shape != (len(self.cells),):
            raise ModelInputError("log_hazard must have one entry per cell")


def label_cells(events: Iterable[PassEvent], cells: CellTable) -> np.ndarray:
    """Return the 0/1 pass indicator for every cell of ``cells``."""
    y = np.zeros(len(cells))
    seen = set()
    index = cells.index
    for ev in events:
        row = index.get(ev.cell_key)
        if row is None:
            raise ModelInputError(f"pass event {ev} has no covariate cell")
        slot = (ev.game, ev.interval_index)
        if slot in seen:
            raise ModelInputError(f"more than one pass in game {ev.game} interval {ev.interval_index}")
        seen.add(slot)
        y[row] = 1.0
    return y


def linear_predictor(x, beta, u, v) -> float:
    """Mean log hazard ``x . beta + u . v`` of one cell."""
    x = np.asarray(x, dtype=float)
    beta = beta.vector if isinstance(beta, DyadCoefficients) else np.asarray(beta, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if x.shape != (N_COVARIATES,) or beta.shape != (N_COVARIATES,):
        raise ModelInputError(f"x and beta must be 7-vectors, got {x.shape} and {beta.shape}")
    if u.ndim != 1 or u.shape != v.shape:
        raise ModelInputError(f"u and v must be R-vectors of equal length, got {u.shape} and {v.shape}")
    return float(x @ beta + u @ v)


def interval_loglik(y, log_hazard, interval_length):
    """Poisson log-likelihood of a 0/1 count in an interval of constant hazard.

    ``y * (log_hazard + log(dt)) - exp(log_hazard) * dt``; broadcasts over arrays.
    """
    log_hazard = np.asarray(log_hazard, dtype=float)
    interval_length = np.asarray(interval_length, dtype=float)
    if not np.all(np.isfinite(log_hazard)):
        raise ModelNumericError("non-finite log hazard")
    if not np.all(interval_length > 0):
        raise ModelInputError("interval_length must be positive")
    out = y * (log_hazard + np.log(interval_length)) - np.exp(log_hazard) * interval_length
    return float(out) if out.ndim == 0 else out


_HERMITE_NODES, _HERMITE_WEIGHTS = np.polynomial.hermite.hermgauss(32)


def marginal_interval_loglik(y, mean_log_hazard, interval_length):
    """Interval log-likelihood with the unit-variance log-hazard residual integrated out.

    Computes ``log E[p(y | h)]`` for ``h ~ N(mean_log_hazard, 1)`` and the
    Poisson ``p(y | h)`` of :func:`interval_loglik`.  The integrand is
    log-concave in ``h``, so each cell uses Gauss-Hermite quadrature centred
    on its mode with the Laplace scale; this stays accurate when the mass
    sits far in the tail of the residual.
    """
    m = np.asarray(mean_log_hazard, dtype=float)
    scalar = m.ndim == 0
    m = np.atleast_1d(m)
    y = np.broadcast_to(np.asarray(y, dtype=float), m.shape)
    dt = np.asarray(interval_length, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ModelNumericError("non-finite log hazard")
    if not np.all(dt > 0):
        raise ModelInputError("interval_length must be positive")
    log_dt = np.broadcast_to(np.log(dt), m.shape)

    # mode solves y - exp(h) dt = h - m
    h = m + y - np.real(wrightomega(m + y + log_dt))
    scale = np.sqrt(2.0) / np.sqrt(np.exp(np.minimum(h + log_dt, 700.0)) + 1.0)
    pts = h[:, None] + scale[:, None] * _HERMITE_NODES
    lg = log_dt[:, None]
    g = (y[:, None] * (pts + lg) - np.exp(pts + lg)
         - 0.5 * (pts - m[:, None]) ** 2 - 0.5 * np.log(2 * np.pi))
    out = logsumexp(g + _HERMITE_NODES ** 2, b=_HERMITE_WEIGHTS, axis=1) + np.log(scale)
    return float(out[0]) if scalar else out


def sequence_loglik(events: Iterable[PassEvent], lattice: HazardLattice,
                    covariates: CellTable | Sequence[CovariateRecord]) -> float:
    """Total log-likelihood of ``events`` over every cell of the lattice.

    ``covariates`` supplies the interval lengths; it must cover exactly the
    lattice's cells (in any order).
    """
    if not isinstance(covariates, CellTable):
        covariates = CellTable.from_records(list(covariates))
    cells = lattice.cells
    if len(covariates) != len(cells):
        raise ModelInputError(
            f"{len(covariates)} covariate records for {len(cells)} lattice cells")
    if cells is covariates:
        dt = covariates.interval_length
    else:
        index = covariates.index
        try:
            rows = np.fromiter((index[k] for k in cells.keys()), dtype=np.int64, count=len(cells))
        except KeyError as exc:
            raise ModelInputError(f"lattice cell {exc.args[0]} has no covariate record") from None
        dt = covariates.interval_length[rows]
    y = label_cells(events, cells)
    return float(np.sum(interval_loglik(y, lattice.log_hazard, dt)))
