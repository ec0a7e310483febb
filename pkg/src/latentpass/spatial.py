"""Thin-plate spline estimates of player spatial effect fields on the half court.

Locations are binned into 1 ft x 1 ft tiles; the normalised counts are
smoothed by a thin-plate spline whose knots are the tile centres, with the
smoothing parameter picked by generalised cross-validation.  Fields are
rescaled so that their midpoint-rule integral over the court is one.

The spline with kernel ``eta(r) = r^2 log r / (8 pi)`` minimises

    sum_k (t_k - f(c_k))^2 + lam * J(f),

where ``J`` is the integrated squared Frobenius norm of the Hessian.  All
fits on the same knot set share one eigendecomposition, so trying many
smoothing values (or many players) costs a few matrix-vector products each.
"""

from __future__ import annotations

import functools
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import ModelInputError, ModelNumericError, PositionClass

logger = logging.getLogger(__name__)

COURT_LENGTH = 47
COURT_WIDTH = 50
N_TILES = COURT_LENGTH * COURT_WIDTH
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4, 4, 25).tolist())

FIELD_SCHEMA = "latentpass-field v1"


class SpatialFitError(ModelNumericError):
    pass


@dataclass(frozen=True)
class CourtLocation:
    x: float
    y: float

    @property
    def on_court(self) -> bool:
        return 0.0 <= self.x <= COURT_LENGTH and 0.0 <= self.y <= COURT_WIDTH


def tile_centers() -> np.ndarray:
    """(2350, 2) tile centres; tile ``k = ix * 50 + iy`` is centred at (ix + .5, iy + .5)."""
    ix, iy = np.meshgrid(np.arange(COURT_LENGTH), np.arange(COURT_WIDTH), indexing="ij")
    return np.column_stack([ix.ravel() + 0.5, iy.ravel() + 0.5])


@dataclass(frozen=True, eq=False)
class TileGrid:
    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (N_TILES,):
            raise ModelInputError(f"a tile grid has {N_TILES} counts, got shape {self.counts.shape}")

    @property
    def centers(self) -> np.ndarray:
        return tile_centers()

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def targets(self) -> np.ndarray:
        if self.total == 0:
            raise ModelInputError("cannot normalise an empty tile grid")
        return self.counts / self.total


def _as_points(locations) -> np.ndarray:
    if isinstance(locations, np.ndarray):
        pts = locations.astype(float, copy=False)
    else:
        pts = np.array([(p.x, p.y) if isinstance(p, CourtLocation) else p for p in locations],
                       dtype=float)
    if pts.size == 0:
        return np.empty((0, 2))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ModelInputError(f"locations must be (m, 2), got shape {pts.shape}")
    return pts


def tile_counts(locations) -> TileGrid:
    """Count locations per tile, clipping off-court points onto the boundary."""
    pts = _as_points(locations)
    if len(pts) == 0:
        raise ModelInputError("cannot estimate a field from zero locations")
    if not np.all(np.isfinite(pts)):
        raise ModelInputError("non-finite court location")
    outside = ~((pts[:, 0] >= 0) & (pts[:, 0] <= COURT_LENGTH)
                & (pts[:, 1] >= 0) & (pts[:, 1] <= COURT_WIDTH))
    if outside.any():
        logger.warning("clipped %d off-court locations to the boundary", int(outside.sum()))
    ix = np.clip(np.floor(pts[:, 0]).astype(np.int64), 0, COURT_LENGTH - 1)
    iy = np.clip(np.floor(pts[:, 1]).astype(np.int64), 0, COURT_WIDTH - 1)
    counts = np.bincount(ix * COURT_WIDTH + iy, minlength=N_TILES)
    return TileGrid(counts.astype(np.int64))


def tps_kernel(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, r * r * np.log(r), 0.0)
    return out / (8 * np.pi)


def _distances(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


class ThinPlateBasis:
    """Precomputed thin-plate decomposition for a fixed set of knots.

    With ``T = [1, x, y]`` at the knots, ``T = Q1 R`` and ``Q2`` spanning the
    orthogonal complement, the eigendecomposition ``Q2' E Q2 = G diag(e) G'``
    gives every smoothing level in closed form.
    """

    def __init__(self, points):
        points = np.array(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ModelInputError(f"knots must be (K, 2), got shape {points.shape}")
        T = np.column_stack([np.ones(len(points)), points])
        if len(points) < 3 or np.linalg.matrix_rank(T) < 3:
            raise SpatialFitError(
                f"degenerate knot configuration: {len(points)} knots, "
                f"affine rank {np.linalg.matrix_rank(T) if len(points) else 0} < 3 "
                "(need at least three non-collinear knots)")
        Q, R = np.linalg.qr(T, mode="complete")
        self.points = points
        self.E = tps_kernel(_distances(points, points))
        self.Q1, self.R = Q[:, :3], R[:3]
        self.Q2 = Q[:, 3:]
        e, G = np.linalg.eigh(self.Q2.T @ self.E @ self.Q2)
        if len(e) and e.min() <= 0:
            raise SpatialFitError(
                f"thin-plate system is singular for {len(points)} knots (min eigenvalue {e.min():.3g})")
        self.eigenvalues = e
        self.rotation = self.Q2 @ G  # K x (K-3), orthonormal columns

    @property
    def size(self) -> int:
        return len(self.points)

    def solve(self, targets, lam: float):
        """Kernel weights and affine coefficients of the penalised fit."""
        targets = np.asarray(targets, dtype=float)
        if targets.shape != (self.size,):
            raise ModelInputError(f"expected {self.size} targets, got shape {targets.shape}")
        if not lam >= 0:
            raise ModelInputError(f"smoothing parameter must be >= 0, got {lam}")
        z = self.rotation.T @ targets
        alpha = self.rotation @ (z / (self.eigenvalues + lam))
        rest = targets - self.E @ alpha - lam * alpha
        affine = np.linalg.solve(self.R, self.Q1.T @ rest)
        return alpha, affine

    def gcv_scores(self, targets, lambdas) -> np.ndarray:
        """``K * RSS / (K - tr A)^2`` for each smoothing value.

        With ``z = rotation' t`` the residual is ``lam * rotation diag(1/(e+lam)) z``
        and ``K - tr A = sum lam/(e+lam)``; the common factor ``lam^2`` cancels,
        which also gives the finite interpolation limit at ``lam = 0``.
        Components of ``z`` at rounding level are taken as exact zeros so that
        affine targets score 0 at every smoothing level.
        """
        targets = np.asarray(targets, dtype=float)
        z = self.rotation.T @ targets
        z[np.abs(z) <= self.size * np.finfo(float).eps * np.linalg.norm(targets)] = 0.0
        scores = []
        for lam in lambdas:
            inv = 1.0 / (self.eigenvalues + lam)
            scores.append(self.size * np.sum((z * inv) ** 2) / np.sum(inv) ** 2)
        return np.array(scores)

    def influence_trace(self, lam: float) -> float:
        if lam == 0:
            return float(self.size)
        return float(self.size - np.sum(lam / (self.eigenvalues + lam)))


@functools.lru_cache(maxsize=1)
def court_basis() -> ThinPlateBasis:
    return ThinPlateBasis(tile_centers())


@dataclass(frozen=True, eq=False)
class SpatialField:
    """A thin-plate function on the court together with its tile-centre values."""

    knots: np.ndarray
    alpha: np.ndarray
    affine: np.ndarray
    lam: float
    grid_values: np.ndarray

    def __call__(self, points) -> np.ndarray:
        return evaluate_field(self, points)

    @property
    def integral(self) -> float:
        return float(np.sum(self.grid_values))

    def argmax_tile(self) -> int:
        return int(np.argmax(self.grid_values))

    @classmethod
    def from_grid_values(cls, grid_values, lam: float) -> "SpatialField":
        """Rebuild the field from its values at the tile centres.

        A thin-plate function with knots at the tile centres is the unique
        interpolant of its own tile values, so this recovers the coefficients.
        """
        grid_values = np.asarray(grid_values, dtype=float)
        basis = court_basis()
        alpha, affine = basis.solve(grid_values, 0.0)
        return cls(basis.points, alpha, affine, lam, grid_values)


def _evaluate(knots, alpha, affine, pts, chunk=4096):
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        out[start:start + chunk] = (tps_kernel(_distances(p, knots)) @ alpha
                                    + affine[0] + p @ affine[1:])
    return out


def evaluate_field(field: SpatialField, points) -> np.ndarray | float:
    """Field value at one location or an (m, 2) array of locations."""
    if isinstance(points, CourtLocation):
        return float(_evaluate(field.knots, field.alpha, field.affine,
                               np.array([[points.x, points.y]]))[0])
    pts = _as_points(points)
    return _evaluate(field.knots, field.alpha, field.affine, pts)


def tps_smooth(targets, lam: float, basis: ThinPlateBasis | None = None) -> SpatialField:
    """Penalised thin-plate fit of ``targets`` at the knots of ``basis`` (no normalisation)."""
    basis = court_basis() if basis is None else basis
    alpha, affine = basis.solve(targets, lam)
    grid = _evaluate(basis.points, alpha, affine, basis.points)
    if not np.all(np.isfinite(grid)):
        raise SpatialFitError(f"non-finite thin-plate fit at lambda={lam}")
    return SpatialField(basis.points, alpha, affine, float(lam), grid)


def normalize_field(field: SpatialField) -> SpatialField:
    total = field.integral  # tiles are 1 ft^2
    if not np.isfinite(total) or abs(total) < 1e-300:
        raise ModelNumericError(f"cannot normalise a field with integral {total}")
    return SpatialField(field.knots, field.alpha / total, field.affine / total, field.lam,
                        field.grid_values / total)


def tps_fit(grid: TileGrid, lam: float) -> SpatialField:
    """Smooth the normalised tile counts of ``grid`` and rescale to unit integral."""
    return normalize_field(tps_smooth(grid.targets(), lam))


def _select(lambdas, scores) -> float:
    lambdas = np.asarray(lambdas, dtype=float)
    finite = np.isfinite(scores)
    if not finite.any():
        raise SpatialFitError("every GCV score is non-finite")
    best = scores[finite].min()
    tied = finite & (scores <= best + 1e-9 * abs(best) + 1e-300)
    return float(lambdas[tied].max())


def gcv_select(grid, lambda_grid=DEFAULT_LAMBDA_GRID, basis: ThinPlateBasis | None = None) -> float:
    """The smoothing value in ``lambda_grid`` with the smallest GCV score.

    ``grid`` is a :class:`TileGrid` or a raw target vector on ``basis``'s knots.
    Near-ties (relative 1e-9) resolve toward the larger value.
    """
    lambdas = list(lambda_grid)
    if not lambdas:
        raise ModelInputError("lambda_grid is empty")
    if any(not lam >= 0 for lam in lambdas):
        raise ModelInputError("smoothing values must be >= 0")
    targets = grid.targets() if isinstance(grid, TileGrid) else np.asarray(grid, dtype=float)
    basis = court_basis() if basis is None else basis
    return _select(lambdas, basis.gcv_scores(targets, lambdas))


def uniform_field() -> SpatialField:
    basis = court_basis()
    value = 1.0 / N_TILES
    return SpatialField(basis.points, np.zeros(N_TILES), np.array([value, 0.0, 0.0]),
                        math.inf, np.full(N_TILES, value))


def fit_field(locations, lam: float | None = None, lambda_grid=DEFAULT_LAMBDA_GRID) -> SpatialField:
    """Tile, pick lambda by GCV unless given, fit and normalise."""
    grid = tile_counts(locations)
    if lam is None:
        lam = gcv_select(grid, lambda_grid)
    return tps_fit(grid, lam)


@dataclass(frozen=True)
class PassLocation:
    """Where the passer and the receiver stood for one completed pass."""

    game: int
    sender: int
    receiver: int
    receiver_position: PositionClass
    sender_xy: tuple[float, float]
    receiver_xy: tuple[float, float]


@dataclass(frozen=True, eq=False)
class PlayerFields:
    player: int
    xi: SpatialField
    xi_tilde: Mapping[PositionClass, SpatialField]


def build_player_fields(passes: Iterable[PassLocation], player: int, lam: float | None = None,
                        lambda_grid=DEFAULT_LAMBDA_GRID) -> PlayerFields:
    """Passing field of ``player`` and one receiving field per teammate position.

    A position with no received passes gets the uniform field.
    """
    own = [p for p in passes if p.sender == player]
    if not own:
        raise ModelInputError(f"player {player} has no recorded passes")
    xi = fit_field([p.sender_xy for p in own], lam, lambda_grid)
    xi_tilde = {}
    for pos in PositionClass:
        received = [p.receiver_xy for p in own if p.receiver_position == pos]
        xi_tilde[pos] = fit_field(received, lam, lambda_grid) if received else uniform_field()
    return PlayerFields(player, xi, xi_tilde)


def write_field(field: SpatialField, stream, *, player: int, kind: str,
                position: PositionClass | None = None) -> None:
    """Write one row per tile: ``tile_x tile_y value`` after a key=value header."""
    pos = position.value if position is not None else "-"
    stream.write(f"# {FIELD_SCHEMA}\n")
    stream.write(f"# player={player}\n# kind={kind}\n# position={pos}\n# lambda={field.lam!r}\n")
    stream.write("tile_x\ttile_y\tvalue\n")
    values = field.grid_values
    for k in range(N_TILES):
        ix, iy = divmod(k, COURT_WIDTH)
        stream.write(f"{ix}\t{iy}\t{float(values[k])!r}\n")


def read_field(stream) -> tuple[dict, SpatialField]:
    """Inverse of :func:`write_field`; returns the header dict and the field."""
    first = stream.readline().rstrip("\n")
    if first != f"# {FIELD_SCHEMA}":
        raise ModelInputError(f"not a field file (header {first!r})")
    header = {}
    line = stream.readline()
    while line.startswith("# "):
        key, _, value = line[2:].rstrip("\n").partition("=")
        header[key] = value
        line = stream.readline()
    if line.rstrip("\n").split("\t") != ["tile_x", "tile_y", "value"]:
        raise ModelInputError("missing column header in field file")
    values = np.full(N_TILES, np.nan)
    for line in stream:
        ix, iy, value = line.rstrip("\n").split("\t")
        values[int(ix) * COURT_WIDTH + int(iy)] = float(value)
    if np.isnan(values).any():
        raise ModelInputError("field file does not cover every tile")
    meta = {
        "player": int(header["player"]),
        "kind": header["kind"],
        "position": None if header["position"] == "-" else PositionClass(header["position"]),
        "lambda": float(header["lambda"]),
    }
    return meta, SpatialField.from_grid_values(values, meta["lambda"])


def field_to_text(field: SpatialField, **header) -> str:
    buf = io.StringIO()
    write_field(field, buf, **header)
    return buf.getvalue()


class SpatialFieldEstimator(TransformerMixin, BaseEstimator):
    """Estimate a unit-integral spatial field from court locations.

    Parameters
    ----------
    smoothing : float or None
        Thin-plate smoothing parameter.  ``None`` selects it by GCV over
        ``lambda_grid``.
    lambda_grid : sequence of float, optional
        Candidate smoothing values; 25 log-spaced values in [1e-4, 1e4] by default.

    Attributes
    ----------
    field_ : SpatialField
    lambda_ : float
    counts_ : ndarray of shape (2350,)
    """

    def __init__(self, smoothing=None, lambda_grid=None):
        self.smoothing = smoothing
        self.lambda_grid = lambda_grid

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ModelInputError(f"expected (x, y) locations, got {X.shape[1]} columns")
        grid = tile_counts(X)
        lambdas = DEFAULT_LAMBDA_GRID if self.lambda_grid is None else self.lambda_grid
        self.lambda_ = gcv_select(grid, lambdas) if self.smoothing is None else float(self.smoothing)
        self.field_ = tps_fit(grid, self.lambda_)
        self.counts_ = grid.counts
        return self

    def predict(self, X):
        check_is_fitted(self, "field_")
        X = check_array(X)
        return evaluate_field(self.field_, X)

    def transform(self, X):
        return self.predict(X)[:, None]
