"""Metropolis-within-Gibbs sampler over coefficients, latent factors and log hazards.

One sweep:

1. each observed dyad's 7 coefficients from their conjugate normal full
   conditional given the current log hazards and latent factors;
2. for every game (ascending) and latent column r (ascending), the sender
   column U_g[:, r] then the receiver column V_g[:, r], each entry a
   conjugate normal draw;
3. every log hazard by an independence Metropolis step whose proposal is
   its conditional prior ``N(x.beta + u.v, 1)``, so the acceptance ratio is
   the interval likelihood ratio.

All priors are standard normal.  Players and games are registered to
contiguous indices; reported paths use the original ids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import orthogonal_procrustes

from .core import N_COVARIATES, CellTable, ModelInputError, ModelNumericError

logger = logging.getLogger(__name__)

MODELS = ("latent", "covariates")


class ChainDivergence(ModelNumericError):
    def __init__(self, iteration, parameter):
        super().__init__(f"non-finite {parameter} at iteration {iteration}")
        self.iteration = iteration
        self.parameter = parameter


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 5000
    burn_in: int = 1000
    thin: int = 4
    R: int = 2
    seed: int = 0
    model: str = "latent"

    def __post_init__(self):
        if self.iterations < 1:
            raise ModelInputError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ModelInputError("burn_in must be in [0, iterations)")
        if self.thin < 1:
            raise ModelInputError("thin must be positive")
        if self.R < 1:
            raise ModelInputError("latent dimension R must be >= 1")
        if self.model not in MODELS:
            raise ModelInputError(f"model must be one of {MODELS}, got {self.model!r}")

    @property
    def retained_iterations(self) -> np.ndarray:
        return np.arange(self.burn_in + 1, self.iterations + 1, self.thin)


# -- conjugate draws -------------------------------------------------------

def _chol_inverse_factor(P):
    """``M`` with ``M' M = inv(P)`` for a batch of SPD matrices (upper part of inv(L))."""
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        eye = np.eye(P.shape[-1])
        L = np.linalg.cholesky(P + 1e-10 * eye)
    return np.linalg.inv(L)


def beta_posterior(X, r):
    """Mean and covariance of beta in ``r = X beta + N(0, 1)`` under a N(0, I) prior."""
    X = np.asarray(X, dtype=float).reshape(-1, N_COVARIATES)
    r = np.asarray(r, dtype=float)
    P = np.eye(N_COVARIATES) + X.T @ X
    cov = np.linalg.inv(P)
    return cov @ (X.T @ r), cov


def sample_beta(X, r, rng) -> np.ndarray:
    """One draw from the full conditional of a dyad's coefficients.

    ``X`` holds the dyad's cells over all games and ``r`` the residual log
    hazards ``log theta - u.v``.  With no cells this is a prior draw.
    """
    X = np.asarray(X, dtype=float).reshape(-1, N_COVARIATES)
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ModelNumericError("non-finite residual in coefficient update")
    P = np.eye(N_COVARIATES) + X.T @ X
    Linv = _chol_inverse_factor(P)
    mean = Linv.T @ (Linv @ (X.T @ r))
    return mean + Linv.T @ rng.standard_normal(N_COVARIATES)


def latent_column_posterior(owner, loading, residual, n):
    """Per-player mean and variance of one latent coordinate.

    Model: ``residual_c = a[owner_c] * loading_c + N(0, 1)`` with ``a ~ N(0, 1)``.
    """
    owner = np.asarray(owner, dtype=np.int64)
    loading = np.asarray(loading, dtype=float)
    precision = 1.0 + np.bincount(owner, loading * loading, minlength=n)
    mean = np.bincount(owner, loading * np.asarray(residual, dtype=float), minlength=n) / precision
    return mean, 1.0 / precision


def sample_latent_column(owner, loading, residual, n, rng) -> np.ndarray:
    """Draw U_g[:, r] (owner = senders, loading = V_g[receiver, r]) or the receiver analogue."""
    if not np.all(np.isfinite(residual)):
        raise ModelNumericError("non-finite residual in latent factor update")
    mean, var = latent_column_posterior(owner, loading, residual, n)
    return mean + np.sqrt(var) * rng.standard_normal(n)


def mh_update_lattice(log_hazard, mean, y, interval_length, rng):
    """Independence Metropolis step on every cell.

    Proposes ``mean + N(0, 1)`` and accepts with probability
    ``min(1, p(y | proposal) / p(y | current))``.  Returns the new log hazards
    and the number of accepted proposals.
    """
    proposal = mean + rng.standard_normal(len(mean))
    with np.errstate(over="ignore"):   # an infinite hazard gives log_ratio = -inf: reject
        log_ratio = (y * (proposal - log_hazard)
                     - (np.exp(proposal) - np.exp(log_hazard)) * interval_length)
    # log of a uniform draw is minus a standard exponential
    accept = -rng.standard_exponential(len(mean)) < log_ratio
    return np.where(accept, proposal, log_hazard), int(accept.sum())


def acceptance_probability(y, current, proposal, interval_length):
    with np.errstate(over="ignore"):
        log_ratio = (y * (proposal - current)
                     - (np.exp(proposal) - np.exp(current)) * interval_length)
    return np.exp(np.minimum(log_ratio, 0.0))


# -- data registration -----------------------------------------------------

@dataclass(eq=False)
class ChainData:
    """Cells mapped to contiguous player / game / dyad indices."""

    cells: CellTable
    y: np.ndarray
    players: np.ndarray
    games: np.ndarray
    sender: np.ndarray = field(init=False)
    receiver: np.ndarray = field(init=False)
    game: np.ndarray = field(init=False)

    def __post_init__(self):
        cells = self.cells
        if len(self.y) != len(cells):
            raise ModelInputError(f"{len(self.y)} labels for {len(cells)} cells")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ModelInputError("labels must be 0 or 1")
        self.sender = np.searchsorted(self.players, cells.sender)
        self.receiver = np.searchsorted(self.players, cells.receiver)
        self.game = np.searchsorted(self.games, cells.game)
        n = len(self.players)
        dyad = self.sender * n + self.receiver
        self.dyads, self.dyad_of_cell = np.unique(dyad, return_inverse=True)
        self.game_cells = [np.flatnonzero(self.game == g) for g in range(len(self.games))]
        self.flat_sender = self.game * n + self.sender
        self.flat_receiver = self.game * n + self.receiver

    @classmethod
    def register(cls, cells: CellTable, y) -> "ChainData":
        y = np.asarray(y, dtype=float)
        players = np.unique(np.concatenate([cells.sender, cells.receiver]))
        return cls(cells, y, players, np.unique(cells.game))

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def dyad_pairs(self) -> np.ndarray:
        """(D, 2) raw (sender, receiver) ids of the observed dyads."""
        n = self.n_players
        return np.column_stack([self.players[self.dyads // n], self.players[self.dyads % n]])


@dataclass(eq=False)
class Truth:
    """Generating parameters, indexed like a :class:`ChainData`'s registry.

    ``beta`` is (n, n, 7); ``U`` and ``V`` are (G, n, R).
    """

    beta: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def inner_products(self) -> np.ndarray:
        return np.einsum("gir,gjr->gij", self.U, self.V)


@dataclass(eq=False)
class ChainState:
    beta: np.ndarray          # (n * n, 7)
    U: np.ndarray             # (G, n, R)
    V: np.ndarray             # (G, n, R)
    log_hazard: np.ndarray    # (N,)
    iteration: int = 0
    mh_accept_count: int = 0
    mh_proposal_count: int = 0


@dataclass(eq=False)
class ChainResult:
    config: ChainConfig
    players: np.ndarray
    games: np.ndarray
    dyads: np.ndarray          # (D, 2) raw ids
    iterations: np.ndarray     # (S,)
    beta: np.ndarray           # (S, D, 7)
    U: np.ndarray              # (S, G, n, R); zeros for the covariates model
    V: np.ndarray
    acceptance_rate: float
    traces: dict = field(default_factory=dict)

    @property
    def has_factors(self) -> bool:
        return self.config.model == "latent"

    def inner_products(self) -> np.ndarray:
        """(S, G, n, n) samples of U_g V_g'."""
        return np.einsum("sgir,sgjr->sgij", self.U, self.V)


def _offdiag_mse(A, B):
    n = A.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    return float(np.mean(((A - B)[..., mask]) ** 2))


class _Sweep:
    """Precomputed per-dyad design quantities for step 1."""

    def __init__(self, data: ChainData):
        X = data.cells.X
        D = len(data.dyads)
        N = len(X)
        self.S = sparse.csr_matrix((np.ones(N), (data.dyad_of_cell, np.arange(N))), shape=(D, N))
        gram = np.asarray(self.S @ (X[:, :, None] * X[:, None, :]).reshape(N, -1))
        P = np.eye(N_COVARIATES) + gram.reshape(D, N_COVARIATES, N_COVARIATES)
        self.Linv = _chol_inverse_factor(P)


def _cell_inner(state, data):
    R = state.U.shape[-1]
    us = state.U.reshape(-1, R).take(data.flat_sender, axis=0)
    vs = state.V.reshape(-1, R).take(data.flat_receiver, axis=0)
    return np.einsum("cr,cr->c", us, vs)


def _check_finite(state, iteration):
    for name in ("beta", "U", "V", "log_hazard"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise ChainDivergence(iteration, name)


def initial_state(config: ChainConfig, data: ChainData, rng) -> ChainState:
    n, G = data.n_players, len(data.games)
    beta = rng.standard_normal((n * n, N_COVARIATES))
    if config.model == "latent":
        U = rng.standard_normal((G, n, config.R))
        V = rng.standard_normal((G, n, config.R))
    else:
        U = np.zeros((G, n, config.R))
        V = np.zeros((G, n, config.R))
    state = ChainState(beta, U, V, np.empty(len(data.y)))
    xb = np.einsum("ck,ck->c", data.cells.X, beta[data.dyads].take(data.dyad_of_cell, axis=0))
    state.log_hazard = xb + _cell_inner(state, data)
    return state


def gibbs_sweep(state: ChainState, data: ChainData, sweep: _Sweep, config: ChainConfig, rng,
                update_lattice: bool = True) -> None:
    """One full iteration, in place."""
    X = data.cells.X
    n = data.n_players
    latent = config.model == "latent"

    # step 1: coefficients of every observed dyad
    uv = _cell_inner(state, data) if latent else 0.0
    r = state.log_hazard - uv
    b = np.asarray(sweep.S @ (X * r[:, None]))
    z = rng.standard_normal(b.shape)
    Linv = sweep.Linv
    mean = np.einsum("dki,dk->di", Linv, np.einsum("dij,dj->di", Linv, b))
    beta_obs = mean + np.einsum("dki,dk->di", Linv, z)
    state.beta[data.dyads] = beta_obs
    xb = np.einsum("ck,ck->c", X, beta_obs.take(data.dyad_of_cell, axis=0))
    it = state.iteration + 1
    if not (np.all(np.isfinite(beta_obs)) and np.all(np.isfinite(xb))):
        raise ChainDivergence(it, "beta")

    # step 2: latent columns, game by game
    if latent:
        base = state.log_hazard - xb
        uv = np.empty_like(base)
        for g, idx in enumerate(data.game_cells):
            s, j = data.sender[idx], data.receiver[idx]
            Ug, Vg = state.U[g], state.V[g]
            us, vj = Ug.take(s, axis=0), Vg.take(j, axis=0)
            resid = base[idx] - np.einsum("cr,cr->c", us, vj)
            for col in range(config.R):
                partial = resid + us[:, col] * vj[:, col]
                Ug[:, col] = sample_latent_column(s, vj[:, col], partial, n, rng)
                us[:, col] = Ug[s, col]
                Vg[:, col] = sample_latent_column(j, us[:, col], partial, n, rng)
                vj[:, col] = Vg[j, col]
                resid = partial - us[:, col] * vj[:, col]
            uv[idx] = base[idx] - resid
            if not (np.all(np.isfinite(Ug)) and np.all(np.isfinite(Vg))):
                raise ChainDivergence(it, "U" if not np.all(np.isfinite(Ug)) else "V")

    # step 3: log hazards
    if update_lattice:
        state.log_hazard, accepted = mh_update_lattice(
            state.log_hazard, xb + uv, data.y, data.cells.interval_length, rng)
        state.mh_accept_count += accepted
        state.mh_proposal_count += len(data.y)
    state.iteration += 1


def run_chain(config: ChainConfig, cells: CellTable, y, truth: Truth | None = None,
              callback=None) -> ChainResult:
    """Run one chain and keep every ``thin``-th state after ``burn_in``.

    With ``truth`` (indexed by the registered players and games) the
    per-iteration squared errors of U, V and U V' are recorded in
    ``result.traces``.
    """
    data = ChainData.register(cells, y)
    if not len(cells):
        raise ModelInputError("no cells to fit")
    rng = np.random.default_rng(config.seed)
    state = initial_state(config, data, rng)
    sweep = _Sweep(data)

    keep = config.retained_iterations
    S, D, G, n = len(keep), len(data.dyads), len(data.games), data.n_players
    beta_s = np.empty((S, D, N_COVARIATES))
    U_s = np.zeros((S, G, n, config.R))
    V_s = np.zeros((S, G, n, config.R))
    traces = {}
    if truth is not None:
        target_uv = truth.inner_products()
        traces = {
            "uv_mse": np.empty(config.iterations),
            "u_sq_error": np.empty((config.iterations, G, n)),
            "v_sq_error": np.empty((config.iterations, G, n)),
        }

    slot = 0
    for it in range(1, config.iterations + 1):
        gibbs_sweep(state, data, sweep, config, rng)
        _check_finite(state, it)
        if truth is not None:
            traces["uv_mse"][it - 1] = _offdiag_mse(
                np.einsum("gir,gjr->gij", state.U, state.V), target_uv)
            traces["u_sq_error"][it - 1] = np.sum((state.U - truth.U) ** 2, axis=-1)
            traces["v_sq_error"][it - 1] = np.sum((state.V - truth.V) ** 2, axis=-1)
        if slot < S and it == keep[slot]:
            beta_s[slot] = state.beta[data.dyads]
            U_s[slot] = state.U
            V_s[slot] = state.V
            slot += 1
        if callback is not None:
            callback(it, state)

    rate = state.mh_accept_count / max(state.mh_proposal_count, 1)
    logger.info("chain done: %d iterations, %d retained, MH acceptance %.3f",
                config.iterations, S, rate)
    return ChainResult(config, data.players, data.games, data.dyad_pairs, keep,
                       beta_s, U_s, V_s, rate, traces)


# -- summaries -------------------------------------------------------------

@dataclass(frozen=True)
class ParameterSummary:
    mean: float
    sd: float
    lower: float
    upper: float


@dataclass(eq=False)
class PosteriorSummary:
    parameters: dict            # path -> ParameterSummary
    U_mean: np.ndarray          # (G, n, R)
    V_mean: np.ndarray
    acceptance_rate: float
    n_samples: int
    truth_errors: dict = field(default_factory=dict)

    def to_table(self) -> list[tuple[str, float]]:
        rows = [("acceptance_rate", self.acceptance_rate), ("n_samples", float(self.n_samples))]
        for path, p in self.parameters.items():
            rows += [(f"{path}/mean", p.mean), (f"{path}/sd", p.sd),
                     (f"{path}/lower", p.lower), (f"{path}/upper", p.upper)]
        for key, value in self.truth_errors.items():
            if np.ndim(value) == 0:
                rows.append((f"truth/{key}", float(value)))
        return rows


def parameter_paths(result: ChainResult):
    """Yield ``(path, samples)`` for every reported parameter."""
    for d, (i, j) in enumerate(result.dyads):
        for k in range(N_COVARIATES):
            yield f"beta/{i}/{j}/{k}", result.beta[:, d, k]
    if result.has_factors:
        for name, arr in (("U", result.U), ("V", result.V)):
            for g, game in enumerate(result.games):
                for p, player in enumerate(result.players):
                    for col in range(result.config.R):
                        yield f"{name}/{game}/{player}/{col}", arr[:, g, p, col]


def procrustes_align(U, V, U_true, V_true):
    """Rotate (U, V) jointly by the orthogonal matrix closest to the truth."""
    Q, _ = orthogonal_procrustes(np.vstack([U, V]), np.vstack([U_true, V_true]))
    return U @ Q, V @ Q


def summarize(result: ChainResult, truth: Truth | None = None) -> PosteriorSummary:
    S = len(result.iterations)
    if S < 2:
        raise ModelInputError("summaries need at least two retained samples")
    params = {}
    for path, x in parameter_paths(result):
        lo, hi = np.quantile(x, [0.025, 0.975])
        m = float(x.mean())
        # heavy tails can push the mean outside the central interval; widen to keep lower <= mean <= upper
        params[path] = ParameterSummary(m, float(x.std(ddof=1)), min(float(lo), m), max(float(hi), m))
    errors = {}
    if truth is not None and result.has_factors:
        uv = result.inner_products()
        target = truth.inner_products()
        errors["uv_mse_trace"] = np.array([_offdiag_mse(uv[s], target) for s in range(S)])
        errors["uv_mse"] = float(errors["uv_mse_trace"].mean())
        errors["u_sq_error_trace"] = np.sum((result.U - truth.U) ** 2, axis=-1)
        errors["v_sq_error_trace"] = np.sum((result.V - truth.V) ** 2, axis=-1)
        aligned = np.empty((S, len(result.games)))
        for s in range(S):
            for g in range(len(result.games)):
                Ua, Va = procrustes_align(result.U[s, g], result.V[s, g], truth.U[g], truth.V[g])
                aligned[s, g] = (np.sum((Ua - truth.U[g]) ** 2)
                                 + np.sum((Va - truth.V[g]) ** 2)) / (2 * Ua.size)
        errors["aligned_factor_mse_trace"] = aligned
        errors["aligned_factor_mse"] = float(aligned.mean())
    return PosteriorSummary(params, result.U.mean(axis=0), result.V.mean(axis=0),
                            result.acceptance_rate, S, errors)
