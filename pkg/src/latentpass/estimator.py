"""scikit-learn style front end for the passing model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .core import CellTable, ModelInputError, marginal_interval_loglik
from .sampler import ChainConfig, ChainResult, Truth, run_chain, summarize


def as_cells(X) -> CellTable:
    return X if isinstance(X, CellTable) else CellTable.from_array(X)


@dataclass(frozen=True)
class LoglikReport:
    """Log-likelihood at the posterior-mean parameters and over retained samples."""

    posterior_mean: float
    sample_mean: float
    sample_sd: float
    n_cells: int

    def __str__(self):
        return f"{self.sample_mean:.2f} ± {self.sample_sd:.2f}"


class _Lookup:
    """Maps evaluation cells onto a fitted chain's dyads, players and games."""

    def __init__(self, result: ChainResult, cells: CellTable):
        dyad_row = {(int(i), int(j)): d for d, (i, j) in enumerate(result.dyads)}
        self.dyad = np.array([dyad_row.get(k, -1) for k in zip(cells.sender.tolist(),
                                                                 cells.receiver.tolist())],
                             dtype=np.int64)
        player_row = {int(p): k for k, p in enumerate(result.players)}
        game_row = {int(g): k for k, g in enumerate(result.games)}
        self.sender = np.array([player_row.get(p, -1) for p in cells.sender.tolist()], dtype=np.int64)
        self.receiver = np.array([player_row.get(p, -1) for p in cells.receiver.tolist()], dtype=np.int64)
        self.game = np.array([game_row.get(g, -1) for g in cells.game.tolist()], dtype=np.int64)
        self.known_dyad = self.dyad >= 0
        self.known_uv = (self.sender >= 0) & (self.receiver >= 0) & (self.game >= 0)

    def mean_log_hazard(self, X, beta, inner):
        """``x.beta + u.v`` per cell; beta is (D, 7), inner is (G, n, n).

        Dyads, players or games unseen in training contribute their prior mean, 0.
        """
        out = np.zeros(len(X))
        k = self.known_dyad
        out[k] = np.einsum("ck,ck->c", X[k], beta[self.dyad[k]])
        m = self.known_uv
        out[m] += inner[self.game[m], self.sender[m], self.receiver[m]]
        return out


class LatentPassingModel(BaseEstimator):
    """Pass hazards with dyad coefficients and per-game latent sender/receiver factors.

    ``X`` is an (N, 12) array with columns ``core.TABLE_COLUMNS`` (or a
    :class:`~latentpass.core.CellTable`) and ``y`` the 0/1 pass indicator per cell.

    Parameters
    ----------
    model : {"latent", "covariates"}
        ``"covariates"`` pins every latent factor at zero.
    n_factors : int
        Latent dimension R.
    iterations, burn_in, thin : int
        Chain length, discarded prefix and retention stride.
    random_state : int, Generator or None
    """

    def __init__(self, model="latent", n_factors=2, iterations=5000, burn_in=1000, thin=4,
                 random_state=None):
        self.model = model
        self.n_factors = n_factors
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state

    def _config(self) -> ChainConfig:
        if isinstance(self.random_state, (int, np.integer)):
            seed = int(self.random_state)
        else:
            seed = int(check_random_state(self.random_state).randint(0, 2**31 - 1))
        return ChainConfig(self.iterations, self.burn_in, self.thin, self.n_factors, seed, self.model)

    def fit(self, X, y, truth: Truth | None = None):
        cells = as_cells(X)
        y = np.asarray(y, dtype=float)
        if y.shape != (len(cells),):
            raise ModelInputError(f"y must have one label per cell, got shape {y.shape}")
        self.chain_ = run_chain(self._config(), cells, y, truth=truth)
        self.summary_ = summarize(self.chain_, truth) if len(self.chain_.iterations) >= 2 else None
        self.beta_ = self.chain_.beta.mean(axis=0)
        self.inner_products_ = self.chain_.inner_products().mean(axis=0)
        self.dyads_ = self.chain_.dyads
        self.players_ = self.chain_.players
        self.games_ = self.chain_.games
        return self

    def predict_log_hazard(self, X) -> np.ndarray:
        """Posterior-mean ``x.beta + u.v`` per cell (residual term excluded)."""
        check_is_fitted(self, "chain_")
        cells = as_cells(X)
        return _Lookup(self.chain_, cells).mean_log_hazard(cells.X, self.beta_, self.inner_products_)

    def loglik_report(self, X, y) -> LoglikReport:
        """Held-out interval log-likelihood with the log-hazard residual integrated out."""
        check_is_fitted(self, "chain_")
        return loglik_report(self.chain_, X, y)

    def score(self, X, y) -> float:
        """Mean over retained samples of the log-likelihood of ``(X, y)``."""
        return self.loglik_report(X, y).sample_mean


def loglik_report(draws, X, y) -> LoglikReport:
    """Log-likelihood of ``(X, y)`` under posterior draws.

    ``draws`` is a :class:`~latentpass.sampler.ChainResult` or anything with
    the same ``players``, ``games``, ``dyads``, ``iterations``, ``beta`` and
    ``inner_products()``.  A cell's log hazard is ``x.beta + u.v`` plus a
    unit-variance residual that is unknown for new data, so each cell
    contributes the likelihood averaged over that residual.  The point value
    uses the posterior means of ``beta`` and ``U V'``.
    """
    cells = as_cells(X)
    if not len(cells):
        raise ModelInputError("cannot evaluate an empty data set")
    y = np.asarray(y, dtype=float)
    if y.shape != (len(cells),):
        raise ModelInputError(f"y must have one label per cell, got shape {y.shape}")
    look = _Lookup(draws, cells)
    dt = cells.interval_length
    inner = draws.inner_products()
    point = float(np.sum(marginal_interval_loglik(
        y, look.mean_log_hazard(cells.X, draws.beta.mean(axis=0), inner.mean(axis=0)), dt)))
    per_sample = np.array([
        np.sum(marginal_interval_loglik(y, look.mean_log_hazard(cells.X, draws.beta[s], inner[s]), dt))
        for s in range(len(draws.iterations))
    ])
    sd = float(per_sample.std(ddof=1)) if len(per_sample) > 1 else 0.0
    return LoglikReport(point, float(per_sample.mean()), sd, len(cells))


def truth_loglik(truth: Truth, X, y, players=None, games=None) -> float:
    """Residual-integrated log-likelihood under the true ``beta``, ``U`` and ``V``.

    ``truth`` is indexed by contiguous player and game ids unless ``players``
    and ``games`` give the raw ids of its rows.
    """
    cells = as_cells(X)
    p = cells.sender if players is None else np.searchsorted(players, cells.sender)
    q = cells.receiver if players is None else np.searchsorted(players, cells.receiver)
    g = cells.game if games is None else np.searchsorted(games, cells.game)
    mean = (np.einsum("ck,ck->c", cells.X, truth.beta[p, q])
            + np.einsum("cr,cr->c", truth.U[g, p], truth.V[g, q]))
    return float(np.sum(marginal_interval_loglik(np.asarray(y, dtype=float), mean, cells.interval_length)))
