"""scikit-learn style front end.

``X`` is always an ``(n, 2)`` coordinate array for a single instance.
Coordinates outside the unit square are rescaled uniformly into it (lengths
reported by the estimators are then converted back to the input units).
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._utils import check_generator
from .heatmap import (DEFAULT_EPSILON, DEFAULT_KAPPA, HeatMap, SurrogateProvider,
                      UniformProvider, load_heatmap, prune_unpromising)
from .instance import Instance
from .mcts import ENGINES, Params, solve
from .sampling import CoverageCounters, build_global_heatmap, default_m

__all__ = ["HeatMapBuilder", "MCTSTourSolver", "make_provider"]

PROVIDERS = ("surrogate", "uniform")


def make_provider(name, kappa: int = DEFAULT_KAPPA):
    """``"surrogate"``, ``"uniform"`` or any callable ``coords -> HeatMap``."""
    if callable(name):
        return name
    if name == "surrogate":
        return SurrogateProvider(kappa)
    if name == "uniform":
        return UniformProvider(kappa)
    raise ValueError(f"unknown provider {name!r}; expected one of {PROVIDERS} or a callable")


def _as_instance(X) -> Instance:
    X = check_array(X, dtype=np.float64, ensure_min_samples=3, ensure_min_features=2)
    if X.shape[1] != 2:
        raise ValueError(f"expected (n, 2) coordinates, got shape {X.shape}")
    return Instance.normalized(X)


class HeatMapBuilder(TransformerMixin, BaseEstimator):
    """Global heat map of one instance from overlapping sub-graph heat maps.

    Parameters
    ----------
    provider : {"surrogate", "uniform"} or callable, default="surrogate"
        Sub heat-map provider applied to each converted sub-graph.
    m : int or None
        Sub-graph size (``None``: a size-dependent default).
    omega : int, default=5
        Every vertex is covered by at least this many sub-graphs.
    kappa : int, default=10
        Neighbour count of the built-in providers.
    epsilon : float, default=1e-4
        Pruning threshold for unpromising edges.
    heatmap_file : str or None
        Load a precomputed global heat map instead of sampling.
    random_state : int, Generator or None

    Attributes
    ----------
    heatmap_ : HeatMap
    coverage_ : ndarray of shape (n,)
        Number of sub-graphs each vertex belonged to (absent for ``heatmap_file``).
    build_time_ : float
        Seconds spent building the map.
    """

    def __init__(self, provider="surrogate", m=None, omega=5, kappa=DEFAULT_KAPPA,
                 epsilon=DEFAULT_EPSILON, heatmap_file=None, random_state=None):
        self.provider = provider
        self.m = m
        self.omega = omega
        self.kappa = kappa
        self.epsilon = epsilon
        self.heatmap_file = heatmap_file
        self.random_state = random_state

    def _build(self, inst: Instance) -> tuple[HeatMap, CoverageCounters | None]:
        if self.heatmap_file is not None:
            return prune_unpromising(load_heatmap(self.heatmap_file, inst.n), inst.coords, self.epsilon), None
        m = default_m(inst.n) if self.m is None else min(int(self.m), inst.n)
        counters = CoverageCounters(inst.n)
        hm = build_global_heatmap(inst, make_provider(self.provider, self.kappa), m=m, omega=self.omega,
                                  random_state=check_generator(self.random_state),
                                  epsilon=self.epsilon, counters=counters)
        return hm, counters

    def fit(self, X, y=None):
        inst = _as_instance(X)
        start = time.perf_counter()
        self.heatmap_, counters = self._build(inst)
        self.build_time_ = time.perf_counter() - start
        self._fitted_coords = inst.coords
        if counters is not None:
            self.coverage_ = counters.vertex.copy()
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        """Heat map of ``X`` as a symmetric ``(n, n)`` CSR matrix.

        For the fitted coordinates this is ``heatmap_``; other inputs are
        processed afresh with the same settings.
        """
        check_is_fitted(self, "heatmap_")
        inst = _as_instance(X)
        if np.array_equal(inst.coords, self._fitted_coords):
            return self.heatmap_.to_sparse()
        return self._build(inst)[0].to_sparse()

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X, y)
        return self.heatmap_.to_sparse()


class MCTSTourSolver(BaseEstimator):
    """Heat-map-guided Monte Carlo tree search for one instance.

    ``fit(X)`` builds the heat map (or uses ``heatmap`` when given) and runs
    the search; ``predict(X)`` returns the best tour found for the fitted
    coordinates.

    Parameters mirror :class:`HeatMapBuilder` and :class:`~tspheat.mcts.Params`;
    ``max_rounds`` selects the deterministic budget, otherwise the search
    runs ``t_factor * n`` ms (or ``time_limit`` seconds).

    Attributes
    ----------
    tour_ : list of int
    length_ : float
        Length of ``tour_`` in the units of ``X``.
    heatmap_ : HeatMap
    stats_ : dict
        Search statistics plus ``heatmap_seconds``.
    """

    def __init__(self, provider="surrogate", m=None, omega=5, kappa=DEFAULT_KAPPA,
                 epsilon=DEFAULT_EPSILON, alpha=1.0, beta=10.0, h_factor=10.0, t_factor=10.0,
                 k_max=10, w_candidate_min=1.0, max_rounds=None, time_limit=None,
                 engine="compiled", random_state=None):
        self.provider = provider
        self.m = m
        self.omega = omega
        self.kappa = kappa
        self.epsilon = epsilon
        self.alpha = alpha
        self.beta = beta
        self.h_factor = h_factor
        self.t_factor = t_factor
        self.k_max = k_max
        self.w_candidate_min = w_candidate_min
        self.max_rounds = max_rounds
        self.time_limit = time_limit
        self.engine = engine
        self.random_state = random_state

    def _params(self) -> Params:
        return Params(alpha=self.alpha, beta=self.beta, h_factor=self.h_factor, t_factor=self.t_factor,
                      k_max=self.k_max, epsilon=self.epsilon, w_candidate_min=self.w_candidate_min,
                      max_rounds=self.max_rounds, time_limit=self.time_limit)

    def fit(self, X, y=None, heatmap: HeatMap | None = None):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        params = self._params()
        inst = _as_instance(X)
        rng = check_generator(self.random_state)
        start = time.perf_counter()
        if heatmap is None:
            builder = HeatMapBuilder(self.provider, self.m, self.omega, self.kappa, self.epsilon,
                                     random_state=rng)
            heatmap = builder.fit(inst.coords).heatmap_
        elif heatmap.n != inst.n:
            raise ValueError(f"heat map has n={heatmap.n}, X has {inst.n} rows")
        hm_seconds = time.perf_counter() - start
        result = solve(inst, heatmap, params, random_state=rng, engine=self.engine)
        self.heatmap_ = heatmap
        self.tour_ = result.tour
        self.length_ = inst.to_original_units(result.length)
        self.stats_ = dict(result.stats, heatmap_seconds=hm_seconds)
        self._fitted_coords = inst.coords
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """Best tour as an index array; ``X`` must be the fitted coordinates."""
        check_is_fitted(self, "tour_")
        inst = _as_instance(X)
        if not np.array_equal(inst.coords, self._fitted_coords):
            raise ValueError("predict expects the coordinates passed to fit; call fit_predict for new data")
        return np.asarray(self.tour_, dtype=np.int64)

    def fit_predict(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).predict(X)

    def score(self, X, y=None):
        """Negative tour length in the units of ``X`` (higher is better)."""
        self.predict(X)
        return -self.length_
