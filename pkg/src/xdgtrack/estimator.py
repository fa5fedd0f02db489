"""Estimator wrapper around the shock-tracking solver."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cases import CASES, diagnostics, get_case
from .sqp import solve
from .xdgspace import sample


class ShockTracker(BaseEstimator):
    """Track the shock of a named test case and evaluate the result.

    Parameters
    ----------
    case : str
        One of ``"advection"``, ``"burgers_straight"``,
        ``"burgers_accelerating"``, ``"wedge"``.
    nx, ny : int, optional
        Background grid size; the case default when ``None``.
    P_max : int, optional
        Highest solution degree reached by P-continuation.
    agg_threshold : float, optional
        Volume fraction below which cut-cells are agglomerated.
    max_iter : int, optional
        Iteration budget of the optimizer.

    Attributes
    ----------
    levelset_ : SplineLevelSet
        Tracked shock interface.
    coef_ : ndarray
        Modal coefficients of the final state.
    n_iter_ : int
    converged_ : bool
    status_ : str
    trace_ : list of dict
        One row per iterate.
    diagnostics_ : dict
        Interface and solution errors against the exact solution.
    """

    def __init__(self, case="advection", nx=None, ny=None, P_max=None, agg_threshold=None,
                 max_iter=None):
        self.case = case
        self.nx = nx
        self.ny = ny
        self.P_max = P_max
        self.agg_threshold = agg_threshold
        self.max_iter = max_iter

    def _build_case(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; choose from {sorted(CASES)}")
        for name in ("nx", "ny", "P_max", "max_iter"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, np.integer)) or v < 0):
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.agg_threshold is not None and not (0.0 <= self.agg_threshold < 1.0):
            raise ValueError("agg_threshold must lie in [0, 1)")
        kw = {k: v for k, v in (("nx", self.nx), ("ny", self.ny)) if v is not None}
        case = get_case(self.case, **kw)
        over = {k: v for k, v in (("P_max", self.P_max), ("agg_threshold", self.agg_threshold),
                                  ("max_iter", self.max_iter)) if v is not None}
        return case, case.config.replace(**over)

    def fit(self, X=None, y=None):
        """Run the optimizer.  ``X`` and ``y`` are ignored; the case defines the problem."""
        case, config = self._build_case()
        res = solve(case, config)
        self.case_ = case
        self.result_ = res
        self.levelset_ = res.ls
        self.coef_ = res.u
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.status_ = res.status
        self.trace_ = res.trace
        self.diagnostics_ = diagnostics(case, res.ls, res.u, res.layout, res.topo)
        return self

    def _points(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"expected points of shape (n, 2), got {X.shape}")
        x0, x1, y0, y1 = self.case_.bounds
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        if (np.any(X[:, 0] < x0 - tol) or np.any(X[:, 0] > x1 + tol)
                or np.any(X[:, 1] < y0 - tol) or np.any(X[:, 1] > y1 + tol)):
            raise ValueError("points must lie inside the case domain")
        return X

    def predict(self, X):
        """Solution values at points ``X`` (shape ``(n, 2)``); ``(n,)`` for scalar laws."""
        X = self._points(X)
        res = self.result_
        vals = sample(res.u, res.layout, res.topo, X)
        return vals[:, 0] if vals.shape[1] == 1 else vals

    def decision_function(self, X):
        """Shock level-set value at ``X``: negative upstream, positive downstream."""
        X = self._points(X)
        return self.levelset_.eval(X[:, 0], X[:, 1])
