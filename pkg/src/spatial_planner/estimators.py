"""scikit-learn style wrappers around the path and velocity optimizers.

Both estimators are deterministic one-shot optimizers: ``fit`` runs a
fixed number of warm-started AL-ILQR cycles on a single input and stores
the solution, ``transform``/``predict`` return it. Hyperparameters follow
the usual ``get_params``/``set_params`` protocol so they can be swept.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from . import al, ilqr
from .grid import SpatialGrid
from .path import PathWeights, ReferencePolyline, smooth_path
from .velocity import LimitProfile, ProfileWeights, generate_reference, optimize_profile, postprocess_standstill


class PathSmoother(TransformerMixin, BaseEstimator):
    """Curvature-regularized smoothing of an ``(N, 2)`` reference polyline.

    ``transform`` returns the smoothed ``(K, 2)`` points on a uniform
    ``delta_s`` grid; ``kappa_`` holds the optimized curvature.
    """

    def __init__(self, delta_s=0.5, w_d=1.0, w_kappa=20.0, kappa_min=-3.0, kappa_max=3.0,
                 n_iters=5, tol=1e-6, n_cycles=5, mu=al.MU_DEFAULT, lambda_max=al.LAMBDA_MAX_DEFAULT):
        self.delta_s = delta_s
        self.w_d = w_d
        self.w_kappa = w_kappa
        self.kappa_min = kappa_min
        self.kappa_max = kappa_max
        self.n_iters = n_iters
        self.tol = tol
        self.n_cycles = n_cycles
        self.mu = mu
        self.lambda_max = lambda_max

    def _solve(self, X):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected (n, 2) polyline points, got {X.shape[1]} columns")
        ref = ReferencePolyline.from_points(X, self.delta_s)
        weights = PathWeights(self.w_d, self.w_kappa)
        settings = ilqr.IlqrSettings(max_iter=self.n_iters, tol=self.tol)
        warm = None
        for _ in range(self.n_cycles):
            path = smooth_path(ref, weights, (self.kappa_min, self.kappa_max), warm, settings,
                               self.mu, self.lambda_max)
            warm = (path.controls, path.al_state)
        return ref, path

    def fit(self, X, y=None):
        self.reference_, self.path_ = self._solve(X)
        self.kappa_ = self.path_.kappa.copy()
        self.max_violation_ = self.path_.report.max_violation
        return self

    def transform(self, X):
        check_is_fitted(self, "path_")
        _, path = self._solve(X)
        return np.column_stack([path.x, path.y])

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X)
        return np.column_stack([self.path_.x, self.path_.y])


class VelocityProfilePlanner(BaseEstimator):
    """Velocity profile along a path from a sampled speed limit.

    ``X`` is the limit ``v_lim`` on a uniform ``delta_s`` grid starting at
    the vehicle; ``predict`` returns the optimized speed ``v*``. The
    reference ``v_ref``, acceleration ``a_`` and arrival time ``t_`` are
    kept after ``fit``.
    """

    def __init__(self, v_start=0.0, a_start=0.0, delta_s=0.5, v_min=1.0, a_min=-2.5, a_max=2.5,
                 j_min=-1.5, j_max=1.5, w_v=0.1, w_a=1.0, n_iters=5, tol=1e-6, n_cycles=5,
                 spatiotemporal=(), mu=al.MU_DEFAULT, lambda_max=al.LAMBDA_MAX_DEFAULT,
                 mu_tmax=al.MU_TMAX, lambda_max_tmax=al.LAMBDA_MAX_TMAX, standstill=True):
        self.v_start = v_start
        self.a_start = a_start
        self.delta_s = delta_s
        self.v_min = v_min
        self.a_min = a_min
        self.a_max = a_max
        self.j_min = j_min
        self.j_max = j_max
        self.w_v = w_v
        self.w_a = w_a
        self.n_iters = n_iters
        self.tol = tol
        self.n_cycles = n_cycles
        self.spatiotemporal = spatiotemporal
        self.mu = mu
        self.lambda_max = lambda_max
        self.mu_tmax = mu_tmax
        self.lambda_max_tmax = lambda_max_tmax
        self.standstill = standstill

    def _weights(self) -> ProfileWeights:
        return ProfileWeights(self.w_v, self.w_a, self.v_min, self.a_min, self.a_max, self.j_min, self.j_max)

    def fit(self, X, y=None):
        v_lim = column_or_1d(check_array(X, dtype=float, ensure_2d=False))
        grid = SpatialGrid(0.0, self.delta_s, len(v_lim))
        limits = LimitProfile(grid, v_lim)
        weights = self._weights()
        settings = ilqr.IlqrSettings(max_iter=self.n_iters, tol=self.tol)
        reference = generate_reference(limits, self.v_start, weights, self.a_start)
        warm = None
        for _ in range(self.n_cycles):
            profile = optimize_profile(reference, self.v_start, list(self.spatiotemporal), weights, warm,
                                       settings, mu=self.mu, lam_max=self.lambda_max,
                                       mu_tmax=self.mu_tmax, lam_max_tmax=self.lambda_max_tmax)
            warm = (profile.controls, profile.al_state)
        if self.standstill:
            profile = postprocess_standstill(profile, limits, self.v_min)
        self.limits_ = limits
        self.reference_ = reference
        self.profile_ = profile
        self.v_ref_ = reference.v_ref.copy()
        self.a_ = profile.a.copy()
        self.t_ = profile.t.copy()
        self.max_violation_ = profile.report.max_violation
        return self

    def predict(self, X=None):
        """``v*`` of the fitted limit, or of a new limit ``X`` without refitting this instance."""
        if X is not None:
            return clone(self).fit(X).profile_.v.copy()
        check_is_fitted(self, "profile_")
        return self.profile_.v.copy()
