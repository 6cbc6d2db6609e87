"""Scikit-learn style front end for the flow solver.

``HuberTVFlow`` exposes the variational model's hyper-parameters
through ``get_params``/``set_params`` so it clones, grid-searches and
logs like any other estimator, which is how the joint parameter tuning
across image pairs is meant to be driven.  Fitting estimates the
deformation between an image pair; ``transform`` then resamples
second-frame images onto the first frame with the fitted flow.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_grid, check_mask, check_same_shape
from .errors import InvalidParameterError
from .grids import warp_bilinear
from .solver import SolverParams, coarse_to_fine, rerun_with_registration
from .strain import StrainFields, compute_strain

__all__ = ["HuberTVFlow"]


class HuberTVFlow(BaseEstimator):
    """Masked Huber-TV flow estimator with illumination compensation.

    Parameters mirror :class:`~hygroflow.solver.SolverParams`; see there
    for their meaning.  After :meth:`fit` the solution is available as
    ``flow_``, ``illumination_``, ``energy_``, ``delta_theta_``,
    ``v_avg_`` and the full ``result_``.
    """

    def __init__(self, data_weight=10.0, illum_scale=0.04, huber_eps_flow=0.2,
                 huber_eps_illum=0.05, warps=8, pd_iters=60, pyramid_scale=0.85,
                 levels="auto", median_flow_filter=True, illum_coarse_levels=True,
                 rerun_registration=False):
        self.data_weight = data_weight
        self.illum_scale = illum_scale
        self.huber_eps_flow = huber_eps_flow
        self.huber_eps_illum = huber_eps_illum
        self.warps = warps
        self.pd_iters = pd_iters
        self.pyramid_scale = pyramid_scale
        self.levels = levels
        self.median_flow_filter = median_flow_filter
        self.illum_coarse_levels = illum_coarse_levels
        self.rerun_registration = rerun_registration

    def _solver_params(self) -> SolverParams:
        return SolverParams(
            data_weight=self.data_weight, illum_scale=self.illum_scale,
            huber_eps_flow=self.huber_eps_flow,
            huber_eps_illum=self.huber_eps_illum, warps=self.warps,
            pd_iters=self.pd_iters, pyramid_scale=self.pyramid_scale,
            levels=self.levels, median_flow_filter=self.median_flow_filter,
            illum_coarse_levels=self.illum_coarse_levels)

    @staticmethod
    def _unpack(X) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(X, dtype=np.float64) if not isinstance(X, (tuple, list)) else X
        if isinstance(arr, np.ndarray):
            if arr.ndim != 3 or arr.shape[0] != 2:
                raise InvalidParameterError(
                    f"X must be a (2, H, W) stack or an (i1, i2) pair, got {arr.shape}")
            return arr[0], arr[1]
        if len(arr) != 2:
            raise InvalidParameterError("X must contain exactly two images")
        return (check_grid(np.asarray(arr[0]), "i1"),
                check_grid(np.asarray(arr[1]), "i2"))

    def fit(self, X, y=None, *, mask=None):
        """Estimate flow and illumination between the two images in ``X``.

        ``X`` is an ``(i1, i2)`` pair or a ``(2, H, W)`` array; ``mask``
        is the optional data-term mask (defaults to all pixels).
        """
        i1, i2 = self._unpack(X)
        check_same_shape(i1, i2, "i1", "i2")
        if mask is None:
            mask = np.ones(i1.shape, dtype=bool)
        mask = check_mask(mask)
        params = self._solver_params()
        result = coarse_to_fine(i1, i2, mask, params)
        if self.rerun_registration:
            result = rerun_with_registration(i1, i2, mask, result, params)
        self.result_ = result
        self.flow_ = result.flow
        self.illumination_ = result.illumination
        self.energy_ = result.energy
        self.delta_theta_ = result.delta_theta_avg
        self.v_avg_ = result.v_avg
        return self

    def transform(self, X):
        """Warp second-frame image(s) onto the first frame with the fitted flow."""
        if not hasattr(self, "flow_"):
            raise InvalidParameterError("estimator is not fitted yet; call fit first")
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 2:
            return warp_bilinear(arr, self.flow_)
        if arr.ndim == 3:
            return np.stack([warp_bilinear(a, self.flow_) for a in arr])
        raise InvalidParameterError(f"expected (H, W) or (N, H, W), got {arr.shape}")

    def fit_transform(self, X, y=None, **fit_params):
        """Fit on the pair and return the warped (registered) second image."""
        self.fit(X, y, **fit_params)
        return self.result_.warped

    def strain(self) -> StrainFields:
        """Strain tensors of the fitted flow."""
        if not hasattr(self, "flow_"):
            raise InvalidParameterError("estimator is not fitted yet; call fit first")
        return compute_strain(self.flow_)
