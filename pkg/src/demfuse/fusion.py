"""Scikit-learn style fusion estimators.

Each estimator consumes a stack ``X`` of shape (k, rows, cols) holding the
coregistered input DEMs in meters, with NaN marking missing pixels, and
produces the fused (rows, cols) surface.  Like manifold learners, fusion is
not inductive: ``fit(X)`` computes the fused surface into ``fused_`` and
``fit_transform(X)`` returns it; ``transform(X)`` applies the same
(stateless) fusion to whatever stack it is given, so the estimators compose
with pipelines and parameter search via ``get_params`` / ``set_params``.

The variational estimators normalize the stack onto [0, 1] internally,
rescale meter-valued thresholds by the normalization span, solve, and map
the result back to meters; pixels where no input is valid are NaN in the
output.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .baseline import median_stack, weighted_average_stack
from .variational import (
    HUBER,
    TV_L1,
    DEFAULT_STEP,
    FusionConfig,
    SolverState,
    solve_primal_dual,
)
from .weights import weights_from_sigma_stack

#: Default regularization weight for the variational models, calibrated on
#: the synthetic presets; tune per scene with the L-curve for real data.
DEFAULT_GAMMA = 1.2


def validate_dem_stack(X) -> np.ndarray:
    """Coerce ``X`` to a (k, rows, cols) float64 stack with NaN for missing.

    Rejects anything that is not 3-D, contains +-inf, or has no finite
    value at all.
    """
    stack = np.asarray(X, dtype=np.float64)
    if stack.ndim == 2:
        raise ValueError(
            "expected a (k, rows, cols) stack of input DEMs; "
            "wrap a single DEM as X[None] for denoising"
        )
    if stack.ndim != 3:
        raise ValueError(f"expected a 3-D stack, got ndim={stack.ndim}")
    if stack.shape[0] < 1 or stack.shape[1] < 1 or stack.shape[2] < 1:
        raise ValueError(f"empty stack of shape {stack.shape}")
    if np.any(np.isinf(stack)):
        raise ValueError("stack contains infinities; use NaN for missing pixels")
    if not np.isfinite(stack).any():
        raise ValueError("stack has no valid (finite) pixel")
    return stack


class _BaseFusion(BaseEstimator):
    """Shared fit/transform plumbing; subclasses implement ``_fuse``."""

    def _fuse(self, stack: np.ndarray, **fit_params) -> np.ndarray:
        raise NotImplementedError

    def fit(self, X, y=None, **fit_params):
        """Fuse the stack; the result is stored in ``fused_``."""
        stack = validate_dem_stack(X)
        self.n_inputs_ = stack.shape[0]
        self.fused_ = self._fuse(stack, **fit_params)
        return self

    def transform(self, X, **fit_params) -> np.ndarray:
        """Fuse the given stack and return the (rows, cols) surface."""
        return self._fuse(validate_dem_stack(X), **fit_params)

    def fit_transform(self, X, y=None, **fit_params) -> np.ndarray:
        return self.fit(X, y, **fit_params).fused_


class MedianFusion(_BaseFusion):
    """Pixel-wise median of the inputs (midpoint of the central pair when even)."""

    def _fuse(self, stack):
        return median_stack(stack)


class WeightedAverageFusion(_BaseFusion):
    """Per-pixel inverse-variance weighted average.

    ``fit``/``transform`` take either ``hem`` (per-input 1-sigma height
    errors: a (k, rows, cols) stack or k scalars, NaN/non-positive =
    missing) or ``weights`` (explicit nonnegative weights, renormalized
    per pixel over the valid inputs).
    """

    def _fuse(self, stack, hem=None, weights=None):
        if (hem is None) == (weights is None):
            raise ValueError("pass exactly one of hem= or weights=")
        if hem is not None:
            sigma = np.asarray(hem, dtype=np.float64)
            if sigma.ndim == 1:
                sigma = np.broadcast_to(
                    sigma[:, None, None], stack.shape
                ).astype(np.float64)
            if sigma.shape != stack.shape:
                raise ValueError(f"hem shape {sigma.shape} != stack shape {stack.shape}")
            w = weights_from_sigma_stack(sigma)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != stack.shape:
                raise ValueError(f"weights shape {w.shape} != stack shape {stack.shape}")
            finite = np.isfinite(w)
            if (w[finite] < 0).any():
                raise ValueError("weights must be nonnegative")
            vals = np.where(finite, w, 0.0)
            total = vals.sum(axis=0)
            ok = total > 0
            w = np.where(ok, vals / np.where(ok, total, 1.0), np.nan)
        self.weights_ = w
        return weighted_average_stack(stack, w)


class _VariationalFusion(_BaseFusion):
    """Normalize -> solve the variational model -> denormalize."""

    def _config(self, span: float) -> FusionConfig:
        raise NotImplementedError

    def _fuse(self, stack):
        finite = np.isfinite(stack)
        h_min = float(stack[finite].min())
        h_max = float(stack[finite].max())
        any_valid = finite.any(axis=0)
        self.h_min_ = h_min
        self.h_max_ = h_max
        if h_min == h_max:
            # Constant scene: the data term is already zero at the constant.
            self.state_ = None
            self.n_iter_ = 0
            self.energy_trace_ = []
            return np.where(any_valid, h_min, np.nan)
        span = h_max - h_min
        normalized = np.where(finite, (stack - h_min) / span, np.nan)
        u, state = solve_primal_dual(normalized, self._config(span))
        self.state_: SolverState | None = state
        self.n_iter_ = state.iterations
        self.energy_trace_ = state.energy_trace
        return np.where(any_valid, u * span + h_min, np.nan)


class TVL1Fusion(_VariationalFusion):
    """Edge-preserving fusion with L1 data fidelity and isotropic total variation.

    Robust to gross outliers (the L1 data term saturates); ``gamma`` trades
    data fidelity against smoothness in normalized units and is typically
    tuned per scene (see :mod:`demfuse.tuning`).
    """

    def __init__(
        self,
        gamma: float = DEFAULT_GAMMA,
        theta: float = 1.0,
        tau: float = DEFAULT_STEP,
        sigma: float = DEFAULT_STEP,
        max_iters: int = 1000,
        rel_tol: float = 1e-5,
        energy_trace_every: int = 0,
    ):
        self.gamma = gamma
        self.theta = theta
        self.tau = tau
        self.sigma = sigma
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.energy_trace_every = energy_trace_every

    def _config(self, span: float) -> FusionConfig:
        return FusionConfig(
            method=TV_L1,
            gamma=self.gamma,
            theta=self.theta,
            tau=self.tau,
            sigma=self.sigma,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            energy_trace_every=self.energy_trace_every,
        )


class HuberFusion(_VariationalFusion):
    """Fusion with Huber data and regularity terms.

    ``alpha`` (meters) is the residual size beyond which the data penalty
    becomes linear; ``beta`` (meters) plays the same role for the gradient
    magnitude.  Both are rescaled internally by the joint normalization
    span.  Compared to the pure L1/TV model the quadratic zones yield a
    smoother surface while large outliers are still penalized linearly.
    """

    def __init__(
        self,
        gamma: float = DEFAULT_GAMMA,
        alpha: float = 4.0,
        beta: float = 1.0,
        theta: float = 1.0,
        tau: float = DEFAULT_STEP,
        sigma: float = DEFAULT_STEP,
        max_iters: int = 1000,
        rel_tol: float = 1e-5,
        energy_trace_every: int = 0,
    ):
        self.gamma = gamma
        self.alpha = alpha
        self.beta = beta
        self.theta = theta
        self.tau = tau
        self.sigma = sigma
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.energy_trace_every = energy_trace_every

    def _config(self, span: float) -> FusionConfig:
        return FusionConfig(
            method=HUBER,
            gamma=self.gamma,
            alpha=self.alpha,
            beta=self.beta,
            theta=self.theta,
            tau=self.tau,
            sigma=self.sigma,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            energy_trace_every=self.energy_trace_every,
        ).rescaled(span)
