"""Edge-preserving variational fusion solved by a first-order primal-dual method.

Two convex models are provided for fusing k input grids h_1..h_k into one
grid u:

* ``tv_l1``   -- sum_i ||u - h_i||_1        + gamma * TV(u)
* ``huber``   -- sum_i H_alpha(u - h_i)     + gamma * H_beta(|grad u|)

where TV is the isotropic total variation (per-pixel Euclidean norm of the
forward-difference gradient) and H_eta is the Huber penalty, quadratic
below eta and linear above.  Both models are minimized by alternating
exact dual and primal proximal steps with over-relaxation; the dual step
projects onto a gamma-ball, the primal step solves the per-pixel 1-D data
problem in closed form.

All functions operate on float64 arrays; NaN marks missing pixels in the
input stacks.  The solver itself is unit-agnostic but is meant to run on
jointly [0, 1]-normalized heights, with meter-valued thresholds rescaled
by the normalization span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .baseline import median_stack
from .errors import SolverDivergedError

#: Upper bound on the squared operator norm of the forward-difference
#: gradient with unit spacing; power iteration stays strictly below it.
GRAD_NORM_SQ_BOUND = 8.0

#: Step size making tau * sigma * ||K||^2 == 1 with tau == sigma.
DEFAULT_STEP = 1.0 / math.sqrt(GRAD_NORM_SQ_BOUND)

TV_L1 = "tv_l1"
HUBER = "huber"
METHODS = (TV_L1, HUBER)


@dataclass(frozen=True)
class FusionConfig:
    """Hyperparameters of the primal-dual fusion solver.

    ``alpha`` and ``beta`` are thresholds in the units of the input grids
    (callers that normalize heights onto [0, 1] must rescale meter-valued
    thresholds by the normalization span; see :meth:`rescaled`).  ``gamma``
    is the dimensionless regularization weight.
    """

    method: str
    gamma: float
    alpha: float = 4.0
    beta: float = 1.0
    theta: float = 1.0
    tau: float = DEFAULT_STEP
    sigma: float = DEFAULT_STEP
    max_iters: int = 1000
    rel_tol: float = 1e-5
    energy_trace_every: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("gamma", "alpha", "beta", "tau", "sigma", "rel_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.energy_trace_every < 0:
            raise ValueError("energy_trace_every must be >= 0")
        if self.tau * self.sigma * GRAD_NORM_SQ_BOUND > 1.0 + 1e-9:
            raise ValueError(
                "step sizes violate tau * sigma * ||K||^2 <= 1 "
                f"(tau={self.tau}, sigma={self.sigma}, ||K||^2 bound={GRAD_NORM_SQ_BOUND})"
            )

    def rescaled(self, span: float) -> "FusionConfig":
        """Config with alpha/beta divided by ``span`` (meters -> normalized units)."""
        if span <= 0:
            raise ValueError("span must be > 0")
        return replace(self, alpha=self.alpha / span, beta=self.beta / span)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    energy: float
    max_dual_norm: float
    rel_change: float


@dataclass
class SolverState:
    """Final iterates and convergence record of one primal-dual run."""

    u: np.ndarray
    u_bar: np.ndarray
    p: np.ndarray
    iterations: int
    energy_trace: list[TraceEntry] = field(default_factory=list)
    final_rel_change: float = math.inf
    converged: bool = False


def _as_stack(inputs) -> np.ndarray:
    if isinstance(inputs, np.ndarray) and inputs.ndim == 3:
        stack = inputs.astype(np.float64, copy=False)
    else:
        arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
        if not arrays:
            raise ValueError("need at least one input grid")
        if any(a.ndim != 2 for a in arrays):
            raise ValueError("inputs must be 2-D arrays")
        if any(a.shape != arrays[0].shape for a in arrays):
            raise ValueError("inputs must share one shape")
        stack = np.stack(arrays)
    if stack.shape[0] < 1:
        raise ValueError("need at least one input grid")
    finite = np.isfinite(stack)
    if np.any(~finite & ~np.isnan(stack)):
        raise ValueError("inputs must contain only finite values or NaN")
    return stack


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------


def gradient(u: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference gradient with Neumann boundary.

    Returns a (rows, cols, 2) field; [..., 0] holds differences along
    columns (x), [..., 1] along rows (y).  The last column/row of each
    component is zero.  With ``valid`` given, any difference touching an
    invalid pixel is zero.
    """
    u = np.asarray(u, dtype=np.float64)
    g = np.zeros(u.shape + (2,))
    g[:, :-1, 0] = u[:, 1:] - u[:, :-1]
    g[:-1, :, 1] = u[1:, :] - u[:-1, :]
    if valid is not None:
        g[:, :-1, 0] *= valid[:, 1:] & valid[:, :-1]
        g[:-1, :, 1] *= valid[1:, :] & valid[:-1, :]
    return g


def divergence(p: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Exact negative adjoint of :func:`gradient`: <grad u, p> = -<u, div p>.

    Entries of ``p`` that the gradient never produces (last column of the x
    component, last row of the y component, and masked pairs when ``valid``
    is given) are ignored, which is what makes the identity hold exactly.
    """
    p = np.asarray(p, dtype=np.float64)
    px = p[..., 0]
    py = p[..., 1]
    if valid is not None:
        px = px.copy()
        py = py.copy()
        px[:, :-1] *= valid[:, 1:] & valid[:, :-1]
        py[:-1, :] *= valid[1:, :] & valid[:-1, :]
    out = np.zeros(px.shape)
    out[:, :-1] += px[:, :-1]
    out[:, 1:] -= px[:, :-1]
    out[:-1, :] += py[:-1, :]
    out[1:, :] -= py[:-1, :]
    return out


def operator_norm_sq(
    shape: tuple[int, int], n_iters: int = 100, seed: int = 0
) -> float:
    """Power-iteration estimate of ||grad||^2 on the given grid shape.

    Converges from below toward the true value, which is < 8 for every
    grid size.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iters):
        y = -divergence(gradient(x))
        lam = float(np.vdot(x, y))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
    return lam


# ---------------------------------------------------------------------------
# Penalties and energies
# ---------------------------------------------------------------------------


def huber_value(x, eta: float):
    """Huber penalty: x^2 / (2 eta) for |x| <= eta, |x| - eta/2 above."""
    if eta <= 0:
        raise ValueError("eta must be > 0")
    ax = np.abs(x)
    return np.where(ax <= eta, ax * ax / (2.0 * eta), ax - 0.5 * eta)


def _grad_magnitude(u: np.ndarray) -> np.ndarray:
    g = gradient(u)
    return np.hypot(g[..., 0], g[..., 1])


def data_term_l1(u: np.ndarray, inputs) -> float:
    stack = _as_stack(inputs)
    return float(np.nansum(np.abs(u[None] - stack)))


def data_term_huber(u: np.ndarray, inputs, alpha: float) -> float:
    stack = _as_stack(inputs)
    r = u[None] - stack
    finite = np.isfinite(r)
    return float(np.sum(np.where(finite, huber_value(np.where(finite, r, 0.0), alpha), 0.0)))


def regularity_term_tv(u: np.ndarray) -> float:
    return float(np.sum(_grad_magnitude(u)))


def regularity_term_huber(u: np.ndarray, beta: float) -> float:
    return float(np.sum(huber_value(_grad_magnitude(u), beta)))


def energy_tv_l1(u: np.ndarray, inputs, gamma: float) -> float:
    """L1 data fidelity plus gamma times isotropic total variation."""
    return data_term_l1(u, inputs) + gamma * regularity_term_tv(u)


def energy_huber(
    u: np.ndarray, inputs, gamma: float, alpha: float, beta: float
) -> float:
    """Huber data fidelity plus gamma times Huber-penalized gradient magnitude."""
    return data_term_huber(u, inputs, alpha) + gamma * regularity_term_huber(u, beta)


def energy_terms(u: np.ndarray, inputs, config: FusionConfig) -> tuple[float, float]:
    """(data term, regularity term without the gamma factor) for the config's model."""
    if config.method == TV_L1:
        return data_term_l1(u, inputs), regularity_term_tv(u)
    return data_term_huber(u, inputs, config.alpha), regularity_term_huber(u, config.beta)


def energy(u: np.ndarray, inputs, config: FusionConfig) -> float:
    d, r = energy_terms(u, inputs, config)
    return d + config.gamma * r


# ---------------------------------------------------------------------------
# Proximal maps
# ---------------------------------------------------------------------------


def prox_data_l1(u: np.ndarray, inputs, tau: float) -> np.ndarray:
    """Exact per-pixel minimizer of sum_i |v - h_i| + (v - u)^2 / (2 tau).

    The minimizer is the median of the valid h_i together with the shifted
    values u + tau*(c - 2j), j = 0..c, where c is the number of valid
    inputs at the pixel; pixels with no valid input return u unchanged.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    u = np.asarray(u, dtype=np.float64)
    stack = _as_stack(inputs)
    k = stack.shape[0]
    counts = np.isfinite(stack).sum(axis=0)
    svals = np.sort(stack.reshape(k, -1), axis=0)  # NaN sorts last
    uf = u.reshape(-1)
    out = uf.copy()
    cf = counts.reshape(-1)
    for c in range(1, k + 1):
        sel = np.flatnonzero(cf == c)
        if sel.size == 0:
            continue
        h = svals[:c, sel]
        shifts = uf[sel][None, :] + tau * (c - 2.0 * np.arange(c + 1))[:, None]
        out[sel] = np.median(np.concatenate([h, shifts], axis=0), axis=0)
    return out.reshape(u.shape)


def prox_data_huber(u: np.ndarray, inputs, tau: float, alpha: float) -> np.ndarray:
    """Exact per-pixel minimizer of sum_i H_alpha(v - h_i) + (v - u)^2 / (2 tau).

    The derivative (v - u)/tau + sum_i clip((v - h_i)/alpha, -1, 1) is
    continuous, piecewise linear and strictly increasing; its unique root
    is located by scanning the sorted breakpoints h_i +- alpha and solved
    exactly on the bracketing linear segment.
    """
    if tau <= 0 or alpha <= 0:
        raise ValueError("tau and alpha must be > 0")
    u = np.asarray(u, dtype=np.float64)
    stack = _as_stack(inputs)
    k = stack.shape[0]
    n = u.size
    uf = u.reshape(-1)
    h = stack.reshape(k, -1)
    finite = np.isfinite(h)
    hz = np.where(finite, h, 0.0)

    bp = np.concatenate([hz - alpha, hz + alpha], axis=0)
    bp = np.where(np.concatenate([finite, finite], axis=0), bp, np.inf)
    bp.sort(axis=0)

    def phi_prime(v):
        psi = np.clip((v[None, :] - hz) / alpha, -1.0, 1.0)
        return (v - uf) / tau + np.where(finite, psi, 0.0).sum(axis=0)

    # First breakpoint with nonnegative derivative brackets the root from
    # above; 2k means the root lies beyond the last breakpoint.
    seg = np.full(n, 2 * k)
    for t in range(2 * k - 1, -1, -1):
        ge = np.where(np.isfinite(bp[t]), phi_prime(bp[t]) >= 0.0, True)
        seg = np.where(ge, t, seg)
    out = np.empty(n)
    for t in range(2 * k + 1):
        sel = np.flatnonzero(seg == t)
        if sel.size == 0:
            continue
        lo = bp[t - 1, sel] if t > 0 else np.full(sel.size, -np.inf)
        hi = bp[t, sel] if t < 2 * k else np.full(sel.size, np.inf)
        with np.errstate(invalid="ignore"):  # inf - inf in lanes the where discards
            mid = np.where(
                np.isfinite(lo) & np.isfinite(hi),
                0.5 * (lo + hi),
                np.where(np.isfinite(hi), hi - 1.0, np.where(np.isfinite(lo), lo + 1.0, uf[sel])),
            )
        d = mid[None, :] - h[:, sel]
        quad = finite[:, sel] & (np.abs(d) <= alpha)
        above = finite[:, sel] & (d > alpha)
        below = finite[:, sel] & (d < -alpha)
        n_quad = quad.sum(axis=0)
        sum_quad = np.where(quad, hz[:, sel], 0.0).sum(axis=0)
        net = above.sum(axis=0) - below.sum(axis=0)
        a = 1.0 / tau + n_quad / alpha
        out[sel] = (uf[sel] / tau + sum_quad / alpha - net) / a
    return out.reshape(u.shape)


def _dual_magnitude(p: np.ndarray) -> np.ndarray:
    return np.hypot(p[..., 0], p[..., 1])


def prox_dual_tv(p: np.ndarray, gamma: float) -> np.ndarray:
    """Per-pixel projection of the dual field onto the Euclidean gamma-ball."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    factor = np.maximum(1.0, _dual_magnitude(p) / gamma)
    return p / factor[..., None]


def prox_dual_huber(p: np.ndarray, gamma: float, beta: float, sigma: float) -> np.ndarray:
    """Dual proximal map of the Huber regularizer: shrink, then project.

    The convex conjugate of the Huber penalty adds a quadratic term to the
    ball indicator, which turns into the shrink factor 1 / (1 + sigma*beta/gamma).
    """
    if beta <= 0 or sigma <= 0:
        raise ValueError("beta and sigma must be > 0")
    return prox_dual_tv(p / (1.0 + sigma * beta / gamma), gamma)


# ---------------------------------------------------------------------------
# Primal-dual iteration
# ---------------------------------------------------------------------------


def median_initialization(stack: np.ndarray) -> np.ndarray:
    """Pixel-wise median of the inputs; holes filled with the global median."""
    u0 = median_stack(stack)
    holes = ~np.isfinite(u0)
    if holes.any():
        filled = u0[~holes]
        if filled.size == 0:
            raise ValueError("no valid pixel in any input")
        u0 = np.where(holes, np.median(filled), u0)
    return u0


def solve_primal_dual(
    inputs,
    config: FusionConfig,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, SolverState]:
    """Minimize the configured fusion energy over the full grid.

    ``inputs`` is a (k, rows, cols) stack or sequence of 2-D arrays with
    NaN marking missing pixels (those pixels simply drop out of the data
    term and are filled in by the regularizer).  The primal variable starts
    from ``init`` or the pixel-wise median of the inputs.  Iteration stops
    at ``max_iters`` or when the relative L2 change of the primal iterate
    *and* of the dual field both fall below ``rel_tol``; the dual condition
    matters because with an odd number of inputs the median start sits on a
    data-prox plateau where the primal is motionless for the first few
    iterations while the dual field is still charging up.

    Returns the final primal grid and a :class:`SolverState` carrying the
    dual field, iteration count, and energy trace.
    """
    stack = _as_stack(inputs)
    if init is not None:
        u = np.array(init, dtype=np.float64)
        if u.shape != stack.shape[1:]:
            raise ValueError(f"init shape {u.shape} != grid shape {stack.shape[1:]}")
        if not np.isfinite(u).all():
            raise ValueError("init must be finite everywhere")
    else:
        u = median_initialization(stack)
    u_bar = u.copy()
    p = np.zeros(u.shape + (2,))

    if config.method == TV_L1:
        def dual_step(q):
            return prox_dual_tv(q, config.gamma)

        def data_step(v):
            return prox_data_l1(v, stack, config.tau)
    else:
        def dual_step(q):
            return prox_dual_huber(q, config.gamma, config.beta, config.sigma)

        def data_step(v):
            return prox_data_huber(v, stack, config.tau, config.alpha)

    every = config.energy_trace_every
    trace = [TraceEntry(0, energy(u, stack, config), 0.0, math.nan)]
    rel = math.inf
    converged = False
    iterations = 0
    for i in range(1, config.max_iters + 1):
        iterations = i
        with np.errstate(over="ignore", invalid="ignore"):
            # Overflow here is handled by the finiteness guard below.
            p_new = dual_step(p + config.sigma * gradient(u_bar))
            u_new = data_step(u + config.tau * divergence(p_new))
        if not np.isfinite(u_new).all():
            raise SolverDivergedError(i)
        rel = float(np.linalg.norm(u_new - u)) / max(float(np.linalg.norm(u)), 1e-12)
        rel_dual = float(np.linalg.norm(p_new - p)) / max(float(np.linalg.norm(p)), 1e-12)
        u_bar = u_new + config.theta * (u_new - u)
        u = u_new
        p = p_new
        converged = rel < config.rel_tol and rel_dual < config.rel_tol
        if (every and i % every == 0) or converged or i == config.max_iters:
            trace.append(
                TraceEntry(i, energy(u, stack, config), float(_dual_magnitude(p).max()), rel)
            )
        if converged:
            break

    state = SolverState(
        u=u,
        u_bar=u_bar,
        p=p,
        iterations=iterations,
        energy_trace=trace,
        final_rel_change=rel,
        converged=converged,
    )
    return u, state
