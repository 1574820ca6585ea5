"""Smoothing operators and the control-directional derivative of R_t.

The operator Lambda(t) = (P Q_t P*)^{-1/2} (P e^{tA}) C measures how strongly
the transition semigroup regularizes along control directions: its operator
norm blows up like t^{-gamma} as t -> 0, and gamma in (0, 1) is exactly what
the fixed-point construction of the HJB solution needs.  This module builds
Lambda (and its two-time variant), evaluates the control-directional gradient
of the smoothed terminal cost through the Cameron-Martin weight, and fits the
blow-up exponent from a log-log regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InclusionViolated
from .ou import ProjectedModel, ProjectedTerminalCost
from .spectral import QuadratureRule, psd_image_projector, psd_pinv_sqrt, psd_sqrt

INCLUSION_TOL = 1e-6


@dataclass(frozen=True)
class SmoothingOperator:
    """Matrix of (P Q_{t-s} P*)^{-1/2} (P e^{tA}) C with bookkeeping.

    ``s = 0`` is the one-time operator Lambda(t); s > 0 is the two-time
    variant needed by the convolution gradient, where the control factor is
    evaluated at t but the covariance at t - s.
    """

    t: float
    s: float
    matrix: np.ndarray
    rank: int

    @property
    def norm(self) -> float:
        """Operator norm (largest singular value of the N x m matrix)."""
        return float(np.linalg.norm(self.matrix, 2))


def inclusion_residual(cov, columns, rank_tol: float = 1e-12) -> float:
    """Relative residual of ``columns`` outside the numerical image of ``cov``."""
    columns = np.asarray(columns, dtype=float)
    denom = np.linalg.norm(columns)
    if denom == 0.0:
        return 0.0
    proj = psd_image_projector(cov, rank_tol)
    return float(np.linalg.norm(columns - proj @ columns) / denom)


def lambda_operator(
    model: ProjectedModel,
    t: float,
    s: float = 0.0,
    rank_tol: float = 1e-12,
    inclusion_tol: float = INCLUSION_TOL,
) -> SmoothingOperator:
    """Smoothing operator for the pair (t, s), with the image-inclusion check.

    Raises :class:`InclusionViolated` when the control columns leave the
    image of the covariance square root beyond ``inclusion_tol``: for such a
    model the operator is simply not well defined, and failing loudly is the
    point of the check.
    """
    if not t - s > 0.0:
        raise ValueError("need t - s > 0")
    cov = model.proj_cov(t - s)
    ctrl = model.proj_control(t)
    res = inclusion_residual(cov, ctrl, rank_tol)
    if res > inclusion_tol:
        raise InclusionViolated(
            f"image-inclusion residual {res:.3e} > {inclusion_tol:g} at t={t:g}, s={s:g}"
        )
    pinv_sqrt, rank = psd_pinv_sqrt(cov, rank_tol)
    return SmoothingOperator(t=t, s=s, matrix=pinv_sqrt @ ctrl, rank=rank)


def c_gradient_semigroup(
    model: ProjectedModel,
    phi: ProjectedTerminalCost,
    t: float,
    y0,
    rule: QuadratureRule,
) -> np.ndarray:
    """Control-directional gradient of R_t[phi] at projected drift ``y0``.

    Component k is the expectation, over a standardized Gaussian xi, of
    ``phi_bar(proj_cov(t)^{1/2} xi + y0) * <Lambda(t) e_k, xi>``; the linear
    weight is the Cameron-Martin derivative of the shifted Gaussian measure.
    """
    y0 = np.asarray(y0, dtype=float)
    lam = lambda_operator(model, t, 0.0)
    sqrt_cov = psd_sqrt(model.proj_cov(t))
    pts = y0[None, :] + rule.nodes @ sqrt_cov.T
    vals = phi(pts)
    weights = rule.nodes @ lam.matrix          # (n_nodes, m)
    return (rule.weights * vals) @ weights


def c_gradient_norm_bound_check(
    model: ProjectedModel,
    phi: ProjectedTerminalCost,
    t: float,
    y0,
    rule: QuadratureRule,
    mc_slack: float = 0.0,
) -> tuple[float, float, bool]:
    """Check |grad| <= ||Lambda(t)|| * sup|phi_bar| with a small slack.

    The bound is uniform over bounded projected costs; ``mc_slack`` absorbs
    Monte Carlo noise when the rule is stochastic.
    """
    grad = c_gradient_semigroup(model, phi, t, y0, rule)
    lam = lambda_operator(model, t, 0.0)
    lhs = float(np.linalg.norm(grad))
    rhs = lam.norm * phi.bound
    ok = lhs <= rhs * (1.0 + 1e-3) + mc_slack + 1e-12
    return lhs, rhs, ok


@dataclass(frozen=True)
class BlowupFit:
    """Least-squares fit of log||Lambda(t)|| against log t."""

    times: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    residual: float

    @property
    def gamma(self) -> float:
        """Blow-up exponent: ||Lambda(t)|| ~ t^slope means gamma = -slope."""
        return -self.slope


def fit_blowup(
    model: ProjectedModel,
    t_grid,
    exclude_windows: tuple[tuple[float, float], ...] = (),
    drop_largest_fraction: float = 0.10,
) -> BlowupFit:
    """Fit the blow-up exponent of ||Lambda(t)|| over a time grid.

    The power law is asymptotic as t -> 0, so the largest 10% of the grid is
    excluded from the regression by default; ``exclude_windows`` removes
    neighborhoods of known jump times (delay-atom activations).  Requires at
    least 10 logarithmically spaced points.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if t_grid.size < 10:
        raise ValueError("need at least 10 grid points for a blow-up fit")
    norms = np.array([lambda_operator(model, t).norm for t in t_grid])

    keep = np.ones(t_grid.size, dtype=bool)
    n_drop = int(np.floor(drop_largest_fraction * t_grid.size))
    if n_drop > 0:
        keep[np.argsort(t_grid)[-n_drop:]] = False
    for lo, hi in exclude_windows:
        keep &= ~((t_grid >= lo) & (t_grid <= hi))
    if keep.sum() < 5:
        raise ValueError("too few points left after exclusions")

    x = np.log(t_grid[keep])
    y = np.log(norms[keep])
    coeffs, res, *_ = np.polyfit(x, y, 1, full=True)
    slope, intercept = float(coeffs[0]), float(coeffs[1])
    residual = float(np.sqrt(res[0] / keep.sum())) if res.size else 0.0
    return BlowupFit(
        times=t_grid, norms=norms, slope=slope, intercept=intercept, residual=residual
    )
