"""Projected Ornstein-Uhlenbeck engine.

The infinite-dimensional uncontrolled state never appears explicitly: every
quantity the solver needs factors through a finite-rank projection P, and the
:class:`ProjectedModel` contract below collects exactly those projected
quantities.  On top of the contract this module provides the transition
semigroup acting on projected terminal costs, the Cameron-Martin density
between shifted Gaussians, and joint sampling of the projected noise.

Covariance calls always require t > 0; at t = 0 the projected dynamics are
only defined on the original state space and callers evaluate the terminal
cost directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotInCameronMartin
from .spectral import (
    GaussianMeasureN,
    QuadratureRule,
    gauss_expectation,
    psd_image_projector,
    psd_pinv_sqrt,
    psd_sqrt,
)


class ProjectedModel:
    """Capability contract for the projected face of an OU control system.

    Concrete models expose, for the projection P onto an N-dimensional
    subspace and control space of dimension m:

    - ``proj_semigroup_apply(t, x)``: N-vector of P e^{tA} x (extension to
      the enlarged state space included), t > 0;
    - ``project_state(x)``: N-vector of P x for states x of the original
      space (the t -> 0 limit of the above);
    - ``proj_cov(t)``: N x N matrix of P Q_t P*;
    - ``proj_control(t)``: N x m matrix of (P e^{tA}) C;
    - ``pushforward_cov(s, t)``: P e^{sA} Q_{t-s} e^{sA*} P*, 0 < s < t;
    - ``cross_cov(s, t)``: P e^{sA} Q_{t-s} P*;
    - ``noise_cov(s, s2)``: Cov(P W_A(s), P W_A(s2)) of the projected
      stochastic convolution.

    Implementations must be immutable after construction; all queries are
    pure so they can run concurrently.
    """

    proj_dim: int
    control_dim: int

    # time values where t -> proj_control(t) jumps (delay atoms); empty for
    # models with continuous control response
    control_discontinuities: tuple[float, ...] = ()

    def proj_semigroup_apply(self, t: float, x) -> np.ndarray:
        raise NotImplementedError

    def project_state(self, x) -> np.ndarray:
        raise NotImplementedError

    def proj_cov(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def proj_control(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def pushforward_cov(self, s: float, t: float) -> np.ndarray:
        raise NotImplementedError

    def cross_cov(self, s: float, t: float) -> np.ndarray:
        raise NotImplementedError

    def noise_cov(self, s: float, s2: float) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ProjectedTerminalCost:
    """Bounded terminal cost evaluated on projected coordinates.

    ``phi_bar`` must be vectorized: it maps (..., N) arrays to (...) arrays.
    ``bound`` is a declared sup bound used in smoothing estimates.
    """

    phi_bar: object
    bound: float

    def __call__(self, y) -> np.ndarray:
        return np.asarray(self.phi_bar(np.asarray(y, dtype=float)), dtype=float)


def _check_time(t: float):
    if not t > 0.0:
        raise ValueError(f"covariance calls require t > 0, got t={t!r}")


def semigroup_apply(
    model: ProjectedModel,
    phi: ProjectedTerminalCost,
    t: float,
    y0: np.ndarray,
    rule: QuadratureRule,
) -> float:
    """Transition semigroup acting on a projected cost: R_t[phi](x).

    ``y0`` is the precomputed projected drift ``proj_semigroup_apply(t, x)``;
    the result is the expectation of ``phi_bar(z + y0)`` over
    z ~ N(0, proj_cov(t)).
    """
    _check_time(t)
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (model.proj_dim,):
        raise DimensionMismatch(f"y0 must be an N-vector, N={model.proj_dim}")
    mu = GaussianMeasureN(y0, model.proj_cov(t))
    return gauss_expectation(lambda z: phi(z), mu, rule)


def cameron_martin_density(
    cov,
    y,
    z,
    rank_tol: float = 1e-12,
    image_tol: float = 1e-8,
) -> float:
    """Radon-Nikodym density dN(y, cov)/dN(0, cov) evaluated at z.

    Requires y in the image of cov^{1/2} (the two measures are otherwise
    singular): the component of y outside the image must stay below
    ``image_tol * |y|``.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if y.shape != z.shape or cov.shape != (y.size, y.size):
        raise DimensionMismatch("cov must be NxN with y, z of length N")
    pinv_sqrt, _ = psd_pinv_sqrt(cov, rank_tol)
    proj = psd_image_projector(cov, rank_tol)
    ny = np.linalg.norm(y)
    if ny > 0 and np.linalg.norm(y - proj @ y) > image_tol * ny:
        raise NotInCameronMartin(
            "shift has a component outside Im(cov^{1/2}); measures are singular"
        )
    u = pinv_sqrt @ y
    v = pinv_sqrt @ z
    return float(np.exp(u @ v - 0.5 * (u @ u)))


def assemble_block_cov(cov_fn, k: int, n: int) -> np.ndarray:
    """Stack an k*n x k*n covariance from the block kernel cov_fn(i, j)."""
    big = np.empty((k * n, k * n))
    for i in range(k):
        for j in range(i, k):
            block = np.asarray(cov_fn(i, j), dtype=float)
            big[i * n : (i + 1) * n, j * n : (j + 1) * n] = block
            big[j * n : (j + 1) * n, i * n : (i + 1) * n] = block.T
    return big


def sample_block_gaussian(
    cov_fn, k: int, n: int, rng: np.random.Generator, size: int = 1
) -> np.ndarray:
    """Joint zero-mean Gaussian samples for a block covariance kernel.

    One global symmetric square root of the stacked covariance is used
    instead of sequential conditioning: the projected process is not Markov
    and the exact joint law avoids bias.  Returns shape (size, k, n).
    """
    big = assemble_block_cov(cov_fn, k, n)
    root = psd_sqrt(big)
    z = rng.standard_normal((size, k * n))
    return (z @ root.T).reshape(size, k, n)


def sample_noise_path(
    model: ProjectedModel,
    times,
    rule_seed: int,
    size: int = 1,
) -> np.ndarray:
    """Joint sample of the projected stochastic convolution (P W_A(t_i))_i.

    ``times`` must be strictly increasing and positive.  Returns an array of
    shape (size, len(times), N); fixed seeds reproduce paths bitwise.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise DimensionMismatch("times must be a nonempty 1-D array")
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing and positive")
    rng = np.random.default_rng(rule_seed)
    return sample_block_gaussian(
        lambda i, j: model.noise_cov(times[i], times[j]),
        len(times),
        model.proj_dim,
        rng,
        size=size,
    )
