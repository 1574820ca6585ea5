"""Dense PSD matrix functions and Gaussian expectation engines.

Everything here works on small dense symmetric matrices (dimensions up to a
few hundred).  Matrix functions go through a symmetric eigendecomposition so
that pseudo-inverses annihilate the kernel exactly instead of amplifying
noise; speed is a non-issue at these sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DimensionTooLarge, NotPSD

# Relative thresholds used throughout: eigenvalues below -TOL_PSD * lam_max
# raise NotPSD, eigenvalues below RANK_TOL * lam_max count as kernel.
TOL_PSD = 1e-10
RANK_TOL = 1e-12


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated diagonal basis with positive, nondecreasing eigenvalues."""

    n_modes: int
    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", lam)
        if self.n_modes < 1 or lam.shape != (self.n_modes,):
            raise DimensionMismatch("eigenvalue list must have n_modes entries")
        if np.any(lam <= 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be nondecreasing")


@dataclass(frozen=True)
class SymPSDMatrix:
    """A validated symmetric numerically-PSD matrix.

    Construction symmetrizes exactly and rejects matrices whose smallest
    eigenvalue is below ``-TOL_PSD * lam_max``.
    """

    entries: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch("entries must be a square matrix")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-8 * (1.0 + np.abs(a).max())):
            raise ValueError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        _assert_psd_spectrum(np.linalg.eigvalsh(a))
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "dim", a.shape[0])


@dataclass(frozen=True)
class GaussianMeasureN:
    """Gaussian measure on R^N given by mean vector and covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        c = np.asarray(self.covariance, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or m.shape != (c.shape[0],):
            raise DimensionMismatch("mean length must equal covariance dim")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", c)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights approximating expectations under N(0, I_dim).

    ``kind`` is ``"tensor-hermite"`` or ``"monte-carlo"``; nodes have shape
    (n_nodes, dim) and weights sum to one.
    """

    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 2 or w.shape != (nodes.shape[0],):
            raise DimensionMismatch("nodes must be (n, dim), weights (n,)")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1 within 1e-12")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]


def _assert_psd_spectrum(lam: np.ndarray, tol_psd: float = TOL_PSD) -> float:
    lam_max = float(lam.max(initial=0.0))
    cutoff = tol_psd * max(lam_max, 0.0)
    if lam.min(initial=0.0) < -max(cutoff, 1e-300):
        raise NotPSD(
            f"eigenvalue {lam.min():.3e} below -{tol_psd:g} * lam_max ({lam_max:.3e})"
        )
    return lam_max


def _eigh(m) -> tuple[np.ndarray, np.ndarray]:
    a = m.entries if isinstance(m, SymPSDMatrix) else np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("expected a square matrix")
    return np.linalg.eigh(0.5 * (a + a.T))


def psd_sqrt(m, tol_psd: float = TOL_PSD) -> np.ndarray:
    """Symmetric PSD square root of ``m``.

    Negative eigenvalues above ``-tol_psd * lam_max`` are clamped to zero
    (covariances assembled from exponentials accumulate rounding); anything
    below raises :class:`NotPSD`.
    """
    lam, v = _eigh(m)
    _assert_psd_spectrum(lam, tol_psd)
    lam = np.clip(lam, 0.0, None)
    return (v * np.sqrt(lam)) @ v.T


def psd_pinv_sqrt(
    m, rank_tol: float = RANK_TOL, tol_psd: float = TOL_PSD
) -> tuple[np.ndarray, int]:
    """Pseudo-inverse square root of a PSD matrix and its numerical rank.

    On the image of ``m`` the result acts as ``m**-0.5``; on the kernel it is
    zero.  Eigenvalues above ``rank_tol * lam_max`` count toward the rank.
    """
    lam, v = _eigh(m)
    lam_max = _assert_psd_spectrum(lam, tol_psd)
    keep = lam > rank_tol * lam_max
    rank = int(np.count_nonzero(keep))
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / np.sqrt(lam[keep])
    return (v * inv) @ v.T, rank


def psd_image_projector(m, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthogonal projector onto the numerical image of a PSD matrix."""
    lam, v = _eigh(m)
    lam_max = _assert_psd_spectrum(lam)
    keep = lam > rank_tol * lam_max
    return (v[:, keep]) @ v[:, keep].T


def build_quadrature(
    dim: int,
    kind: str = "tensor-hermite",
    order_or_samples: int = 8,
    seed: int | None = None,
) -> QuadratureRule:
    """Build a standard-normal quadrature rule in ``dim`` dimensions.

    Tensor Gauss-Hermite is exact for polynomials of degree <= 2*order - 1
    per coordinate but its node count is order**dim, so it is refused above
    four dimensions; Monte Carlo works in any dimension and is reproducible
    for a fixed seed.
    """
    if dim < 1:
        raise DimensionMismatch("dim must be >= 1")
    if kind == "tensor-hermite":
        if dim > 4:
            raise DimensionTooLarge(
                f"tensor-hermite with dim={dim} > 4 (node count {order_or_samples}**{dim})"
            )
        x, w = np.polynomial.hermite.hermgauss(order_or_samples)
        z = np.sqrt(2.0) * x          # physicists' -> standard normal nodes
        w = w / np.sqrt(np.pi)
        grids = np.meshgrid(*([z] * dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        wgrids = np.meshgrid(*([w] * dim), indexing="ij")
        weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
        weights = weights / weights.sum()
        return QuadratureRule("tensor-hermite", nodes, weights)
    if kind == "monte-carlo":
        if seed is None:
            raise ValueError("monte-carlo rule requires a seed")
        rng = np.random.default_rng(seed)
        nodes = rng.standard_normal((order_or_samples, dim))
        weights = np.full(order_or_samples, 1.0 / order_or_samples)
        return QuadratureRule("monte-carlo", nodes, weights, seed=seed)
    raise ValueError(f"unknown quadrature kind {kind!r}")


def default_rule_for_dim(
    dim: int, order: int = 8, mc_samples: int = 4000, seed: int = 0
) -> QuadratureRule:
    """Tensor-Hermite for dim <= 3, Monte Carlo beyond (node-count explosion)."""
    if dim <= 3:
        return build_quadrature(dim, "tensor-hermite", order)
    return build_quadrature(dim, "monte-carlo", mc_samples, seed=seed)


def gauss_expectation(
    f,
    mu: GaussianMeasureN,
    rule: QuadratureRule,
    return_stderr: bool = False,
):
    """Expectation of ``f`` under ``mu`` using a standard-normal rule.

    ``f`` must accept an (n, dim) array and return an (n,) array.  Points are
    ``mean + L @ node`` with ``L = psd_sqrt(covariance)``.  With
    ``return_stderr=True`` the Monte Carlo standard error is also returned
    (zero for deterministic rules).
    """
    if rule.dim != mu.dim:
        raise DimensionMismatch(
            f"rule dim {rule.dim} does not match measure dim {mu.dim}"
        )
    sqrt_cov = psd_sqrt(mu.covariance)
    pts = mu.mean[None, :] + rule.nodes @ sqrt_cov.T
    vals = np.asarray(f(pts), dtype=float)
    if vals.shape != (rule.nodes.shape[0],):
        raise DimensionMismatch("integrand must map (n, dim) -> (n,)")
    est = float(rule.weights @ vals)
    if not return_stderr:
        return est
    if rule.kind == "monte-carlo":
        n = vals.shape[0]
        stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    else:
        stderr = 0.0
    return est, stderr
