"""Reduced-size invariant suite behind the ``check`` CLI subcommand.

Each invariant is a named callable returning (ok, detail).  The suite runs
everything, collects a machine-readable report, and the CLI exits nonzero
naming the first failing invariant.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .delay import DelayProjectedModel, gramian, kalman_rank
from .errors import PshjbError
from .hjb import Hamiltonian, h_min
from .ou import cameron_martin_density, sample_noise_path
from .smoothing import fit_blowup, inclusion_residual, lambda_operator
from .spectral import (
    GaussianMeasureN,
    build_quadrature,
    gauss_expectation,
    psd_image_projector,
    psd_pinv_sqrt,
    psd_sqrt,
)


def _random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return a @ a.T + 0.1 * np.eye(dim)


def _check_psd_roundtrip(run: RunConfig):
    rng = np.random.default_rng(run.seed)
    worst = 0.0
    for dim in (2, 5, 12, 20):
        m = _random_spd(rng, dim)
        r = psd_sqrt(m)
        worst = max(worst, np.linalg.norm(r @ r - m) / np.linalg.norm(m))
    return worst <= 1e-10, f"max relative Frobenius error {worst:.2e}"


def _check_pinv_projector(run: RunConfig):
    rng = np.random.default_rng(run.seed + 1)
    m = _random_spd(rng, 6)
    m[5] = m[:, 5] = 0.0          # force a kernel direction
    pinv, rank = psd_pinv_sqrt(m)
    proj = pinv @ psd_sqrt(m)
    err = np.linalg.norm(proj - psd_image_projector(m))
    return err <= 1e-8 and rank == 5, f"projector error {err:.2e}, rank {rank}"


def _check_hermite_exactness(run: RunConfig):
    rule = build_quadrature(1, "tensor-hermite", 8)
    mu = GaussianMeasureN(np.zeros(1), np.eye(1))
    # E z^{2n} = (2n-1)!! for the standard normal; degree 14 < 2*8 - 1
    est = gauss_expectation(lambda z: z[:, 0] ** 14, mu, rule)
    exact = float(np.prod(np.arange(13, 0, -2)))
    return abs(est - exact) <= 1e-12 * exact, f"E z^14 = {est!r} vs {exact!r}"


def _check_mc_reproducible(run: RunConfig):
    r1 = build_quadrature(2, "monte-carlo", 500, seed=run.seed + 7)
    r2 = build_quadrature(2, "monte-carlo", 500, seed=run.seed + 7)
    same = np.array_equal(r1.nodes, r2.nodes) and np.array_equal(r1.weights, r2.weights)
    return same, "identical nodes/weights for a fixed seed"


def _check_noise_consistency(run: RunConfig):
    worst = 0.0
    for s in (0.05, 0.3, 0.9 * run.cost.horizon):
        d = np.abs(run.model.noise_cov(s, s) - run.model.proj_cov(s)).max()
        worst = max(worst, d)
    return worst <= 1e-12, f"max |noise_cov(s,s) - proj_cov(s)| = {worst:.2e}"


def _check_inclusion(run: RunConfig):
    worst = 0.0
    for t in np.geomspace(1e-3, run.cost.horizon, 8):
        worst = max(
            worst, inclusion_residual(run.model.proj_cov(t), run.model.proj_control(t))
        )
    return worst <= 1e-6, f"max inclusion residual {worst:.2e}"


def _check_blowup_exponent(run: RunConfig):
    windows = tuple((0.9 * d, 1.1 * d) for d in run.model.control_discontinuities)
    fit = fit_blowup(
        run.model, np.geomspace(1e-4, 0.1, 15), exclude_windows=windows
    )
    ok = 0.0 < fit.gamma < 1.0
    return ok, f"fitted gamma {fit.gamma:.3f}"


def _check_lambda_norm_continuity(run: RunConfig):
    grid = np.geomspace(1e-3, 0.5, 40)
    jumps = run.model.control_discontinuities
    norms = [lambda_operator(run.model, t).norm for t in grid]
    worst = 0.0
    for a, b, na, nb in zip(grid[:-1], grid[1:], norms[:-1], norms[1:]):
        if any(a <= d <= b for d in jumps):
            continue
        worst = max(worst, abs(nb - na) / na)
    return worst < 0.10, f"max relative step {worst:.3f} at grid ratio ~1.17"


def _check_gramian_monotone(run: RunConfig):
    if not isinstance(run.model, DelayProjectedModel):
        return True, "not a delay model (skipped)"
    cfg = run.model.cfg
    prev = gramian(cfg, 0.05)
    for t in (0.1, 0.3, 0.7):
        cur = gramian(cfg, t)
        if np.linalg.eigvalsh(cur - prev).min() < -1e-10:
            return False, f"gramian not monotone at t={t}"
        prev = cur
    return True, "gramian differences PSD"


def _check_kalman_vs_gramian(run: RunConfig):
    if not isinstance(run.model, DelayProjectedModel):
        return True, "not a delay model (skipped)"
    cfg = run.model.cfg
    rank = kalman_rank(cfg)
    sv = np.linalg.svd(gramian(cfg, 1.0), compute_uv=False)
    grank = int(np.count_nonzero(sv > 1e-8 * max(sv[0], 1e-300)))
    ok = rank == grank == cfg.n
    detail = f"kalman rank {rank}, gramian rank {grank}, n {cfg.n}"
    if rank < cfg.n:
        return False, "rank-deficient configuration: " + detail
    return ok, detail


def _check_hmin(run: RunConfig):
    ham = Hamiltonian(np.zeros((1, run.model.control_dim)), np.zeros(1))
    val, idx = h_min(ham, np.ones(run.model.control_dim))
    return (val, idx) == (0.0, 0), f"trivial control set gives {(val, idx)}"


def _check_cm_normalization(run: RunConfig):
    rng = np.random.default_rng(run.seed + 3)
    cov = _random_spd(rng, 2)
    y = 0.5 * rng.standard_normal(2)
    rule = build_quadrature(2, "tensor-hermite", 30)
    mu = GaussianMeasureN(np.zeros(2), cov)
    total = gauss_expectation(
        lambda z: np.array([cameron_martin_density(cov, y, zi) for zi in z]), mu, rule
    )
    return abs(total - 1.0) <= 1e-6, f"integral of density = {total!r}"


def _check_noise_path_determinism(run: RunConfig):
    times = [0.2, 0.5, 0.9]
    p1 = sample_noise_path(run.model, times, rule_seed=run.seed + 11)
    p2 = sample_noise_path(run.model, times, rule_seed=run.seed + 11)
    return np.array_equal(p1, p2), "identical paths for a fixed seed"


def _check_psd_probe(run: RunConfig):
    probe = run.raw.get("check", {}).get("psd_probe")
    if probe is None:
        return True, "no probe configured (skipped)"
    try:
        psd_sqrt(np.asarray(probe, dtype=float))
    except PshjbError as exc:
        return False, f"probe rejected: {exc}"
    return True, "probe accepted"


INVARIANTS = [
    ("psd_sqrt_roundtrip", _check_psd_roundtrip),
    ("pinv_sqrt_projector", _check_pinv_projector),
    ("hermite_polynomial_exactness", _check_hermite_exactness),
    ("monte_carlo_reproducible", _check_mc_reproducible),
    ("noise_cov_consistency", _check_noise_consistency),
    ("control_image_inclusion", _check_inclusion),
    ("blowup_exponent_in_range", _check_blowup_exponent),
    ("lambda_norm_continuity", _check_lambda_norm_continuity),
    ("gramian_monotone", _check_gramian_monotone),
    ("kalman_rank_full", _check_kalman_vs_gramian),
    ("hmin_trivial_set", _check_hmin),
    ("cameron_martin_normalization", _check_cm_normalization),
    ("noise_path_determinism", _check_noise_path_determinism),
    ("psd_probe", _check_psd_probe),
]


def run_invariant_suite(run: RunConfig) -> dict:
    """Run every invariant at reduced sizes; returns a JSON-ready report."""
    results = []
    for name, fn in INVARIANTS:
        try:
            ok, detail = fn(run)
        except PshjbError as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"name": name, "ok": bool(ok), "detail": str(detail)})
    failing = [r["name"] for r in results if not r["ok"]]
    return {"ok": not failing, "failing": failing, "invariants": results}
