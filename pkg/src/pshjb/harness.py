"""Policy simulation and value-dominance cross checks.

Because the running cost never touches the state, open-loop policies admit
exact terminal sampling: the projected terminal state is Gaussian around the
deterministic drift-plus-control mean, so no path discretization enters and
their simulated costs are unbiased up to the control-response quadrature.

Greedy (feedback) policies are simulated on a step grid.  The tracked
quantity is Z(s) = P e^{(T-s)A} X(s), which is exactly what the solved
gradient consumes and which reaches P X(T) at the horizon; its noise
increments are independent Gaussians with covariances assembled from
pushforward_cov, so the path law is exact and the only approximation is that
the control is held constant between steps (itself an admissible policy, so
dominance bounds remain valid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DominanceViolated
from .hjb import HJBSolution, Hamiltonian, h_min_batch, interp_fbar
from .ou import ProjectedModel, ProjectedTerminalCost, sample_block_gaussian
from .spectral import psd_sqrt


@dataclass(frozen=True)
class CostSpec:
    """Finite-horizon objective: time cost, control cost grid, terminal cost."""

    ell0: object                  # vectorized callable of time
    ham: Hamiltonian
    phi: ProjectedTerminalCost
    horizon: float

    def ell0_integral(self, a: float, b: float, n: int = 2001) -> float:
        s = np.linspace(a, b, n)
        return float(np.trapezoid(np.asarray(self.ell0(s), dtype=float), s))


@dataclass(frozen=True)
class Policy:
    """Admissible control policy emitting indices into the control grid.

    ``constant``: one index for all steps; ``open_loop``: an index per step
    of the simulation grid; ``greedy``: the Hamiltonian argmin at the
    current control-gradient of a solved value function.
    """

    kind: str
    index: int = 0
    indices: np.ndarray | None = None
    solution: HJBSolution | None = None
    name: str = ""

    @classmethod
    def constant(cls, index: int, name: str = "constant") -> "Policy":
        return cls(kind="constant", index=index, name=name)

    @classmethod
    def open_loop(cls, indices, name: str = "open_loop") -> "Policy":
        return cls(kind="open_loop", indices=np.asarray(indices, dtype=int), name=name)

    @classmethod
    def greedy(cls, solution: HJBSolution, name: str = "greedy") -> "Policy":
        return cls(kind="greedy", solution=solution, name=name)


@dataclass(frozen=True)
class SimulationResult:
    sample_costs: np.ndarray
    mean: float
    std_error: float
    terminal_projected_states: np.ndarray

    @classmethod
    def from_costs(cls, costs: np.ndarray, terminals: np.ndarray) -> "SimulationResult":
        n = costs.size
        se = float(costs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(costs, float(costs.mean()), se, terminals)


def _control_integrals(
    model: ProjectedModel, t0: float, horizon: float, steps: np.ndarray, n_gl: int = 12
) -> np.ndarray:
    """B_j = int_{s_j}^{s_{j+1}} proj_control(T - r) dr for each step.

    Composite Gauss-Legendre split at the control-response discontinuities
    (delay-atom activations); nodes are interior so proj_control is never
    evaluated at exactly 0.
    """
    x, w = np.polynomial.legendre.leggauss(n_gl)
    out = np.empty((steps.size - 1, model.proj_dim, model.control_dim))
    for j in range(steps.size - 1):
        lo, hi = horizon - steps[j + 1], horizon - steps[j]
        cuts = [lo] + [d for d in model.control_discontinuities if lo < d < hi] + [hi]
        acc = np.zeros((model.proj_dim, model.control_dim))
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            if half <= 0:
                continue
            for xi, wi in zip(x, w):
                acc += wi * half * model.proj_control(mid + half * xi)
        out[j] = acc
    return out


def simulate_cost(
    model: ProjectedModel,
    cost: CostSpec,
    policy: Policy,
    t0: float,
    x0,
    n_samples: int = 10_000,
    time_steps: int = 20,
    seed: int = 0,
) -> SimulationResult:
    """Monte Carlo cost of a policy started from (t0, x0)."""
    T = cost.horizon
    if not 0.0 <= t0 < T:
        raise ValueError("need 0 <= t0 < horizon")
    rng = np.random.default_rng(seed)
    steps = np.linspace(t0, T, time_steps + 1)
    dt = steps[1] - steps[0]
    ell0_int = cost.ell0_integral(t0, T)
    b_ints = _control_integrals(model, t0, T, steps)
    u_grid = cost.ham.control_points
    ell1 = cost.ham.running_cost
    z_det = np.asarray(model.proj_semigroup_apply(T - t0, x0), dtype=float)

    if policy.kind in ("constant", "open_loop"):
        if policy.kind == "constant":
            idx = np.full(time_steps, policy.index, dtype=int)
        else:
            idx = policy.indices
            if idx is None or idx.shape != (time_steps,):
                raise DimensionMismatch("open-loop policy needs one index per step")
        mean_terminal = z_det + np.einsum("jnk,jk->n", b_ints, u_grid[idx])
        noise = rng.standard_normal((n_samples, model.proj_dim)) @ psd_sqrt(
            model.proj_cov(T - t0)
        ).T
        terminals = mean_terminal[None, :] + noise
        costs = ell0_int + float(ell1[idx].sum() * dt) + cost.phi(terminals)
        return SimulationResult.from_costs(costs, terminals)

    if policy.kind != "greedy":
        raise ValueError(f"unknown policy kind {policy.kind!r}")
    sol = policy.solution
    if sol is None:
        raise ValueError("greedy policy needs an HJB solution")

    # Joint noise of Z_j = P e^{(T-s_j)A} X(s_j): the stochastic parts are
    # integrals of a common kernel, so Cov(Y_i, Y_j) depends on min(i, j)
    # only; one global factorization gives the exact joint law.
    def block(i, j):
        s = steps[min(i, j) + 1]
        if s >= T:
            return model.proj_cov(T - t0)
        return model.pushforward_cov(T - s, T - t0)

    noise = sample_block_gaussian(block, time_steps, model.proj_dim, rng, n_samples)
    t_min = sol.iterate.time_grid[1]
    ctrl_sum = np.zeros((n_samples, model.proj_dim))
    run_cost = np.zeros(n_samples)
    z = np.tile(z_det, (n_samples, 1))
    for j in range(time_steps):
        # gradient clamped to the first resolved node near the horizon; the
        # resulting control is still admissible, so dominance is unaffected
        tau = max(T - steps[j], t_min)
        p = tau ** (-sol.gamma) * interp_fbar(sol.iterate, tau, z)
        _, idx = h_min_batch(cost.ham, p)
        run_cost += ell1[idx] * dt
        ctrl_sum += u_grid[idx] @ b_ints[j].T
        z = z_det[None, :] + ctrl_sum + noise[:, j, :]
    costs = ell0_int + run_cost + cost.phi(z)   # z now equals P X(T)
    return SimulationResult.from_costs(costs, z)


def value_dominance_check(
    model: ProjectedModel,
    cost: CostSpec,
    sol: HJBSolution,
    policies,
    t0: float,
    x0,
    n_samples: int = 10_000,
    time_steps: int = 20,
    seed: int = 0,
    keep_samples: bool = False,
) -> dict:
    """Check v(t0, x0) <= mean policy cost + 3 std errors for every policy.

    The greedy suboptimality gap is reported as a diagnostic; optimality of
    the greedy feedback is not asserted (no verification theorem backs it).
    Raises :class:`DominanceViolated` naming the offending policy.
    ``keep_samples`` attaches the per-sample cost arrays to the report.
    """
    from .hjb import eval_value

    value = eval_value(sol, model, t0, x0)
    report = {"value": value, "policies": [], "greedy_gap": None}
    for i, pol in enumerate(policies):
        res = simulate_cost(
            model, cost, pol, t0, x0, n_samples, time_steps, seed=seed + 17 * i
        )
        gap = res.mean - value
        ok = value <= res.mean + 3.0 * res.std_error
        entry = {
            "name": pol.name or pol.kind,
            "kind": pol.kind,
            "mean": res.mean,
            "std_error": res.std_error,
            "gap": gap,
            "ok": bool(ok),
        }
        if keep_samples:
            entry["samples"] = res.sample_costs
        report["policies"].append(entry)
        if pol.kind == "greedy":
            report["greedy_gap"] = gap
        if not ok:
            raise DominanceViolated(
                f"policy {pol.name or pol.kind!r}: value {value:.6g} exceeds "
                f"mean cost {res.mean:.6g} + 3 se ({3 * res.std_error:.3g})"
            )
    return report


def random_open_loop_policies(
    ham: Hamiltonian, time_steps: int, n_policies: int, seed: int = 0
) -> list[Policy]:
    rng = np.random.default_rng(seed)
    n_u = ham.control_points.shape[0]
    return [
        Policy.open_loop(rng.integers(0, n_u, size=time_steps), name=f"open_loop_{i}")
        for i in range(n_policies)
    ]
