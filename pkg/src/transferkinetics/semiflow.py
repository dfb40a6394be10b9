"""Deterministic transfer dynamics on atomic measures.

The population density u evolves by

    du/dt = 2*tau * (T(u) - u),        T(u) = B(u, u) / mass(u),

where B integrates the transfer kernel over all ordered interaction pairs.
Time stepping uses the exponential-Euler update

    u  <-  exp(-2*tau*dt) * u + (1 - exp(-2*tau*dt)) * T(u),

a convex combination of nonnegative measures, so positivity, total mass and
total transferable quantity are preserved exactly (up to float rounding) at
any step size.  B squares the atom count, so each step compresses back to a
configurable budget; compression also preserves mass and mean exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ._fast import reduce_sorted_atoms
from .errors import InvalidConfigError, InvalidInputError, ResourceLimitError
from .kernels import Mixed, RobinHood, Sheriff, TransferKernel, _DistributedKernel
from .measures import DEFAULT_WEIGHT_FLOOR, AtomicMeasure, compress_detailed
from .summary import SnapshotStats, snapshot_stats

DEFAULT_ATOM_BUDGET = 2000
DEFAULT_PAIR_LIMIT = 20_000_000
DEFAULT_DENSITY_ATOMS = 8


@dataclass(frozen=True)
class SolverConfig:
    kernel: TransferKernel
    tau: float = 1.0
    dt: float = 0.05
    t_end: float = 1.0
    atom_budget: int = DEFAULT_ATOM_BUDGET
    snapshot_every: int = 1
    density_atoms: int = DEFAULT_DENSITY_ATOMS
    pair_limit: int = DEFAULT_PAIR_LIMIT
    weight_floor: float = DEFAULT_WEIGHT_FLOOR

    def __post_init__(self):
        if not (self.tau > 0.0) or not np.isfinite(self.tau):
            raise InvalidConfigError(f"tau must be positive, got {self.tau}")
        if not (self.dt > 0.0) or not np.isfinite(self.dt):
            raise InvalidConfigError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0.0 or not np.isfinite(self.t_end):
            raise InvalidConfigError(f"t_end must be >= 0, got {self.t_end}")
        if self.t_end > 0.0 and self.dt > self.t_end * (1 + 1e-12):
            raise InvalidConfigError(
                f"dt={self.dt} exceeds t_end={self.t_end}")
        if self.atom_budget < 1:
            raise InvalidConfigError(f"atom_budget must be >= 1, got {self.atom_budget}")
        if self.snapshot_every < 1:
            raise InvalidConfigError("snapshot_every must be >= 1")
        if self.density_atoms < 1:
            raise InvalidConfigError("density_atoms must be >= 1")


@dataclass
class Trajectory:
    """Time-stamped measure snapshots with per-snapshot statistics."""

    times: list[float]
    states: list
    stats: list[SnapshotStats]
    kind: str = "atomic"
    # cumulative W1 cost of compression merges up to each snapshot
    compression_w1: list[float] = field(default_factory=list)
    # cumulative mass clipped off the grid (grid solver only)
    lost_mass: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.stats)):
            raise InvalidInputError("trajectory times/states/stats lengths differ")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise InvalidInputError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def final_state(self):
        return self.states[-1]

    def drift_report(self) -> dict:
        """Worst relative drift of the conserved quantities along the run."""
        m0 = self.stats[0].mass
        mu0 = self.stats[0].mean
        mass_drift = max(abs(s.mass - m0) for s in self.stats) / abs(m0)
        mean_drift = max(abs(s.mean - mu0) for s in self.stats) / (1.0 + abs(mu0))
        return {"mass_rel_drift": mass_drift, "mean_rel_drift": mean_drift}


# -- the bilinear pair-interaction operator ------------------------------------------


def _atomic_terms(kernel: TransferKernel, density_atoms: int, collapsed: bool):
    """(weight, a, offsets) triples describing the kernel's outcome mixture as
    atoms at a*x1 + (1-a)*x2 + offset."""
    terms = kernel.collapsed_terms() if collapsed else kernel.affine_terms()
    if isinstance(kernel, _DistributedKernel):
        offsets = kernel.g.representative_offsets(density_atoms)
    else:
        offsets = np.zeros(1)
    return [(w, a, offsets) for w, a in terms]


def _pair_product_arrays(pos_u, w_u, pos_v, w_v, terms, pair_limit):
    """Raw outcome atoms of the kernel integrated against u x v."""
    n_out = pos_u.size * pos_v.size * sum(t[2].size for t in terms)
    if n_out > pair_limit:
        raise ResourceLimitError(
            f"pair interaction would create {n_out} atoms (> limit {pair_limit}); "
            f"compress the operands first")
    ps = []
    ws = []
    for wt, a, offsets in terms:
        base_p = np.add.outer(a * pos_u, (1.0 - a) * pos_v).ravel()
        base_w = np.multiply.outer(w_u, w_v).ravel()
        if offsets.size == 1 and offsets[0] == 0.0:
            ps.append(base_p)
            ws.append(base_w * wt)
        else:
            share = wt / offsets.size
            for off in offsets:
                ps.append(base_p + off)
                ws.append(base_w * share)
    return np.concatenate(ps), np.concatenate(ws)


def bilinear_transfer(u: AtomicMeasure, v: AtomicMeasure, kernel: TransferKernel,
                      density_atoms: int = DEFAULT_DENSITY_ATOMS,
                      pair_limit: int = DEFAULT_PAIR_LIMIT) -> AtomicMeasure:
    """Kernel-weighted product measure over all ordered atom pairs of (u, v).

    Satisfies tv(B(u,v)) <= tv(u) tv(v); for nonnegative inputs the result is
    nonnegative with mass(B) = mass(u) mass(v) and first moment
    [M1(u) M0(v) + M0(u) M1(v)] / 2.  Distributed kernels are represented by
    ``density_atoms`` quantile-midpoint atoms per smeared outcome.
    """
    if u.is_zero or v.is_zero:
        return AtomicMeasure.zero(max(u.merge_tol, v.merge_tol))
    terms = _atomic_terms(kernel, density_atoms, collapsed=False)
    pos, w = _pair_product_arrays(u.positions, u.weights, v.positions, v.weights,
                                  terms, pair_limit)
    return AtomicMeasure(pos, w, max(u.merge_tol, v.merge_tol))


def transfer_operator(u: AtomicMeasure, kernel: TransferKernel,
                      density_atoms: int = DEFAULT_DENSITY_ATOMS,
                      pair_limit: int = DEFAULT_PAIR_LIMIT) -> AtomicMeasure:
    """Normalized self-interaction T(u) = B(u, u) / mass(u); T(0) = 0.

    Preserves total mass and first moment; positively homogeneous.
    """
    if not u.is_nonnegative:
        raise InvalidInputError("transfer operator requires a nonnegative measure")
    if u.is_zero:
        return AtomicMeasure.zero(u.merge_tol)
    m = u.mass()
    terms = _atomic_terms(kernel, density_atoms, collapsed=True)
    pos, w = _pair_product_arrays(u.positions, u.weights, u.positions, u.weights,
                                  terms, pair_limit)
    return AtomicMeasure(pos, w / m, u.merge_tol)


def _raw_exponential_step(pos, w, ea, terms, budget, merge_tol, weight_floor,
                          pair_limit):
    """One fused step on raw arrays: ea*u + (1-ea)*B(u,u)/m, normalized and
    compressed.  Returns (pos, w, w1_displacement_of_compression)."""
    m = w.sum()
    t_pos, t_w = _pair_product_arrays(pos, w, pos, w, terms, pair_limit)
    new_pos = np.concatenate([pos, t_pos])
    new_w = np.concatenate([w * ea, t_w * ((1.0 - ea) / m)])
    order = np.argsort(new_pos)
    out_pos, out_w, disp, _ = reduce_sorted_atoms(
        new_pos[order], new_w[order], merge_tol, weight_floor * m, budget)
    return out_pos, out_w, disp


def exponential_step(u: AtomicMeasure, dt: float, tau: float,
                     kernel: TransferKernel, atom_budget: int = DEFAULT_ATOM_BUDGET,
                     density_atoms: int = DEFAULT_DENSITY_ATOMS,
                     weight_floor: float = DEFAULT_WEIGHT_FLOOR,
                     pair_limit: int = DEFAULT_PAIR_LIMIT) -> AtomicMeasure:
    """One exponential-Euler update of the transfer dynamics, then compression
    to ``atom_budget`` atoms."""
    if not (dt > 0.0) or not np.isfinite(dt):
        raise InvalidConfigError(f"dt must be positive, got {dt}")
    if not (tau > 0.0) or not np.isfinite(tau):
        raise InvalidConfigError(f"tau must be positive, got {tau}")
    if atom_budget < 1:
        raise InvalidConfigError(f"atom_budget must be >= 1, got {atom_budget}")
    if not u.is_nonnegative:
        raise InvalidInputError("exponential step requires a nonnegative measure")
    if u.is_zero:
        return u
    ea = math.exp(-2.0 * tau * dt)
    terms = _atomic_terms(kernel, density_atoms, collapsed=True)
    pos, w, _ = _raw_exponential_step(u.positions, u.weights, ea, terms,
                                      atom_budget, u.merge_tol, weight_floor,
                                      pair_limit)
    return AtomicMeasure(pos, w, u.merge_tol, _normalized=True)


def _plan_steps(t_end: float, dt: float):
    """Step sizes covering [0, t_end] with uniform dt and one final partial
    step when t_end is not an integer multiple of dt."""
    if t_end == 0.0:
        return 0, 0.0
    n_full = int(math.floor(t_end / dt + 1e-9))
    remainder = t_end - n_full * dt
    if remainder <= 1e-9 * dt:
        remainder = 0.0
    return n_full, remainder


def evolve(u0: AtomicMeasure, config: SolverConfig) -> Trajectory:
    """Propagate the transfer dynamics, recording snapshots every
    ``config.snapshot_every`` steps (plus the initial and final states)."""
    if not u0.is_nonnegative:
        raise InvalidInputError("evolve requires a nonnegative initial measure")
    if u0.is_zero:
        raise InvalidInputError("evolve requires a nonzero initial measure")
    kernel = config.kernel
    terms = _atomic_terms(kernel, config.density_atoms, collapsed=True)
    ea = math.exp(-2.0 * config.tau * config.dt)
    n_full, remainder = _plan_steps(config.t_end, config.dt)

    pos, w = u0.positions, u0.weights
    if pos.size > config.atom_budget:
        initial = compress_detailed(u0, config.atom_budget, config.weight_floor)
        pos, w = initial.measure.positions, initial.measure.weights
        cum_disp = initial.w1_displacement
    else:
        cum_disp = 0.0

    times = [0.0]
    states = [AtomicMeasure(pos, w, u0.merge_tol, _normalized=True)]
    stats = [snapshot_stats(pos, w)]
    comp = [cum_disp]

    def record(t, pos, w):
        times.append(t)
        states.append(AtomicMeasure(pos, w, u0.merge_tol, _normalized=True))
        stats.append(snapshot_stats(pos, w))
        comp.append(cum_disp)

    total_steps = n_full + (1 if remainder > 0.0 else 0)
    for k in range(1, n_full + 1):
        pos, w, disp = _raw_exponential_step(pos, w, ea, terms, config.atom_budget,
                                             u0.merge_tol, config.weight_floor,
                                             config.pair_limit)
        cum_disp += disp
        if k % config.snapshot_every == 0 or (k == total_steps):
            record(k * config.dt, pos, w)
    if remainder > 0.0:
        ea_last = math.exp(-2.0 * config.tau * remainder)
        pos, w, disp = _raw_exponential_step(pos, w, ea_last, terms,
                                             config.atom_budget, u0.merge_tol,
                                             config.weight_floor, config.pair_limit)
        cum_disp += disp
        record(config.t_end, pos, w)
    return Trajectory(times=times, states=states, stats=stats, kind="atomic",
                      compression_w1=comp)


# -- derived moment dynamics -----------------------------------------------------------


def variance_rate(kernel: TransferKernel, tau: float = 1.0) -> float:
    """Exact exponential rate r with d(Var)/dt = r * Var under the dynamics.

    From the second-moment action of the kernel mixture (verified against a
    slope-fit of evolve() in the test suite):

        robin_hood: r = -4 tau f (1 - f)
        sheriff:    r = +4 tau f (1 + f)
        mixed:      r = 4 tau [ (1-p) f2 (1+f2) - p f1 (1-f1) ]

    Distributed kernels are unsupported: the smearing density adds a
    g-dependent diffusion term.
    """
    if not (tau > 0.0):
        raise InvalidConfigError(f"tau must be positive, got {tau}")
    if isinstance(kernel, RobinHood):
        return -4.0 * tau * kernel.f * (1.0 - kernel.f)
    if isinstance(kernel, Sheriff):
        return 4.0 * tau * kernel.f * (1.0 + kernel.f)
    if isinstance(kernel, Mixed):
        return 4.0 * tau * ((1.0 - kernel.p) * kernel.f2 * (1.0 + kernel.f2)
                            - kernel.p * kernel.f1 * (1.0 - kernel.f1))
    raise InvalidConfigError(
        f"variance_rate is unsupported for {type(kernel).__name__}")


def fit_log_variance_slope(traj: Trajectory) -> float:
    """Least-squares slope of log(variance) against time."""
    t = np.array(traj.times)
    v = np.array([s.variance for s in traj.stats])
    if (v <= 0.0).any():
        raise InvalidInputError("variance must stay positive for a log fit")
    return float(np.polyfit(t, np.log(v), 1)[0])


# -- renormalized flow ------------------------------------------------------------------


def renormalized_flow(traj: Trajectory, weight_fn: Callable[[float], float]) -> Trajectory:
    """Rescale each snapshot by 1 / (1 + integral_0^t F(u(s)) ds) where
    F(u) = integral of weight_fn against u; the time integral uses the
    trapezoid rule over the recorded snapshots.  weight_fn must be bounded
    and nonnegative."""
    if traj.kind != "atomic":
        raise InvalidInputError("renormalized_flow expects an atomic trajectory")
    from .measures import dual_pairing, scale
    F = []
    for state in traj.states:
        vals = np.asarray([weight_fn(float(p)) for p in state.positions])
        if (vals < 0.0).any():
            raise InvalidInputError("weight function must be nonnegative")
        F.append(float(np.dot(vals, state.weights)))
    t = np.array(traj.times)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (np.array(F[1:]) + np.array(F[:-1]))
                                                * np.diff(t))])
    new_states = [scale(s, 1.0 / (1.0 + I)) for s, I in zip(traj.states, integral)]
    new_stats = [snapshot_stats(s.positions, s.weights) for s in new_states]
    return Trajectory(times=list(traj.times), states=new_states, stats=new_stats,
                      kind="atomic", compression_w1=list(traj.compression_w1))
