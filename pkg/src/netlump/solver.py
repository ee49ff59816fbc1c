"""ODE systems for each method, initial conditions, integration and error metrics."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .degree import DegreeDistribution
from .errors import NumericalError, ValidationError
from .lumping import BinStats, Partition, bin_stats, lumped_classes, project
from .meanfield import (
    AmeLayout,
    DegreeClasses,
    _pa_kernel,
    ame_layout,
    ame_rhs,
    dbmf_rhs,
    degree_classes,
    mf_rhs,
    multinomial_pmf,
    neighbor_prob,
    rule_index,
)
from .model import ContactModel

__all__ = [
    "METHODS",
    "InitSpec",
    "parse_init_spec",
    "OdeSystem",
    "make_system",
    "build_initial",
    "Trajectory",
    "integrate",
    "solve",
    "total_error",
    "write_trajectory_csv",
    "trajectory_csv",
]

log = logging.getLogger(__name__)

METHODS = ("mf", "dbmf", "pa", "ame")
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-9
DEFAULT_SAMPLES = 201


# --------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class InitSpec:
    mode: str = "state_fractions"
    fractions: tuple[float, ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("state_fractions", "random"):
            raise ValidationError(f"unknown init mode {self.mode!r}")
        if self.mode == "state_fractions":
            if self.fractions is None:
                raise ValidationError("state_fractions init needs fractions")
            f = np.asarray(self.fractions, dtype=float)
            if np.any(f < 0) or not np.all(np.isfinite(f)):
                raise ValidationError("initial fractions must be nonnegative")
            if abs(f.sum() - 1.0) > 1e-9:
                raise ValidationError(f"initial fractions sum to {f.sum()!r}, not 1")
        elif self.seed is None:
            raise ValidationError("random init needs an explicit seed")


def parse_init_spec(text: str, states) -> InitSpec:
    """``fractions:S=0.99,I=0.01,R=0`` or ``random:seed=N``; unlisted states start at 0."""
    kind, _, body = text.partition(":")
    items = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValidationError(f"expected key=value in init spec, got {item!r}")
        items[key.strip()] = val.strip()
    try:
        if kind == "fractions":
            unknown = set(items) - set(states)
            if unknown:
                raise ValidationError(f"unknown states in init spec: {sorted(unknown)}")
            return InitSpec("state_fractions", tuple(float(items.get(s, 0.0)) for s in states))
        if kind == "random":
            return InitSpec("random", seed=int(items["seed"]))
    except KeyError:
        raise ValidationError("random init spec needs seed=N") from None
    except ValueError as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"bad init spec {text!r}: {e}") from None
    raise ValidationError(f"unknown init spec kind {kind!r}")


def _full_degree_init(n_states: int, d: DegreeDistribution, spec: InitSpec) -> np.ndarray:
    if spec.mode == "state_fractions":
        f = np.asarray(spec.fractions, dtype=float)
        if len(f) != n_states:
            raise ValidationError(f"{len(f)} initial fractions for {n_states} states")
        return np.repeat(f[:, None], d.size, axis=1)
    rng = np.random.default_rng(spec.seed)
    return rng.dirichlet(np.ones(n_states), size=d.size).T


# --------------------------------------------------------------------------
# systems


class OdeSystem:
    """A flattened ODE system ``dy/dt = rhs(t, y)`` for one method and partition."""

    method: str
    lumped: bool = False

    def __init__(self, model: ContactModel, d: DegreeDistribution):
        self.model = model
        self.dist = d
        self.index = rule_index(model)
        self.n_states = model.n_states
        self.partition: Partition | None = None
        self.stats: BinStats | None = None

    @property
    def states(self):
        return self.model.states

    @property
    def n_unknowns(self) -> int:
        raise NotImplementedError

    def rhs(self, t, y):
        raise NotImplementedError

    def marginals(self, y: np.ndarray) -> np.ndarray:
        """Per-state totals for a flat state (n,) or a stack of states (T, n)."""
        raise NotImplementedError

    def class_sums(self, y: np.ndarray) -> np.ndarray:
        """sum_s x[s, c] for every class c (should be 1)."""
        raise NotImplementedError

    def prob_sums(self, y: np.ndarray) -> np.ndarray | None:
        return None


class MfSystem(OdeSystem):
    method = "mf"

    def __init__(self, model, d):
        super().__init__(model, d)
        self.mean_k = d.mean

    @property
    def n_unknowns(self):
        return self.n_states

    def rhs(self, t, y):
        return mf_rhs(self.index, self.mean_k, y)

    def marginals(self, y):
        return np.asarray(y)

    def class_sums(self, y):
        return np.asarray(y).sum(axis=-1, keepdims=True)

    def initial(self, spec):
        x = _full_degree_init(self.n_states, self.dist, spec)
        return x @ self.dist.probs


class _ClassSystem(OdeSystem):
    """Shared plumbing for DBMF and PA on degree classes (single degrees or bins)."""

    def __init__(self, model, d, partition=None):
        super().__init__(model, d)
        if partition is not None:
            self.partition = partition
            self.stats = bin_stats(d, partition)
            self.classes: DegreeClasses = lumped_classes(self.stats)
            self.lumped = True
        else:
            self.classes = degree_classes(d)
        self.n_classes = len(self.classes)
        self._nx = self.n_states * self.n_classes
        self.params = _kernels.pack_params(self.index, self.classes)

    def compiled_rhs(self, t, y):
        return _kernels.rhs(self.kernel_kind, y, self.n_states, self.n_classes, self.params)

    def _x(self, y):
        y = np.asarray(y)
        return y[..., : self._nx].reshape(y.shape[:-1] + (self.n_states, self.n_classes))

    def marginals(self, y):
        return self._x(y) @ self.classes.weight

    def class_sums(self, y):
        return self._x(y).sum(axis=-2)

    def _initial_xp(self, spec):
        x = _full_degree_init(self.n_states, self.dist, spec)
        pn = neighbor_prob(self.dist, x)
        p = np.broadcast_to(pn, (self.n_states, self.dist.size, self.n_states)).copy()
        if self.lumped:
            x = project(x, self.dist, self.partition, self.stats)
            p = project(p, self.dist, self.partition, self.stats)
        return x, p


class DbmfSystem(_ClassSystem):
    method = "dbmf"
    kernel_kind = _kernels.KIND_DBMF

    @property
    def n_unknowns(self):
        return self._nx

    def rhs(self, t, y):
        x = y.reshape(self.n_states, self.n_classes)
        return dbmf_rhs(self.index, self.classes, x).ravel()

    def initial(self, spec):
        return self._initial_xp(spec)[0].ravel()


class PaSystem(_ClassSystem):
    method = "pa"
    kernel_kind = _kernels.KIND_PA

    @property
    def n_unknowns(self):
        return self._nx * (self.n_states + 1)

    def split(self, y):
        y = np.asarray(y)
        lead = y.shape[:-1]
        x = y[..., : self._nx].reshape(lead + (self.n_states, self.n_classes))
        p = y[..., self._nx :].reshape(lead + (self.n_states, self.n_classes, self.n_states))
        return x, p

    def rhs(self, t, y):
        x, p = self.split(y)
        dx, dp = _pa_kernel(self.index, self.classes, x, p)
        return np.concatenate((dx.ravel(), dp.ravel()))

    def prob_sums(self, y):
        return self.split(y)[1].sum(axis=-1)

    def initial(self, spec):
        x, p = self._initial_xp(spec)
        return np.concatenate((x.ravel(), p.ravel()))


class AmeSystem(OdeSystem):
    method = "ame"

    def __init__(self, model, d, cap=None):
        super().__init__(model, d)
        kw = {} if cap is None else {"cap": cap}
        self.layout: AmeLayout = ame_layout(d, self.n_states, **kw)

    @property
    def n_unknowns(self):
        return self.layout.n_unknowns

    def _x(self, y):
        y = np.asarray(y)
        return y.reshape(y.shape[:-1] + (self.n_states, self.layout.n_rows))

    def rhs(self, t, y):
        return ame_rhs(self.index, self.layout, self._x(y)).ravel()

    def marginals(self, y):
        return self._x(y) @ self.layout.weight

    def degree_sums(self, y):
        x = self._x(y).sum(axis=-2)
        return np.add.reduceat(x, self.layout.offsets, axis=-1)

    class_sums = degree_sums

    def initial(self, spec):
        x = _full_degree_init(self.n_states, self.dist, spec)
        pn = neighbor_prob(self.dist, x)
        out = np.empty((self.n_states, self.layout.n_rows))
        bounds = list(self.layout.offsets) + [self.layout.n_rows]
        for ki in range(self.dist.size):
            lo, hi = bounds[ki], bounds[ki + 1]
            f = multinomial_pmf(self.layout.m[lo:hi], pn)
            out[:, lo:hi] = x[:, ki : ki + 1] * f
        return out.ravel()


def make_system(model: ContactModel, d: DegreeDistribution, method: str, partition: Partition | None = None) -> OdeSystem:
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if partition is not None and method not in ("dbmf", "pa"):
        raise ValidationError(f"method {method!r} has no lumped form")
    if method == "mf":
        return MfSystem(model, d)
    if method == "dbmf":
        return DbmfSystem(model, d, partition)
    if method == "pa":
        return PaSystem(model, d, partition)
    return AmeSystem(model, d)


def build_initial(model, d, method, spec: InitSpec, partition: Partition | None = None) -> np.ndarray:
    """Flat initial state in the layout of ``make_system(model, d, method, partition)``."""
    return make_system(model, d, method, partition).initial(spec)


# --------------------------------------------------------------------------
# integration


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    marginals: np.ndarray  # (T, S)
    states: tuple[str, ...]
    method: str = ""
    solve_time: float = 0.0
    n_rhs: int = 0
    y: np.ndarray | None = field(default=None, repr=False)
    min_value: float = 0.0


def integrate(
    rhs,
    y0,
    t_max: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    samples: int = DEFAULT_SAMPLES,
    marginals=None,
    states=(),
    method: str = "",
    keep_states: bool = False,
) -> Trajectory:
    """Dormand-Prince 5(4) with error control, sampled on a uniform grid via dense output.

    ``marginals`` maps a (T, n) stack of states to (T, S) totals; by default
    the raw states are reported.
    """
    _check_args(t_max, samples)
    y0 = np.asarray(y0, dtype=float)
    calls = 0

    def f(t, y):
        nonlocal calls
        calls += 1
        dy = rhs(t, y)
        if not np.all(np.isfinite(dy)):
            raise NumericalError(f"non-finite right-hand side at t={t:.6g}")
        return dy

    f0 = rhs(0.0, y0)
    if not np.all(np.isfinite(f0)):
        raise NumericalError("non-finite right-hand side at the initial state")
    grid = np.linspace(0.0, t_max, samples)
    start = time.perf_counter()
    sol = solve_ivp(f, (0.0, t_max), y0, method="RK45", t_eval=grid, rtol=rtol, atol=atol)
    elapsed = time.perf_counter() - start
    if sol.status != 0:
        raise NumericalError(f"integration failed: {sol.message}")
    ys = sol.y.T
    lo = float(ys.min()) if ys.size else 0.0
    if lo < -10 * atol:
        log.warning("%s: solution undershoots to %.3g (below -10*atol)", method or "ode", lo)
    marg = marginals(ys) if marginals is not None else ys
    return Trajectory(
        times=grid,
        marginals=np.asarray(marg),
        states=tuple(states),
        method=method,
        solve_time=elapsed,
        n_rhs=calls,
        y=ys if keep_states else None,
        min_value=lo,
    )


def _check_args(t_max, samples):
    if not (t_max > 0 and np.isfinite(t_max)):
        raise ValidationError("t_max must be positive and finite")
    if samples < 2:
        raise ValidationError("need at least two samples")


def _integrate_compiled(system, y0, t_max, rtol, atol, samples, tag, keep_states):
    _check_args(t_max, samples)
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (system.n_unknowns,):
        raise ValidationError(f"initial state has {y0.size} entries, system needs {system.n_unknowns}")
    if not np.all(np.isfinite(system.compiled_rhs(0.0, y0))):
        raise NumericalError("non-finite right-hand side at the initial state")
    grid = np.linspace(0.0, t_max, samples)
    # compile (or load from cache) outside the timed region
    _kernels.run_dopri5(system.kernel_kind, system.n_states, system.n_classes, system.params,
                        y0, np.array([0.0, 1e-12 * t_max]), rtol, atol)
    start = time.perf_counter()
    ys, status, n_rhs, lo, _ = _kernels.run_dopri5(
        system.kernel_kind, system.n_states, system.n_classes, system.params, y0, grid, rtol, atol
    )
    elapsed = time.perf_counter() - start
    if status == _kernels.STATUS_STEP_COLLAPSE:
        raise NumericalError(f"{tag}: step size collapsed")
    if status == _kernels.STATUS_NONFINITE:
        raise NumericalError(f"{tag}: non-finite right-hand side")
    if status == _kernels.STATUS_STEP_BUDGET:
        raise NumericalError(f"{tag}: more than {_kernels.MAX_STEPS} steps; the system is too stiff for an explicit method")
    if lo < -10 * atol:
        log.warning("%s: solution undershoots to %.3g (below -10*atol)", tag, lo)
    return Trajectory(
        times=grid, marginals=system.marginals(ys), states=tuple(system.states), method=tag,
        solve_time=elapsed, n_rhs=int(n_rhs), y=ys if keep_states else None, min_value=float(lo),
    )


def solve(system: OdeSystem, y0, t_max, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, samples=DEFAULT_SAMPLES,
          keep_states=False, compiled=True):
    """Integrate ``system``; DBMF and PA use the compiled kernels unless ``compiled=False``."""
    tag = system.method + ("-lumped" if system.lumped else "")
    if compiled and hasattr(system, "kernel_kind"):
        return _integrate_compiled(system, y0, t_max, rtol, atol, samples, tag, keep_states)
    return integrate(
        system.rhs, y0, t_max, rtol=rtol, atol=atol, samples=samples,
        marginals=system.marginals, states=system.states, method=tag, keep_states=keep_states,
    )


def total_error(full: Trajectory, lumped: Trajectory) -> tuple[np.ndarray, float]:
    """eps(t) = max_s |x_s(t) - xbar_s(t)| and its maximum over the grid."""
    if full.times.shape != lumped.times.shape or not np.allclose(full.times, lumped.times, rtol=0, atol=1e-12):
        raise ValidationError("trajectories are sampled on different time grids")
    eps = np.abs(full.marginals - lumped.marginals).max(axis=1)
    return eps, float(eps.max())


def trajectory_csv(traj: Trajectory, stderr: np.ndarray | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["t"] + [f"x_{s}" for s in traj.states]
    if stderr is not None:
        head += [f"se_{s}" for s in traj.states]
    w.writerow(head)
    for i, t in enumerate(traj.times):
        row = [repr(float(t))] + [repr(float(v)) for v in traj.marginals[i]]
        if stderr is not None:
            row += [repr(float(v)) for v in stderr[i]]
        w.writerow(row)
    return buf.getvalue()


def write_trajectory_csv(path, traj: Trajectory, stderr=None):
    from .cli import atomic_write

    atomic_write(path, trajectory_csv(traj, stderr))


def stationary_horizon(system: OdeSystem, y0, t_guess: float = 10.0, threshold: float = 1e-4,
                       t_cap: float = 200.0) -> float:
    """Smallest horizon (doubling from ``t_guess``) after which marginals move slower than ``threshold`` per unit time."""
    t = t_guess
    while True:
        tr = solve(system, y0, t, samples=max(201, int(10 * t) + 1))
        rate = np.abs(np.diff(tr.marginals, axis=0)).max(axis=1) / np.diff(tr.times)
        fast = np.flatnonzero(rate >= threshold)
        if len(fast) == 0:
            return 0.0
        settled = tr.times[fast[-1] + 1]
        if settled < 0.75 * t or t >= t_cap:
            return float(min(settled, t_cap))
        t = min(2 * t, t_cap)
