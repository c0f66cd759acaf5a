"""Spatially homogeneous relaxation: d/dt f = Q(f,f).

Explicit midpoint stepping with rejection on negativity: a step whose
half-stage or update dips below -1e-12 * sup f at any node is rejected and
retried with dt/2 (up to ten times); surviving round-off negatives are
clamped to zero and the clamped mass is accounted in the trace so the
conservation checks stay honest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, StiffnessError
from .grid import DistributionField, VelocityGrid
from .kernel import DEFAULT_HYPERPLANE_M, KernelParams
from .operator import q_full
from .quadrature import PVQuadratureSpec

_NEGATIVITY_FACTOR = 1e-12
_MAX_HALVINGS = 10
_ENTROPY_STEP_TOL = 1e-3
_DRIFT_TOL = 0.01


@dataclass(frozen=True)
class HydroBounds:
    """Hydrodynamic control constants (m0, M0, E0, H0)."""

    m0: float
    M0: float
    E0: float
    H0: float

    def __post_init__(self):
        if not 0.0 < self.m0 <= self.M0:
            raise InputError("hydro bounds need 0 < m0 <= M0")
        if self.E0 <= 0:
            raise InputError("hydro bounds need E0 > 0")


def hydro_diagnostics(f: DistributionField) -> tuple[float, float, float]:
    """(mass, energy, entropy) grid quadratures, with 0 log 0 = 0."""
    vals = f.values
    cell = f.grid.cell_volume
    mass = float(vals.sum() * cell)
    energy = float((vals * f.grid.node_norms() ** 2).sum() * cell)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(vals > 0, np.log(np.where(vals > 0, vals, 1.0)), 0.0)
    entropy = float((vals * logs).sum() * cell)
    return mass, energy, entropy


@dataclass(frozen=True)
class HydroReport:
    mass: float
    energy: float
    entropy: float
    mass_lower_ok: bool
    mass_upper_ok: bool
    energy_ok: bool
    entropy_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.mass_lower_ok and self.mass_upper_ok and self.energy_ok and self.entropy_ok


def check_hydro_bounds(f: DistributionField, bounds: HydroBounds) -> HydroReport:
    mass, energy, entropy = hydro_diagnostics(f)
    return HydroReport(
        mass=mass, energy=energy, entropy=entropy,
        mass_lower_ok=bounds.m0 <= mass,
        mass_upper_ok=mass <= bounds.M0,
        energy_ok=energy <= bounds.E0,
        entropy_ok=entropy <= bounds.H0,
    )


def measure_plateau(f: DistributionField, R: float) -> float:
    """Minimum of f over the nodes with |v| <= R."""
    if R > f.grid.v_max + 1e-12:
        raise InputError(f"plateau radius {R} exceeds the grid truncation {f.grid.v_max}")
    mask = f.grid.node_norms() <= R
    if not np.any(mask):
        raise InputError(f"no grid nodes inside |v| <= {R}")
    return float(f.values[mask].min())


def _attempt_step(f: DistributionField, dt: float, q_eval) -> tuple[np.ndarray, bool]:
    """One midpoint step; returns (new values, accepted flag)."""
    threshold = -_NEGATIVITY_FACTOR * max(f.max(), 1e-300)
    k1 = q_eval(f)
    half = f.values + 0.5 * dt * k1
    if half.min() < threshold:
        return half, False
    half_field = DistributionField(f.grid, np.maximum(half, 0.0))
    k2 = q_eval(half_field)
    new = f.values + dt * k2
    if new.min() < threshold:
        return new, False
    return new, True


def _step_adaptive(f: DistributionField, dt: float, q_eval):
    """Midpoint step with rejection/halving; returns (field, dt_used, clamped)."""
    if dt <= 0:
        raise InputError(f"dt must be positive, got {dt}")
    current = dt
    for _ in range(_MAX_HALVINGS + 1):
        new, accepted = _attempt_step(f, current, q_eval)
        if accepted:
            clamped = float(-new[new < 0].sum() * f.grid.cell_volume)
            return DistributionField(f.grid, np.maximum(new, 0.0)), current, clamped
        current *= 0.5
    worst = int(np.argmin(new))
    raise StiffnessError(
        f"step rejected after {_MAX_HALVINGS} halvings (dt down to {current})",
        diagnostics={
            "dt_final": current,
            "min_value": float(new.min()),
            "worst_node_flat_index": worst,
            "sup_f": f.max(),
        },
    )


def step(f: DistributionField, dt: float, params: KernelParams,
         spec: PVQuadratureSpec | None = None,
         m_resolution: int = DEFAULT_HYPERPLANE_M,
         q_eval=None) -> DistributionField:
    """Second-order (midpoint) update by dt, with negativity rejection."""
    if q_eval is None:
        q_eval = lambda g: q_full(g, params, spec=spec, m_resolution=m_resolution)
    new, _, _ = _step_adaptive(f, dt, q_eval)
    return new


@dataclass
class SolveTrace:
    """Per-step diagnostics of a relaxation run."""

    plateau_radii: tuple
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    sup_f: list = field(default_factory=list)
    plateaus: dict = field(default_factory=dict)
    dt: list = field(default_factory=list)
    clamped_mass: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def record(self, t: float, f: DistributionField, dt_used: float, clamped: float):
        mass, energy, entropy = hydro_diagnostics(f)
        self.times.append(t)
        self.mass.append(mass)
        self.energy.append(energy)
        self.entropy.append(entropy)
        self.sup_f.append(f.max())
        for r in self.plateau_radii:
            self.plateaus.setdefault(r, []).append(measure_plateau(f, r))
        self.dt.append(dt_used)
        self.clamped_mass.append(clamped)

    def finalize(self):
        mass0, energy0 = self.mass[0], self.energy[0]
        mass_drift = abs(self.mass[-1] - mass0) / mass0 if mass0 else 0.0
        energy_drift = abs(self.energy[-1] - energy0) / energy0 if energy0 else 0.0
        ent = np.asarray(self.entropy)
        entropy_ok = bool(np.all(np.diff(ent) <= _ENTROPY_STEP_TOL))
        self.flags = {
            "mass_drift": mass_drift,
            "energy_drift": energy_drift,
            "mass_ok": mass_drift <= _DRIFT_TOL,
            "energy_ok": energy_drift <= _DRIFT_TOL,
            "entropy_ok": entropy_ok,
        }

    @property
    def all_ok(self) -> bool:
        return bool(self.flags) and self.flags["mass_ok"] and self.flags["energy_ok"] \
            and self.flags["entropy_ok"]

    def to_csv(self, path):
        header = ["t", "mass", "energy", "entropy", "sup_f"]
        header += [f"plateau_R{r:g}" for r in self.plateau_radii]
        header += ["dt"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self.times)):
                row = [self.times[i], self.mass[i], self.energy[i], self.entropy[i],
                       self.sup_f[i]]
                row += [self.plateaus[r][i] for r in self.plateau_radii]
                row += [self.dt[i]]
                writer.writerow([format(x, ".17g") for x in row])


def solve(f0: DistributionField, t_end: float, params: KernelParams,
          dt_init: float = 1e-3,
          spec: PVQuadratureSpec | None = None,
          m_resolution: int = DEFAULT_HYPERPLANE_M,
          plateau_radii: tuple = (1.0,),
          snapshot_times: tuple = (),
          q_eval=None):
    """Integrate to t_end recording diagnostics every accepted step.

    Returns (final field, trace[, snapshots]) where snapshots (returned
    only when snapshot_times is nonempty) is the list of fields captured
    at those exact times (dt is clipped to land on each).
    """
    if t_end < 0:
        raise InputError(f"t_end must be nonnegative, got {t_end}")
    if dt_init <= 0:
        raise InputError(f"dt_init must be positive, got {dt_init}")
    if q_eval is None:
        q_eval = lambda g: q_full(g, params, spec=spec, m_resolution=m_resolution)
    snap_schedule = sorted(float(t) for t in snapshot_times)
    if any(t < 0 or t > t_end + 1e-12 for t in snap_schedule):
        raise InputError("snapshot times must lie in [0, t_end]")

    trace = SolveTrace(plateau_radii=tuple(plateau_radii))
    trace.record(0.0, f0, 0.0, 0.0)
    snapshots = []
    f = f0
    t = 0.0
    dt = dt_init
    eps = 1e-12 * max(t_end, 1.0)
    while snap_schedule and snap_schedule[0] <= eps:
        snapshots.append((snap_schedule.pop(0), f))

    while t < t_end - eps:
        target = snap_schedule[0] if snap_schedule else t_end
        dt_step = min(dt, target - t, t_end - t)
        f, dt_used, clamped = _step_adaptive(f, dt_step, q_eval)
        if dt_used < dt_step:
            dt = dt_used  # carry the stable step forward
        t += dt_used
        trace.record(t, f, dt_used, clamped)
        while snap_schedule and t >= snap_schedule[0] - eps:
            snapshots.append((snap_schedule.pop(0), f))

    trace.finalize()
    if snapshot_times:
        return f, trace, snapshots
    return f, trace
