"""Spreading iteration and Gaussian minorant certificates.

One spreading stage converts a plateau f >= ell on B_R into

    ell_new = c_s xi^q R^(d+gamma) ell^2 min(t_window, R^-gamma xi^2s)

on the larger ball B_(sqrt2 (1-xi) R), with q = d + 2(gamma+2s+1), valid
for xi in (0, 1 - 2^-1/2) under the smallness condition
xi^q R^(d+gamma) ell < 1/2.  Iterating with the schedule xi_n = 2^-(n+2)
(the shift keeps xi_0 = 1/4 admissible) and time windows 2^-(n-1)... the
dyadic splitting of [0, T0] drives ell_n to doubly exponential decay,
which a lower-envelope fit converts into a minorant a exp(-b |v|^2).

The iteration is carried in log(ell): the plateau underflows float64
after a dozen stages.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalFailureError
from .grid import DistributionField, quintic_step
from .kernel import KernelParams
from .solver import measure_plateau

XI_MAX = 1.0 - 2.0 ** (-0.5)
_FIT_NUDGE = 1e-12


def xi_schedule(n: int) -> float:
    """xi_n = 2^-(n+2); xi_0 = 1/4 sits inside the admissible window."""
    return 2.0 ** (-(n + 2))


def spreading_exponent(params: KernelParams) -> float:
    """q = d + 2(gamma + 2s + 1)."""
    return params.d + 2.0 * (params.gamma + 2.0 * params.s + 1.0)


@dataclass(frozen=True)
class BumpSpec:
    """Scaled bump phi_{R,xi}: 1 on B_(sqrt2(1-xi)R), 0 outside B_(sqrt2(1-xi/2)R)."""

    R: float
    xi: float

    def __post_init__(self):
        if self.R < 1.0:
            raise InputError(f"bump radius must satisfy R >= 1, got {self.R}")
        if not 0.0 < self.xi < XI_MAX:
            raise InputError(f"xi must lie in (0, 1 - 2^-1/2), got {self.xi}")

    @property
    def inner(self) -> float:
        return math.sqrt(2.0) * (1.0 - self.xi) * self.R

    @property
    def outer(self) -> float:
        return math.sqrt(2.0) * (1.0 - 0.5 * self.xi) * self.R


def bump(v, spec: BumpSpec):
    """Radial quintic-smoothstep profile of phi_{R,xi} at velocity v.

    Accepts a single d-vector or an array of them (last axis = components).
    """
    v = np.asarray(v, dtype=float)
    rho = np.linalg.norm(v, axis=-1)
    out = 1.0 - quintic_step((rho - spec.inner) / (spec.outer - spec.inner))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BarrierParams:
    """Parameters of the comparison function ell~(t).

    ``kernel`` supplies the exponents (d, gamma, s); the invariant
    q = d + 2(gamma+2s+1) ties q to the active kernel.
    """

    alpha: float
    C: float
    xi: float
    R: float
    ell: float
    q: float
    kernel: KernelParams

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0,1)")
        if self.C <= 0 or self.xi <= 0 or self.R <= 0 or self.ell <= 0:
            raise InputError("C, xi, R, ell must be positive")
        expected = spreading_exponent(self.kernel)
        if abs(self.q - expected) > 1e-12:
            raise InputError(f"q = {self.q} does not match d + 2(gamma+2s+1) = {expected}")

    @property
    def source(self) -> float:
        """A = alpha xi^q R^(d+gamma) ell^2."""
        k = self.kernel
        return self.alpha * self.xi**self.q * self.R ** (k.d + k.gamma) * self.ell**2

    @property
    def rate(self) -> float:
        """B = C R^gamma xi^(-2s)."""
        k = self.kernel
        return self.C * self.R**k.gamma * self.xi ** (-2.0 * k.s)


def barrier(t, p: BarrierParams):
    """ell~(t) = A (1 - exp(-B t)) / B, the solution of ell~' = A - B ell~."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InputError("barrier times must be nonnegative")
    val = p.source * (-np.expm1(-p.rate * t_arr)) / p.rate
    return float(val) if np.isscalar(t) else val


def barrier_ode_residual(t: float, p: BarrierParams) -> float:
    """Relative residual of ell~' = A - B ell~ by central differences."""
    scale = max(t, 1.0 / p.rate)
    dt = (np.finfo(float).eps) ** (1.0 / 3.0) * scale
    t_lo = max(t - dt, 0.0)
    deriv = (barrier(t + dt, p) - barrier(t_lo, p)) / (t + dt - t_lo)
    rhs = p.source - p.rate * barrier(t, p)
    return abs(deriv - rhs) / max(p.source, 1e-300)


def smallness_margin_log(log_ell: float, R: float, xi: float,
                         params: KernelParams) -> float:
    """log of xi^q R^(d+gamma) ell; the spreading step needs this < log(1/2)."""
    q = spreading_exponent(params)
    return q * math.log(xi) + (params.d + params.gamma) * math.log(R) + log_ell


def spread_step(state: tuple, xi: float, t_window: float,
                params: KernelParams, c_s: float) -> tuple:
    """One spreading stage; returns (ell_new, R_new).

    state is the current plateau (ell, R) on B_R.
    """
    ell, R = state
    if not 0.0 < xi < XI_MAX:
        raise InputError(f"xi must lie in (0, 1 - 2^-1/2), got {xi}")
    if ell <= 0 or R < 1.0 or t_window <= 0 or c_s <= 0:
        raise InputError("spread_step needs ell > 0, R >= 1, t_window > 0, c_s > 0")
    if smallness_margin_log(math.log(ell), R, xi, params) >= math.log(0.5):
        raise InputError(
            f"smallness condition xi^q R^(d+gamma) ell < 1/2 violated "
            f"(xi={xi}, R={R}, ell={ell})"
        )
    q = spreading_exponent(params)
    ell_new = (
        c_s * xi**q * R ** (params.d + params.gamma) * ell**2
        * min(t_window, R ** (-params.gamma) * xi ** (2.0 * params.s))
    )
    return ell_new, math.sqrt(2.0) * (1.0 - xi) * R


@dataclass(frozen=True)
class SpreadingState:
    """One stage of the iteration: f >= ell_n on B_(R_n) for t in [T_(n+1), T0].

    ``log_ell`` is authoritative; ``ell`` underflows to 0 beyond roughly
    a dozen stages of the doubly exponential decay.
    """

    n: int
    R: float
    xi: float
    T: float
    ell: float
    log_ell: float

    def __post_init__(self):
        if not np.isfinite(self.log_ell):
            raise InputError("spreading state requires a finite log plateau")
        if self.R <= 0:
            raise InputError("spreading state requires R > 0")


def iterate(T0: float, ell0: float, params: KernelParams, c_s: float = 1.0,
            n_max: int = 25) -> list[SpreadingState]:
    """Run the spreading recursion for n_max stages (log domain).

    Stage n holds on B_(R_n) over [T_(n+1), T0] with T_n = (1 - 2^-n) T0,
    time windows T_(n+1) - T_n = 2^-(n+1) T0, and R_(n+1) = sqrt2 (1-xi_n) R_n.
    """
    if not 0.0 < T0 < 1.0:
        raise InputError(f"T0 must lie in (0,1), got {T0}")
    if not 0.0 < ell0 < 1.0:
        raise InputError(f"ell0 must lie in (0,1), got {ell0}")
    if c_s <= 0:
        raise InputError("c_s must be positive")
    if n_max < 0:
        raise InputError("n_max must be nonnegative")

    q = spreading_exponent(params)
    dg = params.d + params.gamma
    states = [SpreadingState(n=0, R=1.0, xi=xi_schedule(0), T=0.0,
                             ell=ell0, log_ell=math.log(ell0))]
    log_ell, R = math.log(ell0), 1.0
    for n in range(n_max):
        xi = xi_schedule(n)
        margin = smallness_margin_log(log_ell, R, xi, params)
        if margin >= math.log(0.5):
            raise NumericalFailureError(
                f"smallness condition failed at stage {n}: "
                f"log(xi^q R^(d+gamma) ell) = {margin:.3f} >= log(1/2)"
            )
        window = 2.0 ** (-(n + 1)) * T0
        saturation = R ** (-params.gamma) * xi ** (2.0 * params.s)
        log_ell = (
            math.log(c_s) + q * math.log(xi) + dg * math.log(R)
            + 2.0 * log_ell + math.log(min(window, saturation))
        )
        R = math.sqrt(2.0) * (1.0 - xi) * R
        T = (1.0 - 2.0 ** (-(n + 1))) * T0
        states.append(SpreadingState(
            n=n + 1, R=R, xi=xi_schedule(n + 1), T=T,
            ell=math.exp(log_ell) if log_ell > -745.0 else 0.0,
            log_ell=log_ell,
        ))
    return states


@dataclass(frozen=True)
class GaussianBound:
    """Minorant a * exp(-b |v|^2); b = 0 encodes a flat plateau bound."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise InputError(f"Gaussian bound needs a > 0, got {self.a}")
        if not (np.isfinite(self.b) and self.b >= 0):
            raise InputError(f"Gaussian bound needs b >= 0, got {self.b}")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        r2 = np.sum(v * v, axis=-1) if v.ndim > 1 else float(v @ v)
        return self.a * np.exp(-self.b * r2)


def fit_gaussian(states: list[SpreadingState]) -> GaussianBound:
    """Lower-envelope fit: a = ell_0, b = max_n (ln ell_0 - ln ell_n)/R_(n-1)^2.

    Soundness a exp(-b R_(n-1)^2) <= ell_n is guaranteed by construction
    (a relative 1e-12 nudge on b absorbs the exp/log round-off).
    """
    if not states:
        raise InputError("fit_gaussian needs at least one spreading state")
    log_a = states[0].log_ell
    b = 0.0
    for prev, state in zip(states, states[1:]):
        b = max(b, (log_a - state.log_ell) / prev.R**2)
    if b > 0:
        b *= 1.0 + _FIT_NUDGE
    return GaussianBound(a=math.exp(log_a), b=b)


@dataclass(frozen=True)
class CertificateReport:
    a: float
    b: float
    worst_margin: float
    worst_node: tuple
    passed: bool
    r_max: float | None = None

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "worst_margin": self.worst_margin,
            "worst_node": list(self.worst_node),
            "pass": self.passed,
            "r_max": self.r_max,
        }


def certify(f: DistributionField, bound: GaussianBound,
            r_max: float | None = None) -> CertificateReport:
    """Check f(v) >= a exp(-b |v|^2) nodewise, optionally only on |v| <= r_max."""
    nodes = f.grid.nodes()
    r2 = np.sum(nodes**2, axis=-1)
    margin = f.values - bound.a * np.exp(-bound.b * r2)
    if r_max is not None:
        mask = np.sqrt(r2) <= r_max
        margin = np.where(mask, margin, np.inf)
    flat = int(np.argmin(margin))
    idx = np.unravel_index(flat, f.grid.shape)
    worst = float(margin[idx])
    return CertificateReport(
        a=bound.a, b=bound.b, worst_margin=worst,
        worst_node=tuple(float(x) for x in nodes[idx]),
        passed=bool(worst >= 0.0), r_max=r_max,
    )


def spreading_radii(n_stages: int) -> list[float]:
    """R_0, ..., R_n under the shifted xi schedule."""
    radii = [1.0]
    for n in range(n_stages):
        radii.append(math.sqrt(2.0) * (1.0 - xi_schedule(n)) * radii[-1])
    return radii


def empirical_spreading(snapshots: list[DistributionField], T0: float,
                        times: list[float] | None = None):
    """Measured-plateau variant: ell_n = min of snapshot n over B_(R_n).

    Snapshot n must be the solution at time T_(n+1) = (1 - 2^-(n+1)) T0.
    Returns (states, bound); a vanishing plateau truncates the fit at that
    stage, and an empty fit returns bound = None.
    """
    if not snapshots:
        raise InputError("empirical spreading needs at least one snapshot")
    if not 0.0 < T0 < 1.0:
        raise InputError(f"T0 must lie in (0,1), got {T0}")
    if times is not None:
        if len(times) != len(snapshots):
            raise InputError("times and snapshots must have equal length")
        for k, t in enumerate(times):
            expected = (1.0 - 2.0 ** (-(k + 1))) * T0
            if abs(t - expected) > 1e-9 * max(1.0, T0):
                raise InputError(
                    f"snapshot {k} at t={t} does not match the schedule T_{k+1}={expected}"
                )
    radii = spreading_radii(len(snapshots) - 1)
    v_max = snapshots[0].grid.v_max
    states = []
    for k, snap in enumerate(snapshots):
        if radii[k] > v_max + 1e-12:
            break
        ell = measure_plateau(snap, radii[k])
        if ell <= 0.0:
            break
        states.append(SpreadingState(
            n=k, R=radii[k], xi=xi_schedule(k),
            T=(1.0 - 2.0 ** (-k)) * T0 if k else 0.0,
            ell=ell, log_ell=math.log(ell),
        ))
    bound = fit_gaussian(states) if states else None
    return states, bound


def states_to_csv(states: list[SpreadingState], path) -> None:
    """Columns n, xi_n, R_n, T_n, ell_n plus neg_log_ell (finite past underflow)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "xi_n", "R_n", "T_n", "ell_n", "neg_log_ell"])
        for st in states:
            writer.writerow([
                st.n,
                format(st.xi, ".17g"),
                format(st.R, ".17g"),
                format(st.T, ".17g"),
                format(st.ell, ".17g"),
                format(-st.log_ell, ".17g"),
            ])


def certificate_to_json(report: CertificateReport | None, path,
                        note: str | None = None) -> None:
    payload = report.to_dict() if report else {"pass": False}
    if note:
        payload["note"] = note
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
