"""Assembly of the collision operator on the velocity lattice.

Q(f,f) is split into the singular Carleman part

    Q_s(f,g)(v) = PV int K_f(v,v') [g(v') - g(v)] dv'

evaluated by the symmetrized second-difference sum with the cached
hyperplane rules, and the non-singular cancellation-lemma part

    Q_ns(f,g)(v) = g(v) * (f * S)(v),   S(u) = C_S |u|^gamma,

evaluated by FFT convolution.  A direct sigma-sphere integrator with an
angular cutoff serves as an independent oracle; run at several cutoffs it
Richardson-extrapolates to the non-cutoff operator.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from ._parallel import parallel_map
from .errors import InputError
from .grid import DistributionField, VelocityGrid, interp_values
from .kernel import (
    DEFAULT_HYPERPLANE_M,
    KernelParams,
    angular_b,
    canonical_direction,
    carleman_plan,
    cancellation_constant,
)
from .quadrature import PVQuadratureSpec, _field_values

DEFAULT_THETA_SCHEDULE = (0.2, 0.1, 0.05)


def _as_field(f) -> DistributionField:
    if not isinstance(f, DistributionField):
        raise InputError("expected a DistributionField")
    return f


def _check_same_grid(f: DistributionField, g, params: KernelParams) -> np.ndarray:
    if params.d != f.grid.d:
        raise InputError("kernel dimension does not match the field grid")
    return _field_values(g, f.grid)


def _cell_mean_prefactors(centers: np.ndarray, vec_norms_h: np.ndarray,
                          grid: VelocityGrid, order: float) -> np.ndarray:
    """Average of |w|^-order over each offset cell, for near offsets.

    Beyond 8 grid cells the center value is used; the cell variation of the
    prefactor is negligible there.
    """
    h = grid.h
    pref = vec_norms_h ** (-order)
    near = vec_norms_h <= 8.0 * h
    if not np.any(near):
        return pref
    sub = (np.arange(16) + 0.5) / 16.0 - 0.5
    mesh = np.meshgrid(*([sub] * grid.d), indexing="ij")
    deltas = np.stack([m.ravel() for m in mesh], axis=1) * h  # (16^d, d)
    for i in np.where(near)[0]:
        pts = centers[i][None, :] + deltas
        pref[i] = float(np.mean(np.linalg.norm(pts, axis=1) ** (-order)))
    return pref


def q_singular(f: DistributionField, g, params: KernelParams,
               spec: PVQuadratureSpec | None = None,
               m_resolution: int = DEFAULT_HYPERPLANE_M) -> np.ndarray:
    """Q_s(f, g) at every node: PV sum of K_f against second differences of g."""
    f = _as_field(f)
    gvals = _check_same_grid(f, g, params)
    spec = spec or PVQuadratureSpec()
    grid = f.grid
    plan = carleman_plan(grid, params, m_resolution)
    h = grid.h
    order = params.singular_order
    cell = grid.cell_volume
    exclusion = spec.inner_exclusion_radius  # in cells

    out = np.zeros(grid.shape)
    fvals = f.values
    J = np.empty(grid.shape)
    G = np.empty(grid.shape)
    tb_const = params.tilde_b_is_constant()

    for vec, m_all in plan.class_index():
        unit = math.sqrt(float(np.dot(vec, vec)))
        ms = m_all[m_all * unit >= exclusion - 1e-12]
        if len(ms) == 0:
            continue
        w_norms = ms * unit * h
        if spec.singular_weight == "cell_mean":
            centers = np.asarray(vec, dtype=float)[None, :] * ms[:, None] * h
            pref = _cell_mean_prefactors(centers, w_norms, grid, order)
        else:
            pref = w_norms ** (-order)
        coeffs = pref * cell

        if tb_const:
            plan.line_integral_field(fvals, vec, out=J)
            G.fill(0.0)
            csum = 0.0
            for m, c in zip(ms, coeffs):
                shift = tuple(int(m) * x for x in vec)
                _shift_add_local(G, gvals, shift, c)
                _shift_add_local(G, gvals, tuple(-x for x in shift), c)
                csum += c
            G -= 2.0 * csum * gvals
            out += J * G
        else:
            for m, c, w_norm in zip(ms, coeffs, w_norms):
                plan.line_integral_field(fvals, vec, w_norm=w_norm, out=J)
                shift = tuple(int(m) * x for x in vec)
                G.fill(0.0)
                _shift_add_local(G, gvals, shift, 1.0)
                _shift_add_local(G, gvals, tuple(-x for x in shift), 1.0)
                G -= 2.0 * gvals
                out += (c * J) * G

    if spec.far_field_loss and tb_const:
        out -= gvals * plan.loss_tail_field(fvals)
    return out


def _shift_add_local(out: np.ndarray, src: np.ndarray, shift, weight: float) -> None:
    sl_out, sl_src = [], []
    for s, n in zip(shift, out.shape):
        if s >= n or s <= -n:
            return
        if s >= 0:
            sl_out.append(slice(0, n - s))
            sl_src.append(slice(s, n))
        else:
            sl_out.append(slice(-s, n))
            sl_src.append(slice(0, n + s))
    out[tuple(sl_out)] += weight * src[tuple(sl_src)]


@lru_cache(maxsize=8)
def _s_kernel_array(grid: VelocityGrid, params: KernelParams) -> np.ndarray:
    """|u|^gamma on the (2n-1)^d offset lattice, with a cell-mean center.

    For gamma < 0 the central singular cell is replaced by the exact cell
    average (subcell midpoint rule), keeping the convolution integrable.
    """
    n, d, h = grid.n, grid.d, grid.h
    rng = np.arange(-(n - 1), n) * h
    mesh = np.meshgrid(*([rng] * d), indexing="ij")
    dist = np.sqrt(sum(m**2 for m in mesh))
    g = params.gamma
    if g == 0.0:
        return np.ones_like(dist)
    with np.errstate(divide="ignore"):
        vals = np.where(dist > 0, dist, 1.0) ** g
    center = (n - 1,) * d
    if g > 0:
        vals[center] = 0.0
    else:
        sub = (np.arange(32) + 0.5) / 32.0 - 0.5
        smesh = np.meshgrid(*([sub] * d), indexing="ij")
        sdist = np.sqrt(sum((m * h) ** 2 for m in smesh))
        vals[center] = float(np.mean(sdist**g))
    return vals


def q_nonsingular(f: DistributionField, g, params: KernelParams) -> np.ndarray:
    """Q_ns(f, g) = g * (f convolved with C_S |u|^gamma); nonnegative."""
    f = _as_field(f)
    gvals = _check_same_grid(f, g, params)
    grid = f.grid
    c_s = cancellation_constant(params).value
    kern = _s_kernel_array(grid, params)
    conv = fftconvolve(f.values, kern, mode="same") * grid.cell_volume
    conv = np.maximum(conv, 0.0)
    return gvals * (c_s * conv)


def q_full(f: DistributionField, params: KernelParams,
           spec: PVQuadratureSpec | None = None,
           m_resolution: int = DEFAULT_HYPERPLANE_M) -> np.ndarray:
    """Q(f,f) = Q_s(f,f) + Q_ns(f,f)."""
    return (
        q_singular(f, f, params, spec=spec, m_resolution=m_resolution)
        + q_nonsingular(f, f, params)
    )


# ----------------------------------------------------------------------------
# Direct sigma-representation oracle
# ----------------------------------------------------------------------------


def _sigma_frames(rel_hat: np.ndarray) -> list[np.ndarray]:
    """Orthonormal frame(s) perpendicular to each unit vector, negation-odd.

    The construction satisfies e1(-k) = -e1(k) (and e2(-k) = e2(k) in 3D),
    which makes the sigma node set exactly closed under the exchange
    (v, v_*, sigma) -> (v_*, v, -sigma).
    """
    d = rel_hat.shape[-1]
    if d == 2:
        perp = np.stack([-rel_hat[..., 1], rel_hat[..., 0]], axis=-1)
        return [perp]
    ref = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(ref, rel_hat)
    bad = np.linalg.norm(e1, axis=-1) < 1e-8
    if np.any(bad):
        alt = np.cross(np.array([1.0, 0.0, 0.0]), rel_hat[bad])
        e1[bad] = alt
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(rel_hat, e1)
    return [e1, e2]


def q_sigma_direct(f: DistributionField, params: KernelParams,
                   theta_min: float | None = None,
                   n_theta: int = 64, n_psi: int = 16,
                   swap_roles: bool = False,
                   interp_order: int = 3,
                   threads: int = 1) -> np.ndarray:
    """Direct (v_*, sigma) quadrature of Q(f,f) with cutoff theta >= theta_min.

    Gauss-Legendre nodes in the deviation angle, uniform nodes on the
    azimuthal factor (3D), multilinear/spline interpolation of f off the
    lattice.  With ``swap_roles`` the same sampled configurations are
    accumulated at the v_* slot, which must reproduce the field exactly
    (microreversibility of the grid sum).
    """
    f = _as_field(f)
    if params.d != f.grid.d:
        raise InputError("kernel dimension does not match the field grid")
    theta_min = params.theta_min if theta_min is None else theta_min
    if theta_min is None or theta_min <= 0:
        raise InputError("the sigma oracle requires a positive theta_min cutoff")
    grid = f.grid
    d = grid.d
    nodes = grid.nodes().reshape(-1, d)
    fvals = f.values
    fflat = fvals.reshape(-1)

    x, wq = np.polynomial.legendre.leggauss(n_theta)
    theta = 0.5 * (x + 1.0) * (np.pi - theta_min) + theta_min
    wq = wq * 0.5 * (np.pi - theta_min)
    b_theta = angular_b(theta, params)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    if d == 2:
        sigma_w = np.concatenate([wq, wq])  # both azimuthal signs
    else:
        psi = 2.0 * np.pi * np.arange(n_psi) / n_psi
        sigma_w = (wq * np.sin(theta))[:, None] * np.full(n_psi, 2.0 * np.pi / n_psi)

    out = np.zeros(len(nodes))
    cell = grid.cell_volume

    def _contribution(i):
        v = nodes[i]
        rel = v[None, :] - nodes  # v - v_*
        rnorm = np.linalg.norm(rel, axis=1)
        mask = rnorm > 0
        rel_hat = np.zeros_like(rel)
        rel_hat[mask] = rel[mask] / rnorm[mask, None]
        frames = _sigma_frames(rel_hat)
        if d == 2:
            perp = frames[0]
            sigma = np.concatenate(
                [
                    cos_t[None, :, None] * rel_hat[:, None, :]
                    + sin_t[None, :, None] * perp[:, None, :],
                    cos_t[None, :, None] * rel_hat[:, None, :]
                    - sin_t[None, :, None] * perp[:, None, :],
                ],
                axis=1,
            )  # (N, 2*n_theta, d)
            b_vals = np.concatenate([b_theta, b_theta])
        else:
            e1, e2 = frames
            az = (
                np.cos(psi)[None, None, :, None] * e1[:, None, None, :]
                + np.sin(psi)[None, None, :, None] * e2[:, None, None, :]
            )
            sigma = (
                cos_t[None, :, None, None] * rel_hat[:, None, None, :]
                + sin_t[None, :, None, None] * az
            ).reshape(len(nodes), n_theta * n_psi, d)
            b_vals = np.repeat(b_theta, n_psi)
        weights = sigma_w.reshape(-1)

        center = 0.5 * (v[None, :] + nodes)  # (N, d)
        half = 0.5 * rnorm
        vp = center[:, None, :] + half[:, None, None] * sigma
        vps = center[:, None, :] - half[:, None, None] * sigma
        shape = vp.shape[:2]
        f_vp = interp_values(grid, fvals, vp.reshape(-1, d), order=interp_order)
        f_vps = interp_values(grid, fvals, vps.reshape(-1, d), order=interp_order)
        gain = (f_vp * f_vps).reshape(shape)
        loss = fflat[i] * fflat
        bracket = gain - loss[:, None]
        with np.errstate(divide="ignore"):
            r_gamma = np.where(mask, rnorm, 1.0) ** params.gamma
        r_gamma = np.where(mask, r_gamma, 0.0)
        contrib = bracket * (r_gamma[:, None] * b_vals[None, :] * weights[None, :])
        contrib[~mask] = 0.0
        if swap_roles:
            return contrib.sum(axis=1) * cell
        return contrib.sum() * cell

    results = parallel_map(_contribution, range(len(nodes)), threads=threads)
    if swap_roles:
        for row in results:
            out += row
    else:
        out[:] = results
    return out.reshape(grid.shape)


def richardson_extrapolate(values: list[np.ndarray], schedule, exponent: float) -> np.ndarray:
    """Eliminate the leading O(theta_min^exponent) truncation error."""
    if len(values) < 2:
        raise InputError("extrapolation needs at least two cutoff values")
    e_prev, e_last = values[-2], values[-1]
    rho = schedule[-2] / schedule[-1]
    factor = rho**exponent - 1.0
    return e_last + (e_last - e_prev) / factor


def q_sigma_oracle(f: DistributionField, params: KernelParams,
                   schedule=DEFAULT_THETA_SCHEDULE,
                   n_theta: int = 64, n_psi: int = 16,
                   interp_order: int = 3,
                   threads: int = 1,
                   return_sequence: bool = False):
    """Cutoff sigma-integrals over the schedule, Richardson-extrapolated.

    The truncation error of the symmetrically sampled sigma sum is
    O(theta_min^(2-2s)), which fixes the extrapolation exponent.
    """
    if any(t <= 0 for t in schedule) or len(schedule) < 2:
        raise InputError("theta_min schedule must be positive with >= 2 entries")
    fields = [
        q_sigma_direct(f, params, theta_min=t, n_theta=n_theta, n_psi=n_psi,
                       interp_order=interp_order, threads=threads)
        for t in schedule
    ]
    ext = richardson_extrapolate(fields, schedule, 2.0 - 2.0 * params.s)
    if return_sequence:
        return ext, fields
    return ext


def weighted_l1_distance(a: np.ndarray, b: np.ndarray, grid: VelocityGrid,
                         relative: bool = True) -> float:
    """Energy-weighted L1 metric sum |a-b| (1+|v|^2) h^d, optionally relative to b."""
    w = 1.0 + grid.node_norms() ** 2
    num = float(np.sum(np.abs(a - b) * w) * grid.cell_volume)
    if not relative:
        return num
    den = float(np.sum(np.abs(b) * w) * grid.cell_volume)
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den
