"""Collision kernel, angular profile, and the Carleman hyperplane kernel.

The kernel has the product form B(r, cos theta) = r^gamma * b(cos theta).
We parametrize the angular profile through its smooth factor tilde_b via

    b(cos theta) = 2^(1-d) (sin theta/2)^(-(d-1)-2s)
                   (cos theta/2)^(gamma+2s+1) tilde_b(cos theta),

which reproduces the grazing singularity b ~ theta^(-(d-1)-2s) and makes
the hyperplane (Carleman) kernel

    K_f(v, v') = |v'-v|^(-(d+2s)) int_{v'_* in v + (v'-v)^perp}
                 f(v'_*) |v-v'_*|^(gamma+2s+1) tilde_b(cos theta) dv'_*

self-consistent with the sigma-sphere form.  The default tilde_b is the
constant 1; all reported constants are relative to that normalization.

Hyperplane quadrature on the lattice: for node pairs, v'-v is a lattice
vector m*(a,b)h with (a,b) primitive, and the perpendicular lattice line
through v carries uniformly spaced nodes (exactly on the hyperplane).
Steps longer than a target resolution (box diameter divided by M) are
subdivided, with multilinear interpolation of f at the sub-lattice nodes.
The rules are cached per direction class; they are f-independent and the
dominant setup cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import (
    InputError,
    NumericalFailureError,
    SingularConfigurationError,
)
from .grid import DistributionField, VelocityGrid, interp_values

DEFAULT_HYPERPLANE_M = 64

_TILDE_B_REGISTRY = {
    "constant": None,  # handled as exact 1 on the fast paths
    "one_plus_half_cos": lambda c: 1.0 + 0.5 * c,
}


@dataclass(frozen=True)
class KernelParams:
    """Kernel exponents and angular profile choice."""

    d: int = 2
    gamma: float = 0.0
    s: float = 0.5
    tilde_b: str = "constant"
    theta_min: float | None = None

    def __post_init__(self):
        if self.d < 2:
            raise InputError(f"dimension must be >= 2, got {self.d}")
        if not 0.0 < self.s < 1.0:
            raise InputError(f"s must lie in (0,1), got {self.s}")
        if not self.gamma > -self.d:
            raise InputError(f"gamma must exceed -d, got gamma={self.gamma}, d={self.d}")
        moment = self.gamma + 2.0 * self.s
        if not 0.0 <= moment <= 2.0:
            raise InputError(
                f"gamma + 2s must lie in [0,2] (hard/moderately-soft), got {moment}"
            )
        if self.tilde_b not in _TILDE_B_REGISTRY:
            raise InputError(f"unknown tilde_b profile {self.tilde_b!r}")
        if self.theta_min is not None and not self.theta_min > 0:
            raise InputError("theta_min must be positive when set")

    @property
    def singular_order(self) -> float:
        """Exponent d + 2s of the |v'-v| prefactor."""
        return self.d + 2.0 * self.s

    @property
    def hyperplane_exponent(self) -> float:
        """Exponent gamma + 2s + 1 of the |v-v'_*| hyperplane weight."""
        return self.gamma + 2.0 * self.s + 1.0

    def tilde_b_is_constant(self) -> bool:
        return self.tilde_b == "constant"

    def tilde_b_value(self, cos_theta):
        fn = _TILDE_B_REGISTRY[self.tilde_b]
        if fn is None:
            return np.ones_like(np.asarray(cos_theta, dtype=float))
        return fn(np.asarray(cos_theta, dtype=float))


@dataclass(frozen=True)
class CancellationConstant:
    """C_S with the quadrature error estimate (relative)."""

    value: float
    quadrature_error_estimate: float

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise NumericalFailureError(f"C_S must be finite and positive, got {self.value}")


def sphere_factor(d: int) -> float:
    """|S^(d-2)|: 2 for d=2 (the 0-sphere has two points), 2*pi for d=3."""
    if d == 2:
        return 2.0
    if d == 3:
        return 2.0 * np.pi
    raise InputError(f"unsupported dimension {d}")


def angular_b(theta, params: KernelParams):
    """Angular profile b(cos theta) on (0, pi]."""
    theta_arr = np.asarray(theta, dtype=float)
    if np.any(theta_arr <= 0.0):
        raise SingularConfigurationError("angular profile is singular at theta = 0")
    if np.any(theta_arr > np.pi + 1e-12):
        raise InputError("theta must lie in (0, pi]")
    half = 0.5 * theta_arr
    val = (
        2.0 ** (1 - params.d)
        * np.sin(half) ** (-(params.d - 1) - 2.0 * params.s)
        * np.cos(half) ** params.hyperplane_exponent
        * params.tilde_b_value(np.cos(theta_arr))
    )
    return float(val) if np.isscalar(theta) else val


def cos_theta_from_legs(u, w_norm):
    """cos theta from hyperplane distance u = |v-v'_*| and w = |v'-v|."""
    u2 = np.asarray(u, dtype=float) ** 2
    w2 = float(w_norm) ** 2
    return (u2 - w2) / (u2 + w2)


def _cancellation_quad(params: KernelParams, upper: float) -> CancellationConstant:
    d, g, s = params.d, params.gamma, params.s

    def integrand(theta):
        return (
            np.sin(theta) ** (d - 2)
            * ((np.cos(0.5 * theta)) ** (-d - g) - 1.0)
            * angular_b(theta, params)
        )

    alpha = 1.0 - 2.0 * s   # endpoint exponent at theta = 0
    split_lo = 0.5

    def left_factor(theta):
        return integrand(theta) * theta ** (-alpha)

    pieces = []
    try:
        pieces.append(integrate.quad(
            left_factor, 0.0, split_lo, weight="alg", wvar=(alpha, 0.0),
            epsabs=1e-13, epsrel=1e-11, limit=200,
        ))
        if upper > np.pi - 1e-12:
            # full range: integrand ~ (pi - t)^(2s-1) at the far endpoint
            beta = 2.0 * s - 1.0
            split_hi = np.pi - 0.5

            def right_factor(theta):
                return integrand(theta) * (np.pi - theta) ** (-beta)

            pieces.append(integrate.quad(
                integrand, split_lo, split_hi, epsabs=1e-13, epsrel=1e-11, limit=200,
            ))
            pieces.append(integrate.quad(
                right_factor, split_hi, np.pi, weight="alg", wvar=(0.0, beta),
                epsabs=1e-13, epsrel=1e-11, limit=200,
            ))
        else:
            pieces.append(integrate.quad(
                integrand, split_lo, upper, epsabs=1e-13, epsrel=1e-11, limit=200,
            ))
    except Exception as exc:  # pragma: no cover - quadpack failure is exotic
        raise NumericalFailureError(f"cancellation constant quadrature failed: {exc}") from exc

    total = sphere_factor(d) * sum(p[0] for p in pieces)
    err = sphere_factor(d) * sum(p[1] for p in pieces)
    if not np.isfinite(total) or total <= 0:
        raise NumericalFailureError(f"cancellation constant came out as {total}")
    rel_err = err / abs(total)
    if rel_err > 1e-8:
        raise NumericalFailureError(
            f"cancellation constant error estimate {rel_err:.2e} exceeds 1e-8 relative"
        )
    return CancellationConstant(value=float(total), quadrature_error_estimate=float(rel_err))


@lru_cache(maxsize=32)
def cancellation_constant(params: KernelParams) -> CancellationConstant:
    """C_S = |S^(d-2)| * int_0^pi (sin t)^(d-2) [(cos t/2)^(-d-gamma) - 1] b dt.

    The deviation angle runs over the full (0, pi): the angular profile is
    positive there, and the full range is what balances the sigma-sphere
    integral defining Q_ns (the familiar pi/2 upper limit presumes the
    support reduction b * 1_{theta <= pi/2}).  The integrand behaves like
    t^(1-2s) near 0 and like (pi-t)^(2s-1) near pi; both algebraic
    endpoints use weighted adaptive rules.
    """
    return _cancellation_quad(params, np.pi)


@lru_cache(maxsize=32)
def cancellation_constant_half(params: KernelParams) -> CancellationConstant:
    """Cancellation constant of the deviation-angle-truncated identity.

    For the sigma integral restricted to theta <= pi/2 the change of
    variables gives (f * S_half) with S_half = C_S_half |u|^gamma; this
    version is the one a truncated velocity grid can check directly,
    since all its evaluation points stay within the collision sphere.
    """
    return _cancellation_quad(params, 0.5 * np.pi)


def convolution_kernel_s(u_norm, params: KernelParams) -> np.ndarray:
    """S(u) = C_S |u|^gamma evaluated on an array of |u| values."""
    c_s = cancellation_constant(params).value
    u = np.asarray(u_norm, dtype=float)
    with np.errstate(divide="ignore"):
        vals = np.where(u > 0, u, 1.0) ** params.gamma
        vals = np.where(u > 0, vals, 1.0 if params.gamma == 0.0 else 0.0)
    return c_s * vals


def lambda_weight(v, f: DistributionField, params: KernelParams) -> float:
    """Lambda(v) = int f(v'_*) |v - v'_*|^(gamma+2s) dv'_* by grid quadrature."""
    if params.d != f.grid.d:
        raise InputError("kernel dimension does not match the field grid")
    v = np.asarray(v, dtype=float)
    if v.shape != (f.grid.d,):
        raise InputError(f"v must be a {f.grid.d}-vector")
    p = params.gamma + 2.0 * params.s
    dist = np.linalg.norm(f.grid.nodes() - v, axis=-1)
    weights = np.ones_like(dist) if p == 0.0 else dist**p
    return float(np.sum(f.values * weights) * f.grid.cell_volume)


# ----------------------------------------------------------------------------
# Direction-class hyperplane rules
# ----------------------------------------------------------------------------


def canonical_direction(vec) -> tuple:
    """Primitive integer vector with the first nonzero component positive."""
    arr = [int(x) for x in vec]
    g = 0
    for x in arr:
        g = math.gcd(g, abs(x))
    if g == 0:
        raise InputError("zero offset has no direction")
    arr = [x // g for x in arr]
    for x in arr:
        if x != 0:
            if x < 0:
                arr = [-y for y in arr]
            break
    return tuple(arr)


def _perp_basis_3d(vec: tuple) -> list[np.ndarray]:
    """Lagrange-reduced integer basis of the lattice plane orthogonal to vec."""
    a1, a2, a3 = vec
    if a1 == 0 and a2 == 0:
        e1, e2 = np.array([1, 0, 0]), np.array([0, 1, 0])
    else:
        g1 = math.gcd(abs(a1), abs(a2))
        # Bezout: x*a1 + y*a2 = g1, computed on magnitudes then sign-fixed
        def _ext_gcd(a, b):
            if b == 0:
                return a, 1, 0
            g, x, y = _ext_gcd(b, a % b)
            return g, y, x - (a // b) * y

        _, x, y = _ext_gcd(abs(a1), abs(a2))
        x *= 1 if a1 >= 0 else -1
        y *= 1 if a2 >= 0 else -1
        e1 = np.array([-a2 // g1, a1 // g1, 0])
        e2 = np.array([-x * a3, -y * a3, g1])
    # Gauss/Lagrange reduction in the plane
    for _ in range(64):
        if e1 @ e1 > e2 @ e2:
            e1, e2 = e2, e1
        mu = round((e1 @ e2) / (e1 @ e1))
        if mu == 0:
            break
        e2 = e2 - mu * e1
    cross = np.cross(e1, e2)
    if int(cross @ cross) != int(np.dot(vec, vec)):
        raise NumericalFailureError(f"perpendicular basis construction failed for {vec}")
    return [e1, e2]


@dataclass
class _SampleGroup:
    corners: list            # [(int offset tuple, weight)], identity when frac == 0
    bases: np.ndarray        # (g, d) integer shifts
    weights: np.ndarray      # (g,) quadrature weights |u|^pow * measure
    u: np.ndarray            # (g,) distances from v


@dataclass
class _DirectionRule:
    vec: tuple               # primitive lattice direction of v' - v
    unit_norm: float         # |vec| in lattice units
    groups: list             # list of _SampleGroup
    positions: np.ndarray    # (n_k, d) sample offsets in physical units
    weights: np.ndarray      # (n_k,) matching quadrature weights
    u: np.ndarray            # (n_k,) distances |v - v'_*|


class CarlemanPlan:
    """Cached hyperplane quadrature rules for one (grid, params, M) triple."""

    def __init__(self, grid: VelocityGrid, params: KernelParams, m_resolution: int):
        if grid.d != params.d:
            raise InputError("grid and kernel dimensions differ")
        if m_resolution < 2:
            raise InputError("hyperplane resolution M must be at least 2")
        self.grid = grid
        self.params = params
        self.m_resolution = m_resolution
        self.target_step = 2.0 * math.sqrt(grid.d) * grid.v_max / m_resolution
        self._rules: dict[tuple, _DirectionRule] = {}
        self._class_index: list | None = None

    # -- rule construction ----------------------------------------------

    def rule(self, vec) -> _DirectionRule:
        key = canonical_direction(vec)
        rule = self._rules.get(key)
        if rule is None:
            rule = self._build_rule(key)
            self._rules[key] = rule
        return rule

    def _build_rule(self, vec: tuple) -> _DirectionRule:
        grid, params = self.grid, self.params
        d, h, n = grid.d, grid.h, grid.n
        power = params.hyperplane_exponent
        if d == 2:
            basis = [np.array([-vec[1], vec[0]])]
        else:
            basis = _perp_basis_3d(vec)
        norms = [math.sqrt(float(e @ e)) for e in basis]
        factors = [max(1, math.ceil(nm * h / self.target_step - 1e-9)) for nm in norms]
        if d == 2:
            measure = norms[0] * h / factors[0]
        else:
            measure = math.sqrt(float(np.dot(vec, vec))) * h * h / (factors[0] * factors[1])

        limit = n - 1
        ks = []
        for e, r in zip(basis, factors):
            kmax = math.ceil(limit * r / max(abs(int(c)) for c in e if c != 0))
            ks.append(np.arange(-kmax, kmax + 1))
        if d == 2:
            t = ks[0][:, None] * (basis[0][None, :] / factors[0])
        else:
            k1, k2 = np.meshgrid(ks[0], ks[1], indexing="ij")
            t = (
                k1.reshape(-1, 1) * (basis[0][None, :] / factors[0])
                + k2.reshape(-1, 1) * (basis[1][None, :] / factors[1])
            )
        keep = np.all(np.abs(t) <= limit, axis=1)
        t = t[keep]
        u = np.linalg.norm(t, axis=1) * h
        keep = u > 0
        t, u = t[keep], u[keep]
        weights = u**power * measure

        base = np.floor(t).astype(int)
        frac = t - base
        hi = frac > 1.0 - 1e-9
        base = base + hi.astype(int)
        frac = np.where(hi, 0.0, frac)
        frac = np.where(frac < 1e-9, 0.0, frac)

        groups = []
        keys = np.round(frac, 9)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        for gi, fr in enumerate(uniq):
            sel = inverse == gi
            corners = []
            nz = [ax for ax in range(d) if fr[ax] != 0.0]
            for bits in np.ndindex(*([2] * len(nz))):
                offset = [0] * d
                w = 1.0
                for ax, bit in zip(nz, bits):
                    offset[ax] = bit
                    w *= fr[ax] if bit else (1.0 - fr[ax])
                corners.append((tuple(offset), w))
            groups.append(
                _SampleGroup(
                    corners=corners,
                    bases=base[sel],
                    weights=weights[sel],
                    u=u[sel],
                )
            )
        return _DirectionRule(
            vec=vec,
            unit_norm=math.sqrt(float(np.dot(vec, vec))),
            groups=groups,
            positions=t * h,
            weights=weights,
            u=u,
        )

    # -- offset classes for the full-grid operator ------------------------

    def class_index(self) -> list:
        """All direction classes with the multiples present in the offset box.

        Returns a list of (vec, m_array) with m*vec covering one half-space
        representative of every nonzero lattice offset with per-axis extent
        at most n-1.
        """
        if self._class_index is None:
            n, d = self.grid.n, self.grid.d
            limit = n - 1
            classes = {}
            rng = range(0, limit + 1)
            full = range(-limit, limit + 1)
            if d == 2:
                it = ((i, j) for i in rng for j in full)
            else:
                it = ((i, j, k) for i in rng for j in full for k in full)
            for off in it:
                first = next((x for x in off if x != 0), 0)
                if first <= 0:
                    continue  # half-space representative: first nonzero > 0
                g = 0
                for x in off:
                    g = math.gcd(g, abs(x))
                prim = tuple(x // g for x in off)
                classes.setdefault(prim, set()).add(g)
            self._class_index = [
                (vec, np.array(sorted(ms), dtype=int)) for vec, ms in sorted(classes.items())
            ]
        return self._class_index

    # -- evaluations ------------------------------------------------------

    def line_integral_at(self, fvals: np.ndarray, v: np.ndarray, vec,
                         w_norm: float | None = None) -> float:
        """Hyperplane integral at a single point v for direction class vec."""
        rule = self.rule(vec)
        points = v[None, :] + rule.positions
        samples = interp_values(self.grid, fvals, points, order=1)
        w = rule.weights
        if not self.params.tilde_b_is_constant():
            if w_norm is None:
                raise InputError("w_norm required for non-constant tilde_b")
            w = w * self.params.tilde_b_value(cos_theta_from_legs(rule.u, w_norm))
        return float(np.dot(samples, w))

    def tail_quadrature(self) -> list:
        """Angular rule for the loss integral beyond the offset box.

        For |w| outside the per-axis offset range the zero-extended
        difference field reduces the PV sum to the damping -2 g(v) K, and
        with constant tilde_b the kernel factorizes as |w|^-(d+2s) J(v, w^).
        The radial integral is then closed form and only the angular
        average of J remains:

            T(v) = (1/2s) int_{S^(d-1)} J(v, omega) W(omega)^(-2s) domega,

        with W(omega) the distance from the origin to the offset-box
        boundary.  J is sampled on a fixed set of primitive lattice
        directions with sector weights.
        """
        if not hasattr(self, "_tail_rule"):
            grid = self.grid
            s = self.params.s
            w0 = (grid.n - 1) * grid.h
            if grid.d == 2:
                prims = sorted(
                    {canonical_direction((a, b))
                     for a in range(-8, 9) for b in range(-8, 9)
                     if (a, b) != (0, 0)},
                    key=lambda v: math.atan2(v[1], v[0]) % math.pi,
                )
                angles = [math.atan2(v[1], v[0]) % math.pi for v in prims]
                bounds = []
                for k in range(len(angles)):
                    lo = 0.5 * (angles[k - 1] - math.pi + angles[k]) if k == 0 \
                        else 0.5 * (angles[k - 1] + angles[k])
                    hi = 0.5 * (angles[k] + angles[k + 1]) if k + 1 < len(angles) \
                        else 0.5 * (angles[k] + angles[0] + math.pi)
                    bounds.append((lo, hi))
                rule = []
                for vec, (lo, hi) in zip(prims, bounds):
                    psi = np.linspace(lo, hi, 9)[1::2]  # midpoint subrule
                    w_psi = w0 / np.maximum(np.abs(np.cos(psi)), np.abs(np.sin(psi)))
                    # both half-planes contribute equally (W is symmetric)
                    weight = 2.0 * float(np.sum(w_psi ** (-2.0 * s)) * (hi - lo) / 4.0)
                    rule.append((vec, weight / (2.0 * s)))
            else:
                prims = sorted(
                    {canonical_direction((a, b, c))
                     for a in range(-3, 4) for b in range(-3, 4) for c in range(-3, 4)
                     if (a, b, c) != (0, 0, 0)}
                )
                units = np.array([np.asarray(p) / np.linalg.norm(p) for p in prims])
                # deterministic Fibonacci covering of the sphere for sector weights
                m = 4000
                i = np.arange(m) + 0.5
                phi = np.arccos(1.0 - 2.0 * i / m)
                lam = np.pi * (1.0 + math.sqrt(5.0)) * i
                pts = np.stack([
                    np.sin(phi) * np.cos(lam),
                    np.sin(phi) * np.sin(lam),
                    np.cos(phi),
                ], axis=1)
                w_pt = w0 / np.abs(pts).max(axis=1)
                owner = np.argmax(np.abs(pts @ units.T), axis=1)
                rule = []
                for k, vec in enumerate(prims):
                    sel = owner == k
                    if not np.any(sel):
                        continue
                    weight = float(np.sum(w_pt[sel] ** (-2.0 * s)) * 4.0 * np.pi / m)
                    rule.append((vec, weight / (2.0 * s)))
            self._tail_rule = rule
        return self._tail_rule

    def loss_tail_field(self, fvals: np.ndarray) -> np.ndarray:
        """T(v): kernel mass beyond the offset box (constant tilde_b only)."""
        out = np.zeros(self.grid.shape)
        buf = np.empty(self.grid.shape)
        for vec, weight in self.tail_quadrature():
            self.line_integral_field(fvals, vec, out=buf)
            out += weight * buf
        return out

    def line_integral_field(self, fvals: np.ndarray, vec,
                            w_norm: float | None = None,
                            out: np.ndarray | None = None) -> np.ndarray:
        """Hyperplane integral at every node simultaneously (shift sums)."""
        rule = self.rule(vec)
        J = out if out is not None else np.zeros(self.grid.shape)
        J.fill(0.0)
        tb_needed = not self.params.tilde_b_is_constant()
        for group in rule.groups:
            if len(group.corners) == 1 and group.corners[0][0] == (0,) * self.grid.d:
                base_field = fvals
            else:
                base_field = np.zeros(self.grid.shape)
                for offset, cw in group.corners:
                    _shift_add(base_field, fvals, offset, cw)
            weights = group.weights
            if tb_needed:
                if w_norm is None:
                    raise InputError("w_norm required for non-constant tilde_b")
                weights = weights * self.params.tilde_b_value(
                    cos_theta_from_legs(group.u, w_norm)
                )
            for shift, wt in zip(group.bases, weights):
                _shift_add(J, base_field, shift, wt)
        return J


def _shift_add(out: np.ndarray, src: np.ndarray, shift, weight: float) -> None:
    """out[idx] += weight * src[idx + shift], zero beyond the edges."""
    if weight == 0.0:
        return
    sl_out, sl_src = [], []
    for s, n in zip(shift, out.shape):
        s = int(s)
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
def carleman_plan(grid: VelocityGrid, params: KernelParams,
                  m_resolution: int = DEFAULT_HYPERPLANE_M) -> CarlemanPlan:
    return CarlemanPlan(grid, params, m_resolution)


def _is_lattice_point(grid: VelocityGrid, v: np.ndarray) -> bool:
    idx = grid.index_coords(v)
    near = np.round(idx)
    return bool(
        np.all(np.abs(idx - near) < 1e-9)
        and np.all(near >= 0)
        and np.all(near <= grid.n - 1)
    )


def carleman_kernel(v, v_prime, f: DistributionField, params: KernelParams,
                    m_resolution: int = DEFAULT_HYPERPLANE_M) -> float:
    """Pointwise K_f(v, v') by hyperplane quadrature, truncated to the box.

    For lattice node pairs the cached direction-class rule is used (nodes
    exactly on the hyperplane, no interpolation on unsubdivided steps).
    For general positions, M uniformly spaced interpolated nodes span the
    bounding box chord.
    """
    grid = f.grid
    if params.d != grid.d:
        raise InputError("kernel dimension does not match the field grid")
    v = np.asarray(v, dtype=float)
    v_prime = np.asarray(v_prime, dtype=float)
    w = v_prime - v
    w_norm = float(np.linalg.norm(w))
    if w_norm == 0.0:
        raise SingularConfigurationError("K_f(v, v') is singular at v' == v")
    prefactor = w_norm ** (-params.singular_order)

    if _is_lattice_point(grid, v) and _is_lattice_point(grid, v_prime):
        vec = np.round(w / grid.h).astype(int)
        plan = carleman_plan(grid, params, m_resolution)
        integral = plan.line_integral_at(f.values, v, tuple(vec), w_norm=w_norm)
        return prefactor * max(integral, 0.0)

    # generic chord rule with M uniform midpoint nodes per hyperplane direction
    d = grid.d
    what = w / w_norm
    if d == 2:
        dirs = [np.array([-what[1], what[0]])]
    else:
        trial = np.array([0.0, 0.0, 1.0]) if abs(what[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(what, trial)
        e1 /= np.linalg.norm(e1)
        dirs = [e1, np.cross(what, e1)]
    half = math.sqrt(d) * grid.v_max
    m = m_resolution
    ticks = -half + (np.arange(m) + 0.5) * (2.0 * half / m)
    if d == 2:
        offsets = ticks[:, None] * dirs[0][None, :]
    else:
        t1, t2 = np.meshgrid(ticks, ticks, indexing="ij")
        offsets = t1.reshape(-1, 1) * dirs[0][None, :] + t2.reshape(-1, 1) * dirs[1][None, :]
    u = np.linalg.norm(offsets, axis=1)
    mask = u > 0
    points = v[None, :] + offsets[mask]
    samples = interp_values(grid, f.values, points, order=1)
    weights = u[mask] ** params.hyperplane_exponent * (2.0 * half / m) ** (d - 1)
    if not params.tilde_b_is_constant():
        weights = weights * params.tilde_b_value(cos_theta_from_legs(u[mask], w_norm))
    return prefactor * max(float(np.dot(samples, weights)), 0.0)
