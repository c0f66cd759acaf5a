"""Binary collision geometry.

Post-collisional velocities on the sigma-sphere,

    v'  = (v + v_*)/2 + (|v - v_*|/2) sigma,
    v'_* = (v + v_*)/2 - (|v - v_*|/2) sigma,

the deviation angle cos(theta) = ((v - v_*)/|v - v_*|) . sigma, and the
integrand weight of the hyperplane (Carleman) change of variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, InputError, SingularConfigurationError

_UNIT_TOL = 1e-12
_HYPERPLANE_RTOL = 1e-9


def _vec(x, d: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or (d is not None and v.shape[0] != d):
        raise InputError(f"expected a velocity vector{'' if d is None else f' of dimension {d}'}")
    if not np.all(np.isfinite(v)):
        raise InputError("velocity has non-finite components")
    return v


@dataclass(frozen=True)
class CollisionConfig:
    """A pre-collision pair (v, v_*) together with a unit vector sigma."""

    v: np.ndarray
    v_star: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        v = _vec(self.v)
        v_star = _vec(self.v_star, v.shape[0])
        sigma = _vec(self.sigma, v.shape[0])
        if abs(np.linalg.norm(sigma) - 1.0) > _UNIT_TOL:
            raise InputError(f"sigma must be a unit vector, |sigma| = {np.linalg.norm(sigma)!r}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v_star", v_star)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.v.shape[0]


def post_collision(cfg: CollisionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Map (v, v_*, sigma) to the post-collisional pair (v', v'_*)."""
    center = 0.5 * (cfg.v + cfg.v_star)
    half = 0.5 * np.linalg.norm(cfg.v - cfg.v_star)
    return center + half * cfg.sigma, center - half * cfg.sigma


def deviation_angle(cfg: CollisionConfig) -> float:
    """Deviation angle theta in [0, pi]; undefined when v == v_*."""
    rel = cfg.v - cfg.v_star
    norm = np.linalg.norm(rel)
    if norm == 0.0:
        raise DegenerateConfigurationError("deviation angle undefined for v == v_*")
    cos_theta = np.clip(np.dot(rel / norm, cfg.sigma), -1.0, 1.0)
    return float(np.arccos(cos_theta))


def cos_theta_carleman(dist_vprime: float, dist_vprime_star: float) -> float:
    """cos(theta) from the two right-triangle legs |v-v'| and |v-v'_*|.

    In the Carleman frame v' - v is orthogonal to v'_* - v, and
    sin(theta/2) = |v-v'| / |v-v_*| with |v-v_*|^2 = |v-v'|^2 + |v-v'_*|^2.
    """
    a2 = dist_vprime * dist_vprime
    b2 = dist_vprime_star * dist_vprime_star
    return (b2 - a2) / (b2 + a2)


def carleman_weights(v, v_prime, v_prime_star, params) -> float:
    """Integrand weight |v-v'|^(-(d+2s)) |v-v'_*|^(gamma+2s+1) tilde_b(cos theta).

    ``v_prime_star`` must lie on the hyperplane through ``v`` orthogonal to
    ``v' - v`` (relative tolerance 1e-9 * |v'-v|).
    """
    v = _vec(v, params.d)
    v_prime = _vec(v_prime, params.d)
    v_prime_star = _vec(v_prime_star, params.d)
    w = v_prime - v
    dist_vp = np.linalg.norm(w)
    if dist_vp == 0.0:
        raise SingularConfigurationError("carleman weight singular at v' == v")
    offset = np.dot(v_prime_star - v, w / dist_vp)
    if abs(offset) > _HYPERPLANE_RTOL * dist_vp:
        raise InputError(
            f"v'_* is off the hyperplane through v (offset {offset!r}, |v'-v| = {dist_vp!r})"
        )
    dist_vps = np.linalg.norm(v_prime_star - v)
    cos_theta = cos_theta_carleman(dist_vp, dist_vps)
    tb = params.tilde_b_value(cos_theta)
    return float(
        dist_vp ** (-(params.d + 2.0 * params.s))
        * dist_vps ** (params.gamma + 2.0 * params.s + 1.0)
        * tb
    )
