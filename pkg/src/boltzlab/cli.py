"""Command-line entry point tying the modules into reproducible runs.

Subcommands: kernel-eval, solve, lowerbound, verify.  Every run echoes its
effective configuration to <out>/config.json before doing any work, and
all artifacts are written with fixed formatting so that seeded runs are
byte-identical.

Exit codes: 0 success, 2 config error, 3 singular input, 4 diagnostic
failure, 5 stiffness abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lowerbound as lb
from . import verify as vf
from .errors import InputError, SingularConfigurationError, StiffnessError
from .grid import (
    DistributionField,
    VelocityGrid,
    build_initial_condition,
    field_from_csv,
    field_to_csv,
)
from .kernel import DEFAULT_HYPERPLANE_M, KernelParams, carleman_kernel, lambda_weight
from .quadrature import PVQuadratureSpec
from .solver import measure_plateau, solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SINGULAR = 3
EXIT_DIAGNOSTIC = 4
EXIT_STIFF = 5

VERIFY_SELECTORS = ("prop21", "lemma23", "cancellation", "lambda", "volumes",
                    "sigma-oracle", "all")


@dataclass
class RunConfig:
    """Validated run configuration with defaults filled in."""

    kernel: KernelParams
    grid: VelocityGrid
    dt_init: float
    t_end: float
    initial_condition: dict
    lowerbound: dict
    quadrature: dict
    seeds: dict
    threads: int
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise InputError("config root must be a JSON object")
        kern = data.get("kernel", {})
        kernel = KernelParams(
            d=int(kern.get("d", 2)),
            gamma=float(kern.get("gamma", 0.0)),
            s=float(kern.get("s", 0.5)),
            tilde_b=kern.get("tilde_b", "constant"),
            theta_min=kern.get("theta_min"),
        )
        gr = data.get("grid", {})
        grid = VelocityGrid(d=kernel.d, v_max=float(gr.get("v_max", 6.0)),
                            n=int(gr.get("n", 48)))
        sol = data.get("solver", {})
        dt_init = float(sol.get("dt_init", 1e-3))
        t_end = float(sol.get("t_end", 0.1))
        if dt_init <= 0:
            raise InputError(f"dt_init must be positive, got {dt_init}")
        if t_end < 0:
            raise InputError(f"t_end must be nonnegative, got {t_end}")
        ic = data.get("initial_condition", {"kind": "maxwellian"})
        lower = dict(data.get("lowerbound", {}))
        lower.setdefault("T0", 0.2)
        lower.setdefault("c_s", 1.0)
        lower.setdefault("n_max", 6)
        quad = dict(data.get("quadrature", {}))
        quad.setdefault("m_resolution", DEFAULT_HYPERPLANE_M)
        quad.setdefault("inner_exclusion_radius", 1.0)
        quad.setdefault("singular_weight", "cell_mean")
        seeds = dict(data.get("seeds", {}))
        seeds.setdefault("master", 20260810)
        threads = int(data.get("threads", 0))
        if threads < 0:
            raise InputError("threads must be nonnegative (0 = auto)")
        cfg = cls(kernel=kernel, grid=grid, dt_init=dt_init, t_end=t_end,
                  initial_condition=ic, lowerbound=lower, quadrature=quad,
                  seeds=seeds, threads=threads, raw=data)
        cfg.pv_spec()  # validate quadrature block eagerly
        cfg.initial_field()
        return cfg

    def pv_spec(self) -> PVQuadratureSpec:
        return PVQuadratureSpec(
            inner_exclusion_radius=float(self.quadrature["inner_exclusion_radius"]),
            singular_weight=self.quadrature["singular_weight"],
        )

    @property
    def m_resolution(self) -> int:
        return int(self.quadrature["m_resolution"])

    def initial_field(self) -> DistributionField:
        return build_initial_condition(self.grid, self.initial_condition)

    def effective_dict(self) -> dict:
        return {
            "kernel": {
                "d": self.kernel.d,
                "gamma": self.kernel.gamma,
                "s": self.kernel.s,
                "tilde_b": self.kernel.tilde_b,
                "theta_min": self.kernel.theta_min,
            },
            "grid": {"v_max": self.grid.v_max, "n": self.grid.n},
            "solver": {"dt_init": self.dt_init, "t_end": self.t_end},
            "initial_condition": self.initial_condition,
            "lowerbound": self.lowerbound,
            "quadrature": self.quadrature,
            "seeds": self.seeds,
            "threads": self.threads,
        }


def _load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def _prepare_out(cfg: RunConfig, out: str) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(cfg.effective_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return out_dir


def _parse_vector(text: str, d: int) -> np.ndarray:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise InputError(f"cannot parse vector {text!r}") from exc
    if len(vals) != d:
        raise InputError(f"vector {text!r} has {len(vals)} components, expected {d}")
    return np.array(vals)


def cmd_kernel_eval(args) -> int:
    cfg = _load_config(args.config)
    if args.field:
        f = field_from_csv(args.field)
        if f.grid.d != cfg.kernel.d:
            raise InputError("field CSV dimension does not match the kernel")
    else:
        f = cfg.initial_field()
    v = _parse_vector(args.v, cfg.kernel.d)
    v_prime = _parse_vector(args.v_prime, cfg.kernel.d)
    k_val = carleman_kernel(v, v_prime, f, cfg.kernel, m_resolution=cfg.m_resolution)
    lam = lambda_weight(v, f, cfg.kernel)
    json.dump({"K": k_val, "Lambda": lam}, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _prepare_out(cfg, args.out)
    f0 = cfg.initial_field()
    final, trace = solve(
        f0, cfg.t_end, cfg.kernel, dt_init=cfg.dt_init, spec=cfg.pv_spec(),
        m_resolution=cfg.m_resolution,
    )
    trace.to_csv(out_dir / "trace.csv")
    field_to_csv(final, out_dir / "field_final.csv")
    return EXIT_OK if trace.all_ok else EXIT_DIAGNOSTIC


def cmd_lowerbound(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _prepare_out(cfg, args.out)
    params = cfg.kernel
    T0 = float(cfg.lowerbound["T0"])
    c_s = float(cfg.lowerbound["c_s"])
    n_max = int(cfg.lowerbound["n_max"])

    if args.mode == "analytic":
        if "ell0" in cfg.lowerbound:
            ell0 = float(cfg.lowerbound["ell0"])
        else:
            ell0 = measure_plateau(cfg.initial_field(), 1.0)
            if ell0 <= 0:
                raise InputError("initial condition has no positive plateau on B_1; "
                                 "set lowerbound.ell0 explicitly")
        states = lb.iterate(T0, ell0, params, c_s=c_s, n_max=n_max)
        bound = lb.fit_gaussian(states)
        lb.states_to_csv(states, out_dir / "spreading_states.csv")
        sound = all(
            bound.a * np.exp(-bound.b * prev.R**2) <= st.ell or st.ell == 0.0
            for prev, st in zip(states, states[1:])
        )
        report = lb.CertificateReport(
            a=bound.a, b=bound.b, worst_margin=0.0,
            worst_node=(0.0,) * params.d, passed=bool(sound),
            r_max=states[-1].R,
        )
        lb.certificate_to_json(report, out_dir / "certificate.json",
                               note="analytic recursion; soundness of the fit")
        return EXIT_OK if sound else EXIT_DIAGNOSTIC

    # empirical mode: snapshot the homogeneous solve on the dyadic schedule
    f0 = cfg.initial_field()
    radii = lb.spreading_radii(n_max)
    usable = sum(1 for r in radii if r <= cfg.grid.v_max + 1e-12)
    times = [(1.0 - 2.0 ** (-(k + 1))) * T0 for k in range(usable)]
    final, trace, snaps = solve(
        f0, times[-1], params, dt_init=cfg.dt_init, spec=cfg.pv_spec(),
        m_resolution=cfg.m_resolution, snapshot_times=times,
    )
    trace.to_csv(out_dir / "trace.csv")
    field_to_csv(final, out_dir / "field_final.csv")
    snapshots = [s for _, s in snaps]
    states, bound = lb.empirical_spreading(snapshots, T0, times=times)
    lb.states_to_csv(states, out_dir / "spreading_states.csv")
    if bound is None:
        lb.certificate_to_json(None, out_dir / "certificate.json",
                               note="no positive plateau measured; fit empty")
        return EXIT_DIAGNOSTIC
    report = lb.certify(snapshots[len(states) - 1], bound, r_max=states[-1].R)
    note = None
    if len(states) < len(snapshots):
        note = f"plateau vanished at stage {len(states)}; fit truncated"
    lb.certificate_to_json(report, out_dir / "certificate.json", note=note)
    return EXIT_OK if report.passed else EXIT_DIAGNOSTIC


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    which = args.which
    if which not in VERIFY_SELECTORS:
        raise InputError(f"unknown verify selector {which!r}")
    out_dir = _prepare_out(cfg, args.out)
    params = cfg.kernel
    f = cfg.initial_field()
    m_res = cfg.m_resolution
    seed = int(cfg.seeds["master"])
    reports: list[vf.EstimateReport] = []

    if which in ("prop21", "all"):
        r_sweep = np.geomspace(max(4 * f.grid.h, 0.1), min(1.0, f.grid.v_max / 2), 6)
        e = np.zeros(params.d)
        e[0] = 1.0
        v_sweep = [np.zeros(params.d), 0.5 * e]
        reports.extend(vf.verify_kernel_bounds(f, params, r_sweep, v_sweep,
                                               m_resolution=m_res))
    if which in ("lemma23", "all"):
        nodes = f.grid.nodes()
        r2 = np.sum(nodes**2, axis=-1)
        phis = [
            np.exp(-r2 / 2.0),
            np.cos(nodes[..., 0]),
            1.0 / (1.0 + r2),
        ]
        reports.append(vf.verify_linear_bound(f, phis, params, m_resolution=m_res))
    if which in ("cancellation", "all"):
        reports.append(vf.verify_cancellation(f, params))
    if which in ("lambda", "all"):
        reports.append(vf.verify_lambda_growth(f, params))
    if which in ("volumes", "all"):
        reports.extend(vf.verify_volumes(params.d, seed=seed,
                                         n_samples=int(cfg.raw.get("verify", {})
                                                       .get("n_samples", 1_000_000))))
    if which in ("sigma-oracle", "all"):
        reports.append(vf.verify_cross_representation(f, params, m_resolution=m_res))

    for rep in reports:
        vf.report_to_json(rep, out_dir / f"estimate_{rep.name}.json")
    vf.summary_to_csv(reports, out_dir / "estimates_summary.csv")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_DIAGNOSTIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boltzlab",
        description="Desk-scale laboratory for the non-cutoff Boltzmann collision operator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pk = sub.add_parser("kernel-eval", help="evaluate K_f(v, v') and Lambda(v)")
    pk.add_argument("--config", required=True)
    pk.add_argument("--v", required=True, help="comma-separated components")
    pk.add_argument("--v-prime", required=True, dest="v_prime")
    pk.add_argument("--field", help="optional field CSV (otherwise the configured IC)")
    pk.add_argument("--threads", type=int, default=None)
    pk.set_defaults(fn=cmd_kernel_eval)

    ps = sub.add_parser("solve", help="homogeneous relaxation run")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", default="out")
    ps.add_argument("--threads", type=int, default=None)
    ps.set_defaults(fn=cmd_solve)

    pl = sub.add_parser("lowerbound", help="spreading iteration and Gaussian certificate")
    pl.add_argument("--config", required=True)
    pl.add_argument("--out", default="out")
    pl.add_argument("--mode", choices=("analytic", "empirical"), default="analytic")
    pl.add_argument("--threads", type=int, default=None)
    pl.set_defaults(fn=cmd_lowerbound)

    pv = sub.add_parser("verify", help="brute-force estimate verification")
    pv.add_argument("--config", required=True)
    pv.add_argument("--out", default="out")
    pv.add_argument("--which", default="all")
    pv.add_argument("--threads", type=int, default=None)
    pv.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SingularConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StiffnessError as exc:
        print(f"error: {exc}; diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_STIFF


if __name__ == "__main__":
    sys.exit(main())
