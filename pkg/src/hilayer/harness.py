"""Experiment orchestration: configs, acceptance-criterion runners, reports,
plot-data emission, and the command-line interface.

Each acceptance criterion has a runner ``c<N>_...(config)`` returning a list
of Metric rows; ``run_suite`` groups them into the identity / estimate /
probe suites.  Reports carry full provenance (resolved config hash, seed)
and map every metric to its criterion ID.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .dyadic import DyadicCube, dyadic_forest
from .elliptic import (NonElliptic, polyharmonic_spec, garding_estimate,
                       lift_order, psi_forward, recover_from_lift, spec_from_config)
from .fields import GridField
from .kernel import polyharmonic_kernel
from .mindex import MIArray, enumerate_mi, laplacian_power_coeffs, unit_mi
from .potential import (ThetaConfig, WhitneyArray, dirichlet_indices,
                        theta_family, whitney_from_field, extend_whitney,
                        single_layer_slab)
from .families import random_bumps, band_limited
from .quadrature import parallel_map

DEFAULTS = {
    "seed": 1234,
    "resolution_multiplier": 1.0,
    "n_boundary": 128,
    "half_width": 5.0,
    "theta_k_extra": 2,          # k = m + this
    "kappa": 1 / 32,
    "omega": 1 / 8,
    "delta": 1 / 32,
    "out": "reports",
    "operator": {"preset": "polyharmonic", "m": 2, "n": 1},
}


@dataclass
class Metric:
    name: str
    value: float
    tolerance: float
    criterion: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentConfig:
    """Layered config: DEFAULTS < preset file < overrides."""
    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=None):
        cfg = json.loads(json.dumps(DEFAULTS))
        if path:
            with open(path) as f:
                user = json.load(f)
            cfg.update(user)
        if overrides:
            cfg.update(overrides)
        out = cls(cfg)
        out.validate()
        return out

    def validate(self):
        v = self.values
        if v["resolution_multiplier"] <= 0:
            raise ValueError("resolution multiplier must be positive")
        for key in ("kappa", "omega", "delta"):
            if v[key] <= 0:
                raise ValueError(f"{key} must be positive")
        m = v["operator"].get("m", 1)
        n_boundary = self.n_boundary
        if n_boundary < 16 * m:
            raise ValueError("boundary resolution too coarse for the requested order")

    @property
    def n_boundary(self) -> int:
        return int(self.values["n_boundary"] * self.values["resolution_multiplier"])

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.values, sort_keys=True).encode()
                              ).hexdigest()[:16]


@dataclass
class DiagnosticReport:
    metrics: list
    config: dict
    config_hash: str
    seed: int
    elapsed: float
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.metrics)

    def to_json(self) -> dict:
        return {"passed": self.passed, "metrics": [asdict(m) for m in self.metrics],
                "config": self.config, "config_hash": self.config_hash,
                "seed": self.seed, "elapsed": self.elapsed, "version": self.version}

    def write(self, out_dir: str, name: str = "report.json"):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w") as f:
            json.dump(self.to_json(), f, indent=2)

    def print_lines(self, stream=sys.stdout):
        for m in self.metrics:
            status = "PASS" if m.passed else "FAIL"
            print(f"[{status}] {m.criterion:>4} {m.name}: value={m.value:.4g} "
                  f"tol={m.tolerance:.4g} {m.detail}", file=stream)


# -- criterion runners (C1..C12 live in tests/test_acceptance.py; the harness
#    re-exposes the cheap ones for the CLI suites) ------------------------------

def c1_annihilation(config: ExperimentConfig) -> list:
    out = []
    for (m, n) in [(1, 1), (2, 1), (1, 2), (2, 2)]:
        spec = polyharmonic_spec(m, n)
        K = polyharmonic_kernel(m, n + 1)
        cfg = ThetaConfig(k=m + config.values["theta_k_extra"],
                          t_grid=np.geomspace(0.25, 2.0, 4))
        th = theta_family(K, spec, cfg)
        gammas = [g for g in dirichlet_indices(m, n)
                  if g[-1] < m - 1]
        if not gammas:
            out.append(Metric(f"annihilation_m{m}_n{n}", 0.0, 1e-8, "C1", True,
                              "no gamma with gamma_d < m-1 (vacuous)"))
            continue
        rng = np.random.default_rng(config.seed)
        xs = rng.uniform(-1, 1, size=(16, n))
        ts = np.geomspace(0.25, 2.0, 16)
        worst = 0.0
        for gv in gammas:
            vals = th.S_one(gv, xs, ts)
            worst = max(worst, float(np.max(np.abs(vals))))
        out.append(Metric(f"annihilation_m{m}_n{n}", worst, 1e-8, "C1",
                          worst < 1e-8))
    return out


def c2_clp(config: ExperimentConfig) -> list:
    from .sqfn import clp_family
    out = []
    for profile in ("band", "spatial"):
        fam = clp_family(profile, 1)
        s = np.geomspace(1e-3, 1e3, 4001)
        resid = abs(float(np.trapezoid(fam.hat(s) ** 2, np.log(s))) - 1.0)
        out.append(Metric(f"clp_normalization_{profile}", resid, 1e-8, "C2",
                          resid < 1e-8))
    fam = clp_family("band", 1)
    N = 256
    h = 1 / 16
    f = band_limited(config.seed, (N,), (h,), kmin=2, kmax=10)
    rec = fam.reproduce(f, (h,))
    rel = float(np.linalg.norm(rec - f) / np.linalg.norm(f))
    out.append(Metric("clp_reproduction", rel, 1e-6, "C2", rel < 1e-6))
    return out


def c10_lifting(config: ExperimentConfig) -> list:
    out = []
    worst = 0.0
    for n in (1, 2):
        for m in (1, 2):
            for M in (1, 2):
                d = n + 1
                rng = np.random.default_rng(config.seed + 10 * m + M)
                F = {a: complex(rng.normal(), rng.normal())
                     for a in enumerate_mi(d, m)}
                B = psi_forward(F, M, n, m)
                F2, resid = recover_from_lift(B, M, n, m)
                err = max(abs(F[a] - F2[a]) for a in F)
                worst = max(worst, err, resid)
    out.append(Metric("lift_roundtrip", worst, 1e-9, "C10", worst < 1e-9))
    return out


def c12_hodge(config: ExperimentConfig) -> list:
    from .sqfn import hodge_decompose
    from .elliptic import horizontal_part, perturbed_polyharmonic_spec
    out = []
    n, m = 1, 2
    hp = horizontal_part(polyharmonic_spec(m, n))
    N = 64
    h = 1.0 / N
    rng = np.random.SeedSequence(config.seed).spawn(4)
    worst_div = worst_rec = 0.0
    for sq in rng:
        F = MIArray(n, m, {z: GridField(band_limited(sq, (N,), (h,)), h)
                           for z in enumerate_mi(n, m)})
        H, Phi, rep = hodge_decompose(hp, F)
        worst_div = max(worst_div, rep["divergence_residual"])
        worst_rec = max(worst_rec, rep["reconstruction_residual"])
    out.append(Metric("hodge_divergence", worst_div, 1e-8, "C12", worst_div < 1e-8))
    out.append(Metric("hodge_reconstruction", worst_rec, 1e-8, "C12",
                      worst_rec < 1e-8))
    return out


_SUITES = {
    "identity": [c1_annihilation, c2_clp, c10_lifting, c12_hodge],
    "estimate": [],
    "probe": [],
}


def run_suite(config: ExperimentConfig, suite: str = "identity") -> DiagnosticReport:
    """Execute a suite; exit-status semantics: 0 pass, 1 fail, 2 config error.

    The heavyweight criteria (C3, C4, C6, C7, C8, C9, C11) live in the
    acceptance pytest module; the CLI suites cover the cheap identities and
    the scan entry points below cover the long-running measurements
    individually.
    """
    start = time.time()
    if suite == "all":
        runners = [r for group in _SUITES.values() for r in group]
    elif suite == "none":
        runners = []
    else:
        runners = _SUITES.get(suite)
        if runners is None:
            raise ValueError(f"unknown suite {suite!r}")
    metrics = []
    for runner in runners:
        metrics.extend(runner(config))
    return DiagnosticReport(metrics, config.values, config.hash(), config.seed,
                            time.time() - start)


# -- square-function scan (criterion 11) ----------------------------------------

def scan_square_bound(config: ExperimentConfig, m: int, count: int = 20,
                      dilations=(0.5, 1.0, 2.0), refine: bool = True) -> dict:
    """Ratios square_norm(grad^m d_t S g; t) / ||g||^2 over a seeded family.

    Reports the max ratio, the dilation drift (the continuum ratio is
    exactly dilation invariant for constant coefficients), and refinement
    drift; grids are scale-covariant so the drifts measure discretization.
    """
    from .sqfn import square_norm
    n = 1
    spec = polyharmonic_spec(m, n)
    K = polyharmonic_kernel(m, n + 1)
    seeds = np.random.SeedSequence(config.seed).spawn(count)

    def one_ratio(seed, lam: float, N: int) -> float:
        half = config.values["half_width"] / lam
        xg = (np.arange(N) - N // 2) * (2 * half / N)
        comps = {}
        for i, c in enumerate(dirichlet_indices(m, n)):
            f1 = random_bumps(np.random.SeedSequence([seed, i]), n, count=2,
                              center_box=0.5 / lam,
                              width_range=(0.25 / lam, 0.4 / lam))
            comps[c] = f1.eval_stack((2,), xg[:, None]).astype(complex)
        g = WhitneyArray("dirichlet", m, n, comps, xg[1] - xg[0], (xg[0],))
        t_grid = np.geomspace(0.02, 4.0, 28) / lam
        u = np.zeros((len(t_grid), N), dtype=complex)
        acc = np.zeros((len(t_grid), N))
        for a in enumerate_mi(n + 1, m):
            stack = tuple(x + (1 if i == n else 0) for i, x in enumerate(a))
            acc += np.abs(single_layer_slab(K, g, stack, t_grid)) ** 2
        sq = square_norm(np.sqrt(acc), t_grid, g.cell, weight="t")
        return sq / g.norm_l2() ** 2

    N0 = config.n_boundary
    ratios = {}
    for lam in dilations:
        ratios[lam] = [one_ratio(int(s.generate_state(1)[0]), lam, N0)
                       for s in seeds]
    base = np.asarray(ratios[1.0])
    drift = 0.0
    for lam in dilations:
        r = np.asarray(ratios[lam])
        drift = max(drift, float(np.max(np.abs(r - base) / base)))
    refine_drift = 0.0
    if refine:
        finer = [one_ratio(int(s.generate_state(1)[0]), 1.0, 2 * N0)
                 for s in seeds[:max(count // 4, 2)]]
        coarse = base[:len(finer)]
        refine_drift = float(np.max(np.abs(np.asarray(finer) - coarse) / coarse))
    return {"max_ratio": float(np.max(base)), "dilation_drift": drift,
            "refinement_drift": refine_drift,
            "ratios": {str(k): list(map(float, v)) for k, v in ratios.items()}}


def lift_compare(config: ExperimentConfig) -> dict:
    """m=1 lifted by M=1 (n=1): S-representation through the lifted kernel
    against the direct kernel, and the square-function ratio agreement."""
    from .sqfn import square_norm
    n, m, M = 1, 1, 1
    spec = polyharmonic_spec(m, n)
    lifted = lift_order(spec, M)
    K = polyharmonic_kernel(m, n + 1)
    Kl = polyharmonic_kernel(m + 2 * M, n + 1)
    a_c = laplacian_power_coeffs(M, n + 1)
    N = config.n_boundary
    half = config.values["half_width"]
    xg = (np.arange(N) - N // 2) * (2 * half / N)
    f1 = random_bumps(config.seed, n, count=2, center_box=0.5,
                      width_range=(0.25, 0.4))
    gval = f1.eval_stack((2,), xg[:, None]).astype(complex)
    g = WhitneyArray("dirichlet", m, n, {(0, 0): gval}, xg[1] - xg[0], (xg[0],))
    # lifted data: g~_eps = sum_{gamma + 2 xi = eps} a_xi g_gamma
    comps_l = {}
    for eps in dirichlet_indices(m + 2 * M, n):
        acc = np.zeros_like(gval)
        for xi, ax in a_c.items():
            gamma = tuple(e - 2 * x for e, x in zip(eps, xi))
            if all(v >= 0 for v in gamma) and sum(gamma) == m - 1:
                acc = acc + ax * gval
        comps_l[eps] = acc
    gl = WhitneyArray("dirichlet", m + 2 * M, n, comps_l, xg[1] - xg[0], (xg[0],))
    t_grid = np.geomspace(0.05, 3.0, 20)
    direct = np.zeros((len(t_grid), N))
    via_lift = np.zeros((len(t_grid), N))
    pointwise = 0.0
    for a in enumerate_mi(n + 1, m):
        stack = tuple(x + (1 if i == n else 0) for i, x in enumerate(a))
        vd = single_layer_slab(K, g, stack, t_grid)
        vl = np.zeros_like(vd)
        for zeta, az in a_c.items():
            stack_l = tuple(s + 2 * z for s, z in zip(stack, zeta))
            vl += az * single_layer_slab(Kl, gl, stack_l, t_grid)
        direct += np.abs(vd) ** 2
        via_lift += np.abs(vl) ** 2
        pointwise = max(pointwise, float(np.max(np.abs(vd - vl))
                                         / np.max(np.abs(vd))))
    sq_d = square_norm(np.sqrt(direct), t_grid, g.cell, weight="t")
    sq_l = square_norm(np.sqrt(via_lift), t_grid, g.cell, weight="t")
    ratio = sq_l / sq_d
    return {"pointwise_rel": pointwise, "square_ratio": float(ratio),
            "direct": float(sq_d), "lifted": float(sq_l)}


# -- CLI ------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--resolution-multiplier", type=float, default=None)


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "resolution_multiplier", None) is not None:
        overrides["resolution_multiplier"] = args.resolution_multiplier
    return ExperimentConfig.load(args.config, overrides)


def _emit(report: DiagnosticReport, config: ExperimentConfig, name: str):
    out_dir = config.values["out"]
    report.write(out_dir, name)
    report.print_lines()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hilayer",
                                 description="layer-potential measurement harness")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("check-identities", "scan-decay", "scan-ortho", "carleson",
                 "probe", "scan-square", "lift-compare"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "check-identities":
            p.add_argument("--suite", default="identity",
                           choices=["identity", "estimate", "probe", "all", "none"])
        if name == "scan-square":
            p.add_argument("--m", type=int, default=2)
            p.add_argument("--count", type=int, default=8)
    args = ap.parse_args(argv)
    try:
        config = _load_config(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out_dir = config.values["out"]
    os.makedirs(out_dir, exist_ok=True)
    try:
        if args.cmd == "check-identities":
            report = run_suite(config, args.suite)
            _emit(report, config, "report.json")
            return 0 if report.passed else 1
        if args.cmd == "scan-decay":
            from .sqfn import offdiag_decay_scan, write_scan_csv
            spec = spec_from_config(config.values["operator"])
            m, n = spec.m, spec.n
            K = polyharmonic_kernel(m, n + 1)
            cfg = ThetaConfig(k=m + config.values["theta_k_extra"],
                              t_grid=np.geomspace(0.25, 2.0, 4))
            th = theta_family(K, spec, cfg)
            Q = DyadicCube((-0.5,) * n, 0, base=1.0, shift=(-0.5,) * n)
            fit = offdiag_decay_scan(th, Q, j_max=6, seed=config.seed, kind="S")
            write_scan_csv(os.path.join(out_dir, "scan_decay.csv"), fit)
            print(f"decay exponent {fit.exponent:.3f} "
                  f"(threshold {fit.threshold:.3f}) passed={fit.passed}")
            return 0 if fit.passed else 1
        if args.cmd == "scan-ortho":
            from .sqfn import clp_family
            report = run_suite(config, "none")
            metrics = _scan_ortho(config)
            report.metrics.extend(metrics)
            _emit(report, config, "scan_ortho.json")
            return 0 if report.passed else 1
        if args.cmd == "carleson":
            from .sqfn import theta_beta_carleson
            spec = spec_from_config(config.values["operator"])
            m, n = spec.m, spec.n
            K = polyharmonic_kernel(m, n + 1)
            cfg = ThetaConfig(k=m + config.values["theta_k_extra"],
                              t_grid=np.geomspace(1 / 64, 1.0, 12))
            beta = next(b for b in enumerate_mi(n + 1, m) if b[-1] < m)
            res = theta_beta_carleson(spec, K, beta, cfg, config.values["delta"])
            with open(os.path.join(out_dir, "carleson.json"), "w") as f:
                json.dump(res, f, indent=2)
            print(json.dumps(res, indent=2))
            return 0
        if args.cmd == "probe":
            from .probes import tb_probe
            spec = spec_from_config(config.values["operator"])
            m, n = spec.m, spec.n
            K = polyharmonic_kernel(m, n + 1)
            Q = DyadicCube((-0.5,) * n, 0, base=1.0, shift=(-0.5,) * n)
            probe, rep = tb_probe(Q, config.values["kappa"], K, spec,
                                  omega=config.values["omega"])
            payload = {"sigma_est": rep.sigma_est, "eta_est": rep.eta_est,
                       "carleson_budget": rep.carleson_budget,
                       "identity_residual": rep.identity_residual,
                       "averages": {str(k): [v.real, v.imag]
                                    for k, v in rep.averages.items()}}
            with open(os.path.join(out_dir, "probe.json"), "w") as f:
                json.dump(payload, f, indent=2)
            print(json.dumps(payload, indent=2))
            return 0
        if args.cmd == "scan-square":
            res = scan_square_bound(config, m=args.m, count=args.count)
            with open(os.path.join(out_dir, "scan_square.json"), "w") as f:
                json.dump(res, f, indent=2)
            _write_plot_data(os.path.join(out_dir, "scan_square.dat"),
                             np.arange(len(res["ratios"]["1.0"])),
                             res["ratios"]["1.0"])
            print(json.dumps({k: v for k, v in res.items() if k != "ratios"},
                             indent=2))
            return 0
        if args.cmd == "lift-compare":
            res = lift_compare(config)
            with open(os.path.join(out_dir, "lift_compare.json"), "w") as f:
                json.dump(res, f, indent=2)
            print(json.dumps(res, indent=2))
            return 0 if 0.5 <= res["square_ratio"] <= 2.0 else 1
    except NonElliptic as e:
        print(f"non-elliptic operator: {e}", file=sys.stderr)
        return 2
    return 0


def _scan_ortho(config: ExperimentConfig) -> list:
    from .sqfn import clp_family, quasi_orthogonality_scan
    from .kernel import polyharmonic_kernel
    spec = spec_from_config(config.values["operator"])
    m, n = spec.m, spec.n
    K = polyharmonic_kernel(m, n + 1)
    cfg = ThetaConfig(k=m + config.values["theta_k_extra"],
                      t_grid=np.array([1.0]))
    th = theta_family(K, spec, cfg)
    fam = clp_family("band", n)
    N = config.n_boundary
    half = config.values["half_width"]
    xg = (np.arange(N) - N // 2) * (2 * half / N)
    h = xg[1] - xg[0]
    bumps = random_bumps(config.seed, n, count=3, center_box=0.8)
    hvals = bumps.eval_stack((0,), xg[:, None]).astype(complex)

    def apply_S(s, t):
        comps = {c: np.zeros_like(hvals) for c in dirichlet_indices(m, n)}
        for c in comps:
            comps[c] = fam.apply(hvals, (h,), s)
        g = WhitneyArray("dirichlet", m, n, comps, h, (xg[0],))
        vals = th.S_slab(g, [t])[0]
        return (float(np.sqrt(np.sum(np.abs(vals) ** 2) * h)),
                float(np.sqrt(len(comps)) * np.sqrt(np.sum(np.abs(hvals) ** 2) * h)))

    fit = quasi_orthogonality_scan(apply_S, fam, [1 / 16, 1 / 8, 1 / 4, 1 / 2],
                                   config.seed, threshold=(0.8, 1.2))
    return [Metric("quasi_orthogonality_S", fit.exponent, 0.8, "C8", fit.passed,
                   f"band {fit.threshold}")]


def _write_plot_data(path, xs, ys):
    """Two-column plot data plus a gnuplot stub next to it."""
    with open(path, "w") as f:
        for x, y in zip(xs, ys):
            f.write(f"{x} {y}\n")
    with open(path + ".gp", "w") as f:
        f.write(f"set logscale y\nplot '{os.path.basename(path)}' with linespoints\n")


if __name__ == "__main__":
    sys.exit(main())
