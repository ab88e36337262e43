"""Command line runner: ``spde-uniq <subcommand> --config PATH [--seed N] [--out DIR] [--plots]``.

Exit codes: 0 all assertions pass, 2 an assertion failed, 3 configuration error.
Each subcommand writes ``<name>.csv`` tables plus ``<name>.meta.txt`` echoing the
effective configuration (re-parseable).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import control as ctl
from . import engine as eng
from . import models as mdl
from . import spectral_core as sc
from . import verify as ver
from .errors import ConfigError, SpdeUniqError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list] = field(default_factory=list)
    plot: tuple | None = None          # (x column, y column, log-log?)


@dataclass
class Outcome:
    tables: list[Table] = field(default_factory=list)
    checks: list[tuple[bool, str, str]] = field(default_factory=list)   # ok, message, citation

    def check(self, ok, message: str, citation: str = ""):
        self.checks.append((bool(ok), message, citation))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.15e" % float(v)
    return str(v)


def write_csv(path: Path, table: Table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(table.header)
        for r in table.rows:
            w.writerow([_fmt(v) for v in r])


def write_svg(path: Path, table: Table):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xc, yc, loglog = table.plot
    xi, yi = table.header.index(xc), table.header.index(yc)
    x = np.array([float(r[xi]) for r in table.rows])
    y = np.array([float(r[yi]) for r in table.rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, "o-")
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xc)
    ax.set_ylabel(yc)
    ax.set_title(table.name)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands


def _x0(cfg, model, n):
    x = np.zeros((n, model.dim))
    x[: min(4, n), 0] = cfg["run.x0_scale"]
    return x


def cmd_hypcheck(cfg) -> Outcome:
    out = Outcome()
    model = cfg.model()
    drift = cfg.drift()
    rep = mdl.check_theorem_conditions(model)
    t = Table("conditions", ["condition", "satisfied", "margin", "citation"])
    for c in rep.conditions:
        t.rows.append([c.name, c.satisfied, c.margin, c.citation])
        out.check(c.satisfied, f"{rep.theorem}: {c.name} (margin {c.margin:.3e})", c.citation)
    out.tables.append(t)

    ser = mdl.series_condition(model, drift)
    out.tables.append(Table("series", ["partial_sum", "tail_bound", "converges", "exponent"],
                            [[ser.partial_sum, ser.tail_bound, ser.converges, ser.exponent]]))
    out.check(ser.converges, f"drift series converges (decay exponent {ser.exponent:.3f})",
              'Hypothesis "conv_serie_holder"')

    tr = mdl.trace_integrability(model, cfg["hypcheck.eta_grid"], cfg["hypcheck.t"])
    tt = Table("trace", ["eta", "integral", "tail", "total", "stable", "exponent"])
    for eta, v in tr.values.items():
        tt.rows.append([eta, v["integral"], v["tail"], v["total"], v["stable"], v["exponent"]])
    out.tables.append(tt)
    out.check(tr.best_eta is not None,
              f"trace integrable for some eta (smallest stable eta = {tr.best_eta})",
              'Hypothesis "trace integrability"')

    theta = model.theta
    tp = cfg["hypcheck.theta_prime"]
    tp = theta / 2 if tp is None else tp
    try:
        gr = mdl.gamma_integrability(model, cfg["hypcheck.t"], theta, tp,
                                     levels=cfg["hypcheck.levels"])
    except (SpdeUniqError, ValueError) as exc:
        out.check(False, f"Gamma_t computation failed: {exc}", 'Hypothesis "Gamma_t integrability"')
        return out
    g = Table("gamma", ["s", "gamma_norm", "gamma_gtilde_norm"], plot=("s", "gamma_norm", True))
    for row in zip(gr.s, gr.gamma_norm, gr.gamma_gtilde_norm):
        g.rows.append(list(row))
    out.tables.append(g)
    out.tables.append(Table("gamma_fit", ["quantity", "slope", "r_squared", "integral", "finite"], [
        ["gamma", gr.fit_gamma.slope, gr.fit_gamma.r_squared, gr.theta_prime_integral,
         gr.theta_prime_finite],
        ["gamma_gtilde", gr.fit_gamma_gtilde.slope, gr.fit_gamma_gtilde.r_squared,
         gr.supercontron_integral, gr.supercontron_finite],
    ]))
    out.check(gr.supercontron_finite and gr.theta_prime_finite,
              f"Gamma_t integrability (slopes {gr.fit_gamma.slope:.3f}, "
              f"{gr.fit_gamma_gtilde.slope:.3f})", 'Hypothesis "Gamma_t integrability"')
    return out


def cmd_simulate(cfg) -> Outcome:
    out = Outcome()
    model = cfg.model()
    n = model.n_max
    ens = eng.simulate_ensemble(model, cfg.drift(), _x0(cfg, model, n), cfg["run.T"],
                                cfg["run.steps"], cfg["run.trajectories"], cfg["run.seed"],
                                noise=cfg["run.noise"], workers=cfg["run.workers"])
    x = ens.states
    cnt = x.shape[0]
    mean = x.mean(axis=0)
    second = (x * x).mean(axis=0)
    se = np.sqrt(np.maximum(second - mean ** 2, 0.0) / max(cnt - 1, 1))
    t = Table("moments", ["time", "mode", "component", "mean", "mean_se", "second_moment"])
    for k, tk in enumerate(ens.times):
        for j in range(n):
            for c in range(model.dim):
                t.rows.append([tk, j + 1, c, mean[k, j, c], se[k, j, c], second[k, j, c]])
    norm = Table("norm", ["time", "mean_sq_norm"], plot=("time", "mean_sq_norm", False))
    for k, tk in enumerate(ens.times):
        norm.rows.append([tk, float(np.sum(second[k]))])
    out.tables += [t, norm]
    out.check(np.all(np.isfinite(x)), "all trajectories finite")
    return out


def cmd_lipschitz(cfg) -> Outcome:
    out = Outcome()
    model = cfg.model()
    drift = cfg.drift()
    t = Table("lipschitz", ["n", "gap", "sup_mean_ratio", "sup_mean_se", "mean_sup_ratio",
                            "pi_moment", "hilbert_schmidt"])
    ratios, sups = [], []
    for n in cfg["lipschitz.n_list"]:
        x1 = _x0(cfg, model, n)
        e = np.zeros_like(x1)
        e[0, 0] = 1.0
        for gap in cfg["lipschitz.gaps"]:
            d = eng.couple_and_measure(model.with_(n_max=max(n, model.n_max)), drift, x1,
                                       x1 + gap * e, cfg["run.T"], cfg["run.steps"],
                                       cfg["run.trajectories"], cfg["run.seed"], n=n,
                                       noise=cfg["run.noise"], workers=cfg["run.workers"])
            k = int(np.argmax(d.delta))
            t.rows.append([n, gap, d.lipschitz_ratio, d.delta_se[k] / d.initial_gap2, d.sup_ratio,
                           d.pi_moment, d.hilbert_schmidt])
            ratios.append(d.lipschitz_ratio)
            sups.append(d.sup_ratio)
    out.tables.append(t)
    fac = cfg["lipschitz.factor"]
    spread = max(ratios) / min(ratios)
    out.check(spread <= fac, f"sup_t E|dX|^2/|dx|^2 spread {spread:.3f} <= {fac}",
              'Theorem "pathwiseuniqueness", estimate "lip-scarsa"')
    if model.noise_hilbert_schmidt:
        s2 = max(sups) / min(sups)
        out.check(s2 <= fac, f"E sup_t |dX|^2/|dx|^2 spread {s2:.3f} <= {fac}",
                  'Theorem "pathwiseuniqueneSS", estimate "lip-forte"')
    return out


def cmd_convergence(cfg) -> Outcome:
    out = Outcome()
    model = cfg.model()
    n_ref = cfg["convergence.n_ref"]
    rows = eng.galerkin_convergence(model.with_(n_max=n_ref), cfg.drift(),
                                    _x0(cfg, model, n_ref), cfg["run.T"],
                                    cfg["convergence.n_list"], n_ref, cfg["run.trajectories"],
                                    cfg["run.seed"], steps=cfg["run.steps"],
                                    noise=cfg["run.noise"], workers=cfg["run.workers"])
    t = Table("convergence", ["n", "sup_mean_err", "sup_mean_se", "mean_sup_err"],
              plot=("n", "sup_mean_err", True))
    for r in rows:
        t.rows.append([r.n, r.sup_mean_err, r.sup_mean_se, r.mean_sup_err])
    out.tables.append(t)
    mx = cfg["convergence.max_ratio"]
    for a, b in zip(rows, rows[1:]):
        ratio = b.sup_mean_err / a.sup_mean_err if a.sup_mean_err > 0 else math.inf
        out.check(ratio < mx, f"n {a.n} -> {b.n}: error ratio {ratio:.3f} < {mx}",
                  'Proposition (Galerkin limits), "supE"')
    return out


def cmd_control(cfg) -> Outcome:
    out = Outcome()
    model = cfg.model()
    tol = cfg["control.tolerance"]
    t_grid = sorted(cfg["control.t_grid"], reverse=True)
    fits = Table("control_fits", ["variant", "slope", "expected", "r_squared"])
    for var in cfg["control.variants"]:
        fit = ctl.energy_scaling(model, t_grid, var, count=cfg["control.modes"])
        exp = ctl.expected_slope(model, var)
        e = Table(f"energy_{var}", ["t", "energy"], plot=("t", "energy", True))
        e.rows = [[a, v] for a, v in zip(fit.abscissae, fit.values)]
        out.tables.append(e)
        fits.rows.append([var, fit.slope, exp, fit.r_squared])
        out.check(abs(fit.slope - exp) <= tol,
                  f"{var} energy slope {fit.slope:.3f} vs {exp:.3f} (tol {tol})",
                  'Theorem "stime_controllo", estimate "stima_energia"')
    out.tables.append(fits)

    n = cfg["control.n"]
    rng = np.random.default_rng(cfg["run.seed"])
    steer = Table("null_steering", ["t", "relative_terminal_norm", "energy"])
    for t in t_grid:
        h = rng.standard_normal((n, 2))
        prob = ctl.ControlProblem(model, n, t, h)
        sig = ctl.build_control(prob)
        y = ctl.integrate_controlled(prob, sig, cfg["control.steps"])
        rel = float(np.linalg.norm(y) / np.linalg.norm(h))
        steer.rows.append([t, rel, sig.energy])
        out.check(rel <= 1e-8, f"null steering at t={t:.4g}: |Y(t)|/|h| = {rel:.2e}",
                  'Theorem "stime_controllo", null controllability')
    out.tables.append(steer)
    return out


def cmd_kolmogorov(cfg) -> Outcome:
    out = Outcome()
    model = cfg.model()
    drift = cfg.drift()
    t = Table("kolmogorov", ["T", "iterations", "contraction", "residual", "M_T"],
              plot=("T", "M_T", True))
    ms = []
    cite = 'Kolmogorov backward equation, bound "stima-n"'
    for T in sorted(cfg["kolmogorov.T_list"], reverse=True):
        try:
            sol = ver.solve_kolmogorov_picard(model, drift, T, half_width=cfg["kolmogorov.half_width"],
                                              points=cfg["kolmogorov.points"],
                                              steps=cfg["kolmogorov.steps"], tol=cfg["kolmogorov.tol"])
        except SpdeUniqError as exc:
            out.check(False, f"T={T}: {exc}", cite)
            continue
        t.rows.append([T, sol.iterations, sol.contraction, sol.residual, sol.m_t])
        ms.append(sol.m_t)
        out.check(sol.residual < cfg["kolmogorov.max_residual"],
                  f"T={T}: re-substitution residual {sol.residual:.2e}", cite)
    out.tables.append(t)
    out.check(len(ms) >= 2 and all(b < a for a, b in zip(ms, ms[1:])),
              "M_T decreases as T is halved", cite)
    return out


def cmd_counterexample(cfg) -> Outcome:
    out = Outcome()
    tol = cfg["counterexample.tol"]
    t = Table("counterexample", ["solution", "max_residual", "max_abs_y", "initial_y",
                                 "initial_y_tau"])
    for sol in ("y1", "y2"):
        r = ver.counterexample_residual(cfg["counterexample.n_tau"], cfg["counterexample.n_xi"], sol)
        t.rows.append([sol, r.max_residual, r.terms["max_abs_y"], r.terms["initial_y"],
                       r.terms["initial_y_tau"]])
        out.check(r.max_residual <= tol, f"{sol} residual {r.max_residual:.2e} <= {tol:g}",
                  'Corollary "Count_det_damped_wave_eq_1"')
    out.tables.append(t)
    return out


def cmd_selftest(cfg) -> Outcome:
    """Fast property checks covering each module."""
    out = Outcome()
    rng = np.random.default_rng(cfg["run.seed"])
    t = Table("selftest", ["check", "value", "passed"])

    def record(name, value, ok, cite=""):
        t.rows.append([name, value, bool(ok)])
        out.check(ok, f"{name}: {value:.3e}", cite)

    mu = rng.uniform(0.5, 1e4, 1000)
    alpha = rng.uniform(0.05, 0.95, 1000)
    rho = rng.uniform(0.3, 3.0, 1000)
    disc = np.abs(rho ** 2 * mu ** (2 * alpha) - 4 * mu) / np.maximum(1, 4 * mu)
    keep = disc > 1e-6
    lp, lm = sc.damped_eigenvalues(mu[keep], rho[keep], alpha[keep])
    s_err = np.max(np.abs(lp + lm + rho[keep] * mu[keep] ** alpha[keep])
                   / (rho[keep] * mu[keep] ** alpha[keep]))
    p_err = np.max(np.abs(lp * lm - mu[keep]) / mu[keep])
    record("vieta relative error", max(s_err, p_err), max(s_err, p_err) < 1e-12)

    model = mdl.SpectralModel(family="damped_wave", alpha=0.4, rho=1.5, n_max=32)
    bs = model.block_set()
    ts, ss = rng.uniform(0, 1, 100), rng.uniform(0, 1, 100)
    err = max(float(np.max(np.abs(bs.semigroup(a) @ bs.semigroup(b) - bs.semigroup(a + b))))
              for a, b in zip(ts, ss))
    record("semigroup law", err, err < 1e-10)

    heat = mdl.SpectralModel(family="heat", alpha=1.0, gamma=0.0, sigma=0.5, n_max=16)
    q = mdl.q_t(heat, 0.3, 16).blocks[:, 0, 0]
    lam = heat.eigenvalues()
    closed = 0.5 * lam ** -(heat.beta + heat.gamma) * (1 - np.exp(-0.6 * lam ** heat.beta))
    e = float(np.max(np.abs(q - closed) / closed))
    record("heat Q_t closed form", e, e < 1e-8)

    cm, phi, _ = ctl.phi_profile(0.7, 3)
    x, w = np.polynomial.legendre.leggauss(20)
    integral = float(np.sum(0.35 * w * phi(0.35 * (x + 1))))
    record("control profile normalisation", abs(integral - 1), abs(integral - 1) < 1e-12)

    r = max(ver.counterexample_residual(64, 64, s).max_residual for s in ("y1", "y2"))
    record("counterexample residual", r, r <= 1e-10, 'Corollary "Count_det_damped_wave_eq_1"')

    again = cfgmod.parse(cfgmod.dump(cfg))
    record("config round trip", 0.0 if again.values == cfg.values else 1.0,
           again.values == cfg.values)
    out.tables.append(t)
    return out


COMMANDS = {
    "hypcheck": cmd_hypcheck,
    "simulate": cmd_simulate,
    "lipschitz": cmd_lipschitz,
    "convergence": cmd_convergence,
    "control": cmd_control,
    "kolmogorov": cmd_kolmogorov,
    "counterexample": cmd_counterexample,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spde-uniq", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="override output.dir")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    return p


def run(subcommand: str, config_path=None, seed=None, out=None, plots=False,
        stream=sys.stdout) -> int:
    try:
        cfg = cfgmod.load(config_path) if config_path else cfgmod.ExperimentConfig()
        if seed is not None:
            cfg.set("run.seed", int(seed))
        if out is not None:
            cfg.set("output.dir", str(out))
        cfg.model()
        cfg.drift()
    except ConfigError as exc:
        print(f"config error: {exc}", file=stream)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        res = COMMANDS[subcommand](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stream)
        return EXIT_CONFIG
    except SpdeUniqError as exc:
        res = Outcome()
        res.check(False, f"{type(exc).__name__}: {exc}")
    outdir = Path(cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{subcommand}.meta.txt").write_text(cfgmod.dump(cfg), encoding="utf-8")
    for tab in res.tables:
        write_csv(outdir / f"{subcommand}_{tab.name}.csv", tab)
        if plots and tab.plot and tab.rows:
            write_svg(outdir / f"{subcommand}_{tab.name}.svg", tab)
    for ok, msg, cite in res.checks:
        tail = f"  [{cite}]" if cite and not ok else ""
        print(f"{'PASS' if ok else 'FAIL'}  {msg}{tail}", file=stream)
    failed = sum(not ok for ok, _, _ in res.checks)
    print(f"{subcommand}: {len(res.checks) - failed}/{len(res.checks)} checks passed "
          f"in {time.perf_counter() - t0:.1f}s; output in {outdir}", file=stream)
    return EXIT_FAIL if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.seed, args.out, args.plots)


if __name__ == "__main__":
    sys.exit(main())
