"""Command-line pipelines: curve construction, case classification, solves,
tradeoff sweeps, bound verification, scaling fits, simulation, and the
full reproduction suite. Every artifact is CSV with a provenance comment
(tool version and config hash); all randomness comes from the config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, accept, asymptotics, bounds, chain, mdp, mincost, model, sim

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run parameters shared by the CLI commands."""

    model: str = ""
    rate: float | None = None  # arrival-rate override (binomial p rescales)
    rho: float | None = None
    beta_grid: str = "1e-1:1e4:40/decade"
    q_max: float | None = None
    tol: float = 1e-9
    seed: int = 0
    out: str = "."
    delta: float | None = None
    tail_ceiling: float = 1e-9
    q_max_cap: float = 131072.0
    horizon: int = 1_000_000
    burn_in: int = 100_000
    beta: float | None = None
    theta: float | None = None
    eps_v: float = 0.02
    s1: float | None = None
    workers: int = 1

    _FIELDS = None  # populated below

    def validated(self) -> "RunConfig":
        if self.rho is not None and not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.rate is not None and self.rate <= 0:
            raise ConfigError("rate must be positive")
        if self.horizon <= 2 * self.burn_in:
            raise ConfigError("horizon must exceed twice burn_in")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta must be positive")
        parse_beta_grid(self.beta_grid)
        return self


RunConfig._FIELDS = set(RunConfig.__dataclass_fields__) - {"_FIELDS"}


def parse_beta_grid(spec: str) -> np.ndarray:
    """Grid spec "lo:hi:N/decade" (log-spaced per decade) or "lo:hi:N"
    (N log-spaced points in total)."""
    try:
        lo_s, hi_s, n_s = spec.split(":")
        lo, hi = float(lo_s), float(hi_s)
        if lo <= 0 or hi <= lo:
            raise ValueError
        if n_s.endswith("/decade"):
            per = int(n_s[: -len("/decade")])
            count = int(round(per * np.log10(hi / lo))) + 1
        else:
            count = int(n_s)
        if count < 2:
            raise ValueError
    except ValueError as exc:
        raise ConfigError(f"bad beta grid spec {spec!r}") from exc
    return np.logspace(np.log10(lo), np.log10(hi), count)


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run config; unknown keys are rejected."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno} column {exc.colno}") from exc
    unknown = set(doc) - RunConfig._FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**doc)
    return cfg.validated()


def save_config(cfg: RunConfig, path) -> None:
    doc = {k: v for k, v in asdict(cfg).items() if k != "_FIELDS"}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def config_hash(cfg: RunConfig) -> str:
    doc = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _provenance(cfg: RunConfig) -> str:
    return f"fadelink {__version__} config_hash={config_hash(cfg)}"


def _load_spec(cfg: RunConfig) -> model.ModelSpec:
    path = Path(cfg.model)
    if not path.exists():
        raise ConfigError("model file not found")
    spec = model.load_model(path)
    if cfg.rate is not None:
        spec = _override_rate(spec, cfg.rate)
    rep = model.validate(spec)
    if not rep.passed:
        raise ConfigError("model invalid: " + "; ".join(rep.violations))
    return spec


def _override_rate(spec: model.ModelSpec, rate: float) -> model.ModelSpec:
    arr = spec.arrival
    if arr.kind != "binomial":
        raise ConfigError("rate override requires binomial arrivals")
    p = rate / arr.n
    if not 0.0 < p < 1.0:
        raise ConfigError(f"rate {rate} not reachable with n={arr.n}")
    from dataclasses import replace

    return replace(spec, arrival=model.binomial_arrivals(arr.n, p))


def _out(cfg: RunConfig, name: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def cmd_mincost(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    curve = mincost.min_power_curve_real(spec) if spec.is_grid else mincost.min_power_curve(spec)
    prov = _provenance(cfg)
    mincost.export_curve_csv(curve, _out(cfg, "mincost_curve.csv"), prov)
    with open(_out(cfg, "mincost_breakpoints.csv"), "w") as f:
        f.write(f"# {prov}\n")
        f.write("rate\n")
        for b in mincost.breakpoints(curve):
            f.write(f"{b!r}\n")
    print(f"wrote mincost_curve.csv ({len(curve.vertices)} vertices)")
    return EXIT_OK


def cmd_classify(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    rate = cfg.rate if cfg.rate is not None else spec.arrival.lam
    curve = mincost.min_power_curve_real(spec) if spec.is_grid else mincost.min_power_curve(spec)
    info = mincost.classify_case(curve, rate)
    mincost.export_case_csv(info, _out(cfg, "case.csv"), _provenance(cfg))
    print(f"case {info.case}: s_l={info.s_l} s_u={info.s_u} m={info.m}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    beta = cfg.beta if cfg.beta is not None else 1.0
    q_max = cfg.q_max if cfg.q_max is not None else max(64.0, 10.0 * spec.arrival.a_max)
    if spec.admission:
        sol = mdp.solve_mdp_u(spec, beta, cfg.theta or 0.0, q_max, tol=cfg.tol)
    else:
        sol = mdp.solve_mdp(spec, beta, q_max, tol=cfg.tol)
    _, dist, avgs = mdp.evaluate_policy(spec, sol.policy)
    chain.export_policy_csv(sol.policy, _out(cfg, "policy.csv"), _provenance(cfg))
    chain.export_pi_csv(dist, _out(cfg, "stationary.csv"), _provenance(cfg))
    print(
        f"g*={sol.g_star!r} residual={sol.residual:.3e} iters={sol.iterations} "
        f"q_bar={avgs.q_bar!r} p_bar={avgs.p_bar!r} tail={dist.tail_mass:.3e}"
    )
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    grid = parse_beta_grid(cfg.beta_grid)
    curve = mdp.sweep_beta(
        spec,
        grid,
        q_max=cfg.q_max,
        tol=cfg.tol,
        tail_ceiling=cfg.tail_ceiling,
        q_max_cap=cfg.q_max_cap,
        workers=cfg.workers,
    )
    mdp.export_curve_csv(curve, _out(cfg, "sweep.csv"), _provenance(cfg))
    print(f"wrote sweep.csv ({len(curve.points)} points)")
    return EXIT_OK


def cmd_sweep_u(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    if cfg.rho is None:
        raise ConfigError("sweep-u requires rho")
    grid = parse_beta_grid(cfg.beta_grid)
    curve = mdp.sweep_u(
        spec,
        cfg.rho,
        grid,
        q_max=cfg.q_max,
        tol=cfg.tol,
        tail_ceiling=cfg.tail_ceiling,
        q_max_cap=cfg.q_max_cap,
    )
    mdp.export_curve_csv(curve, _out(cfg, "sweep_u.csv"), _provenance(cfg))
    print(f"wrote sweep_u.csv ({len(curve.points)} points)")
    return EXIT_OK


def cmd_verify_bounds(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    grid = parse_beta_grid(cfg.beta_grid)
    curve = mdp.sweep_beta(
        spec, grid, q_max=cfg.q_max, tol=cfg.tol, tail_ceiling=cfg.tail_ceiling,
        q_max_cap=cfg.q_max_cap,
    )
    ref = mincost.min_power_curve_real(spec) if spec.is_grid else mincost.min_power_curve(spec)
    rate = spec.arrival.lam
    rows = []
    all_ok = True
    for pt, pol in zip(curve.points, curve.policies):
        kern, dist, avgs = mdp.evaluate_policy(spec, pol)
        s1 = cfg.s1 if cfg.s1 is not None else rate
        geo = bounds.verify_geometric_tail(dist, pol, spec, s1)
        drift = bounds.verify_drift_tail(dist, pol, spec, kernel=kern)
        info = mincost.classify_case(ref, rate)
        conc = bounds.verify_service_concentration(
            dist, pol, spec, ref, info, cfg.eps_v, avgs.p_bar,
            form="linear" if not spec.is_grid else "auto",
        )
        sand = bounds.service_cost_sandwich(dist, pol, spec, ref, avgs.p_bar)
        for rep in (geo, drift, conc):
            rows.append((pt.beta, rep.name, rep.applicable, rep.passed, rep.worst_slack))
            all_ok = all_ok and rep.ok
        rows.append((pt.beta, "sandwich", True, sand.ok, 0.0))
        all_ok = all_ok and sand.ok
    with open(_out(cfg, "bounds.csv"), "w") as f:
        f.write(f"# {_provenance(cfg)}\n")
        f.write("beta,check,applicable,passed,worst_slack\n")
        for beta, name, app, ok, slack in rows:
            f.write(f"{beta!r},{name},{app},{ok},{slack!r}\n")
    print(f"wrote bounds.csv ({len(rows)} checks, all_ok={all_ok})")
    return EXIT_OK if all_ok else EXIT_NUMERICAL


def cmd_fit(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    grid = parse_beta_grid(cfg.beta_grid)
    curve = mdp.sweep_beta(
        spec, grid, q_max=cfg.q_max, tol=cfg.tol, tail_ceiling=cfg.tail_ceiling,
        q_max_cap=cfg.q_max_cap, workers=cfg.workers,
    )
    pts = [(pt.v, pt.q_bar) for pt in curve.points if not pt.flags and pt.v > 0]
    fit = asymptotics.fit_scaling(pts)
    asymptotics.export_fit_csv(fit, _out(cfg, "fit.csv"), _provenance(cfg))
    print(f"class={fit.cls} margin={fit.margin:.2f} decades={fit.decade_count:.2f}")
    return EXIT_OK if fit.cls != "inconclusive" else EXIT_NUMERICAL


def cmd_simulate(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    beta = cfg.beta if cfg.beta is not None else 1.0
    q_max = cfg.q_max if cfg.q_max is not None else max(64.0, 10.0 * spec.arrival.a_max)
    if spec.admission:
        sol = mdp.solve_mdp_u(spec, beta, cfg.theta or 0.0, q_max, tol=cfg.tol)
    else:
        sol = mdp.solve_mdp(spec, beta, q_max, tol=cfg.tol)
    est = sim.simulate(spec, sol.policy, cfg.horizon, cfg.burn_in, cfg.seed)
    with open(_out(cfg, "simulate.csv"), "w") as f:
        f.write(f"# {_provenance(cfg)}\n")
        f.write("q_bar,se_q,p_bar,se_p,s_bar,se_s,delay_direct,se_delay,horizon,burn_in,seed\n")
        f.write(
            f"{est.q_bar!r},{est.se_q!r},{est.p_bar!r},{est.se_p!r},{est.s_bar!r},"
            f"{est.se_s!r},{est.delay_direct!r},{est.se_delay!r},{est.horizon},"
            f"{est.burn_in},{est.seed}\n"
        )
    print(f"q_bar={est.q_bar:.6f} (se {est.se_q:.2e}) p_bar={est.p_bar:.6f} (se {est.se_p:.2e})")
    return EXIT_OK


def cmd_repro_paper(cfg: RunConfig) -> int:
    results = accept.run_all(out_dir=Path(cfg.out), seed=cfg.seed)
    ok = True
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}")
        ok = ok and res.passed
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {
    "mincost": cmd_mincost,
    "classify": cmd_classify,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "sweep-u": cmd_sweep_u,
    "verify-bounds": cmd_verify_bounds,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "repro-paper": cmd_repro_paper,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fadelink", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run config (flags override it)")
    p.add_argument("--model", help="model JSON file")
    p.add_argument("--lambda", dest="rate", type=float, help="arrival rate override")
    p.add_argument("--rho", type=float)
    p.add_argument("--beta-grid", dest="beta_grid")
    p.add_argument("--beta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--qmax", dest="q_max", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str)
    p.add_argument("--delta", type=float)
    p.add_argument("--eps-v", dest="eps_v", type=float)
    p.add_argument("--s1", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        for name in RunConfig._FIELDS:
            val = getattr(args, name, None)
            if val is not None:
                setattr(cfg, name, val)
        cfg = cfg.validated()
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (mdp.SolverError, chain.ChainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
