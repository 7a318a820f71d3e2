"""Command-line front end: ``snlslab {ground-state,simulate,ensemble,verify}``.

Experiments are described by a flat ``key = value`` config file with dotted keys::

    system.kind = rescaled          # deterministic | rescaled | direct
    grid.d = 4
    grid.n = 16
    grid.L = 16
    noise.dt = 0.01                 # Brownian lattice (defaults to run.dt)
    noise.bump_1.amplitude = 0.5
    noise.bump_1.center = 0.5, 0, 0, 0
    noise.bump_1.width = 1.0
    run.T = 1
    run.dt = 0.01
    run.seed = 1
    init.kind = gaussian            # extra init.* keys are passed through
    init.mass = 220
    ground_state.file = gs/ground_state.csv
    ensemble.size = 20

Exit status: 0 on success, 1 on numerical/verification failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dynamics, ground_state as gsm, observables as obs
from .errors import ConvergenceError, PreconditionError, SnlsError, UsageError
from .noise import GaussianBump, NoiseModel, sample_paths
from .spectral import Grid, gradient, laplacian, random_band_limited

__all__ = ["main", "parse_config", "load_config", "simulation_config"]

_BUMP_KEY = re.compile(r"^noise\.bump_(\d+)\.(amplitude|center|width)$")


def _value(text: str):
    text = text.strip()
    if "," in text:
        return [float(p) for p in text.split(",") if p.strip()]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    return text


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` starts a comment) into a dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        out[key] = _value(val)
    return out


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    return parse_config(p.read_text())


def _bumps(cfg: dict) -> list[dict]:
    found: dict[int, dict] = {}
    for key, val in cfg.items():
        m = _BUMP_KEY.match(key)
        if m:
            found.setdefault(int(m.group(1)), {})[m.group(2)] = val
        elif key.startswith("noise.bump_"):
            raise UsageError(f"unknown noise key {key!r}")
    bumps = []
    for k in sorted(found):
        b = found[k]
        missing = {"amplitude", "center", "width"} - set(b)
        if missing:
            raise UsageError(f"noise.bump_{k} lacks {sorted(missing)}")
        c = b["center"]
        b["center"] = [float(x) for x in (c if isinstance(c, list) else [c])]
        bumps.append(b)
    if len(bumps) > 16:
        raise UsageError("at most 16 noise bumps are supported")
    return bumps


def simulation_config(cfg: dict, seed: int | None = None) -> dynamics.SimulationConfig:
    init = {k[len("init."):]: v for k, v in cfg.items() if k.startswith("init.")}
    init.setdefault("kind", "gaussian")
    for key in ("center", "mode"):
        if key in init and not isinstance(init[key], list):
            init[key] = [init[key]]
    bumps = _bumps(cfg)
    d = int(cfg.get("grid.d", 2))
    for b in bumps:
        if len(b["center"]) != d:
            raise UsageError(f"bump center {b['center']} does not have d={d} coordinates")
    sim = dynamics.SimulationConfig(
        system=str(cfg.get("system.kind", "rescaled")),
        d=d,
        n=int(cfg.get("grid.n", 64)),
        L=float(cfg.get("grid.L", 20.0)),
        T=float(cfg.get("run.T", 1.0)),
        dt=float(cfg.get("run.dt", 1e-3)),
        noise_dt=cfg.get("noise.dt"),
        bumps=bumps,
        initial=init,
        seed=int(seed if seed is not None else cfg.get("run.seed", 0)),
        blowup_factor=float(cfg.get("run.blowup_factor", 1e3)),
        cadence=int(cfg.get("run.cadence", 10)),
        dt_cap=float(cfg.get("run.dt_cap", 0.1)),
        flatness_threshold=float(cfg.get("noise.flatness_threshold", 1e-8)),
        ground_state_file=cfg.get("ground_state.file"),
        ground_state_mass=cfg.get("ground_state.mass"),
    )
    return sim


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ground-state ---------------------------------------------------------------

def cmd_ground_state(cfg: dict, out: Path) -> int:
    d = int(cfg.get("grid.d", 4))
    grid = Grid(d, int(cfg.get("grid.n", 64)), float(cfg.get("grid.L", 16.0)))
    tol = float(cfg.get("ground_state.tol", 1e-9))
    if not tol > 0:
        raise UsageError(f"ground_state.tol must be positive, got {tol}")
    method = str(cfg.get("ground_state.method", "flow"))
    init = cfg.get("ground_state.init", "shooting")
    max_iter = int(cfg.get("ground_state.max_iter", 400))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        gs = gsm.solve_ground_state(grid, method, tol, init=init, max_iter=max_iter)
    except ConvergenceError as exc:
        _write_json(out / "ground_state.json", {"status": "failed", "error": str(exc),
                                                "residual": exc.residual, "config": cfg})
        print(f"ground-state: {exc}", file=sys.stderr)
        return 1
    K = obs.kinetic(gs.phi, gs.psi)
    E = obs.energy(gs.phi, gs.psi)
    extra = {"energy": E, "kinetic": K, "tol": tol}
    gsm.save_profile(gs, out / "ground_state.csv", extra)
    meta = {"status": "ok", "d": d, "n": grid.n, "L": grid.L, "method": gs.method, "mass": gs.mass,
            "residual": list(gs.residual), "gn_coefficient": gs.gn_coefficient, "energy": E,
            "kinetic": K, "energy_over_kinetic": E / K, "iterations": gs.iterations,
            "seconds": time.perf_counter() - t0, "config": cfg}
    if d == 4:
        meta["dilation_derivative"] = gsm.dilation_derivative(gs)
        meta["action"] = gsm.action(gs.phi, gs.psi)
    _write_json(out / "ground_state.json", meta)
    rows = [("d", d), ("n", grid.n), ("L", grid.L), ("method", gs.method), ("mass M(phi,psi)", gs.mass),
            ("residual 1", gs.residual[0]), ("residual 2", gs.residual[1]),
            ("gn coefficient", gs.gn_coefficient), ("E/K", E / K), ("iterations", gs.iterations)]
    for name, val in rows:
        print(f"{name:<18} {val:.10g}" if isinstance(val, float) else f"{name:<18} {val}")
    return 0


# simulate / ensemble --------------------------------------------------------

def _ground_state_mass(sim: dynamics.SimulationConfig) -> float | None:
    if sim.ground_state_mass is not None:
        return float(sim.ground_state_mass)
    if sim.ground_state_file:
        p = Path(sim.ground_state_file)
        if not p.is_file():
            raise PreconditionError(f"ground-state file {p} does not exist")
        meta, _ = gsm.load_profile(p)
        return float(meta["mass"])
    return None


def _resolve_initial(sim: dynamics.SimulationConfig, gs_mass: float | None):
    """Turn ``init.mass_fraction`` on a Gaussian into an absolute mass."""
    init = dict(sim.initial)
    if init.get("kind") == "gaussian" and "mass_fraction" in init:
        if gs_mass is None:
            raise PreconditionError("init.mass_fraction needs ground_state.file or ground_state.mass")
        init["mass"] = float(init.pop("mass_fraction")) * gs_mass
    return init


def run_to_dir(sim: dynamics.SimulationConfig, out: Path) -> dict:
    """Run one trajectory and write observables, Brownian paths, checkpoint and metadata."""
    out.mkdir(parents=True, exist_ok=True)
    gs_mass = _ground_state_mass(sim)
    sim.initial = _resolve_initial(sim, gs_mass)
    t0 = time.perf_counter()
    res = dynamics.run_trajectory(sim)
    fitC = obs.fit_gronwall_constant(res.series)
    bounds = None
    if gs_mass is not None and sim.d == 4:
        rep = obs.check_bounds(res.series, gs_mass, fitC)
        bounds = {"threshold_applicable": rep.threshold_applicable,
                  "coercivity_violation": rep.coercivity_violation,
                  "envelope_violation": rep.envelope_violation, "notice": rep.notice}
    res.series.meta.update({"seed": sim.seed, "system": sim.system})
    res.series.to_csv(out / "observables.csv")
    if res.paths is not None and res.paths.N:
        res.paths.to_csv(out / "brownian.csv")
    M = res.series.column("M")
    K = res.series.column("K")
    meta = {
        "seed": sim.seed, "stop_reason": res.stop_reason, "stop_time": res.stop_time,
        "message": res.message, "fitC": fitC, "bounds": bounds,
        "mass_drift": float(np.max(np.abs(M - M[0])) / M[0]) if M[0] > 0 else 0.0,
        "max_K": float(K.max()), "ground_state_mass": gs_mass,
        "blowup_threshold": res.meta["blowup_threshold"], "integrator": res.meta["integrator"],
        "config": sim.to_dict(), "seconds": time.perf_counter() - t0,
    }
    dynamics.save_checkpoint(out / "final.ckpt", res.u, res.v, res.stop_time)
    _write_json(out / "metadata.json", meta)
    return meta


def cmd_simulate(cfg: dict, out: Path, seed: int | None) -> int:
    sim = simulation_config(cfg, seed)
    meta = run_to_dir(sim, out)
    print(f"stop_reason={meta['stop_reason']} stop_time={meta['stop_time']:.6g} "
          f"fitC={meta['fitC']:.3g} mass_drift={meta['mass_drift']:.3g}")
    ok = meta["stop_reason"] != "numeric_failure"
    return 0 if ok else 1


def _ensemble_member(args):
    cfg, seed, out = args
    try:
        return run_to_dir(simulation_config(cfg, seed), Path(out))
    except SnlsError as exc:
        return {"seed": seed, "stop_reason": "numeric_failure", "message": str(exc),
                "fitC": float("nan"), "mass_drift": float("nan"), "max_K": float("nan"), "bounds": None}


def cmd_ensemble(cfg: dict, out: Path, seed: int | None, jobs: int | None) -> int:
    size = int(cfg.get("ensemble.size", 1))
    if size < 1:
        raise UsageError("ensemble.size must be at least 1")
    base = int(seed if seed is not None else cfg.get("run.seed", 0))
    simulation_config(cfg, base)  # surface config errors before launching anything
    jobs = jobs or int(cfg.get("ensemble.jobs", os.cpu_count() or 1))
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, base + i, str(out / f"traj_{i:04d}")) for i in range(size)]
    if jobs == 1 or size == 1:
        results = [_ensemble_member(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ensemble_member, tasks))
    horizon = sum(r["stop_reason"] == "horizon" for r in results)
    failures = sum(r["stop_reason"] == "numeric_failure" for r in results)
    fit = np.array([r["fitC"] for r in results], dtype=float)
    e2 = [r["bounds"]["coercivity_violation"] is None for r in results if r.get("bounds")]
    summary = {
        "size": size, "base_seed": base, "horizon": horizon, "fraction_horizon": horizon / size,
        "numeric_failures": failures,
        "max_mass_drift": float(np.nanmax([r["mass_drift"] for r in results])),
        "max_K": float(np.nanmax([r["max_K"] for r in results])),
        "fitC": {"per_trajectory": fit.tolist(), "max": float(np.nanmax(fit)),
                 "median": float(np.nanmedian(fit)), "min": float(np.nanmin(fit))},
        "coercivity_pass": f"{sum(e2)}/{len(e2)}" if e2 else "n/a",
    }
    with (out / "summary.csv").open("w") as fh:
        fh.write("# snlslab ensemble v1\n")
        fh.write("index,seed,stop_reason,fitC,mass_drift,max_K\n")
        for i, r in enumerate(results):
            fh.write(f"{i},{r['seed']},{r['stop_reason']},{r['fitC']!r},{r['mass_drift']!r},{r['max_K']!r}\n")
    _write_json(out / "summary.json", summary)
    print(f"horizon {horizon}/{size}  max mass drift {summary['max_mass_drift']:.3g}  "
          f"max K {summary['max_K']:.4g}  fitC max {summary['fitC']['max']:.3g}  "
          f"coercivity {summary['coercivity_pass']}")
    return 1 if failures else 0


# verify ---------------------------------------------------------------------

def _suite_spectral(cfg):
    grid = Grid(2, 32, 2 * np.pi)
    x, y = grid.coords()
    f = np.broadcast_to(np.sin(2 * x) * np.cos(3 * y), grid.shape)
    from .spectral import ComplexField

    fld = ComplexField(grid, f)
    err_lap = np.abs(laplacian(fld).values + 13 * f).max()
    gx = gradient(fld)[0].values
    err_grad = np.abs(gx - 2 * np.cos(2 * x) * np.cos(3 * y)).max()
    return max(err_lap, err_grad), 1e-10


def _suite_cancellation(cfg):
    rng = np.random.default_rng(int(cfg.get("verify.seed", 0)))
    worst = 0.0
    for d in (1, 2):
        grid = Grid(d, 64, 32.0)
        model = NoiseModel(grid, [GaussianBump(0.7, (1.0,) * d, 2.0),
                                  GaussianBump(-0.4, (-2.0,) + (0.5,) * (d - 1), 1.5)])
        for _ in range(25):
            y = random_band_limited(grid, rng, 8)
            z = random_band_limited(grid, rng, 8)
            B = rng.normal(size=2)
            raw = obs.raw_energy_rate_terms(y, z, model, B).sum()
            red = obs.energy_rate_rhs(y, z, model, B)
            worst = max(worst, abs(raw - red) / abs(raw))
    return worst, 1e-8


def _suite_gn(cfg):
    path = cfg.get("ground_state.file")
    if not path or not Path(path).is_file():
        raise PreconditionError(f"GN audit needs a ground-state profile; file {path!r} is missing "
                                "(run 'snlslab ground-state' and set ground_state.file)")
    meta, _ = gsm.load_profile(path)
    if int(meta["d"]) != 4:
        raise PreconditionError("GN audit needs a d = 4 ground state")
    gs = gsm.from_profile_file(path, Grid(4, 16, 16.0))
    gs.mass = float(meta["mass"])
    rng = np.random.default_rng(int(cfg.get("verify.seed", 0)))
    worst = -np.inf
    for _ in range(100):
        f = random_band_limited(gs.grid, rng, 3)
        g = random_band_limited(gs.grid, rng, 3)
        worst = max(worst, gsm.gn_ratio(f, g, gs))
    return max(worst - 1.0, 0.0), 1e-6


def _suite_equivalence(cfg):
    bumps = [dict(amplitude=0.6, center=[1.0], width=1.5), dict(amplitude=-0.5, center=[-1.5], width=1.2)]
    init = dict(kind="gaussian", amplitude=1.0, width=2.0)
    paths = sample_paths(2, 1e-3, 200, int(cfg.get("verify.seed", 0)))
    runs = {}
    for system in ("direct", "rescaled"):
        sim = dynamics.SimulationConfig(system=system, d=1, n=128, L=32.0, T=0.2, dt=1e-3,
                                        bumps=bumps, initial=init, cadence=200)
        runs[system] = dynamics.run_trajectory(sim, paths=paths)
    model = dynamics.build_model(sim)
    u, _ = dynamics.to_original(runs["rescaled"].u, runs["rescaled"].v, model, paths.at(0.2))
    from .spectral import l2_norm

    return l2_norm(runs["direct"].u - u) / l2_norm(u), 5e-3


def _suite_conservation(cfg):
    init = dict(kind="gaussian", amplitude=1.0, width=2.0)
    sim = dynamics.SimulationConfig(system="deterministic", d=2, n=64, L=24.0, T=0.2, dt=1e-3,
                                    initial=init, cadence=20)
    res = dynamics.run_trajectory(sim)
    M, E = res.series.column("M"), res.series.column("E")
    return [("mass", np.abs(M - M[0]).max() / M[0], 1e-8),
            ("energy", np.abs(E - E[0]).max() / abs(E[0]), 1e-5)]


SUITES = {
    "spectral": _suite_spectral,
    "cancellation": _suite_cancellation,
    "gn": _suite_gn,
    "equivalence": _suite_equivalence,
    "conservation": _suite_conservation,
}


def cmd_verify(cfg: dict, suites: list[str] | None) -> int:
    names = suites or [s for s in SUITES if s != "gn" or cfg.get("ground_state.file")]
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    ok = True
    for name in names:
        checks = SUITES[name](cfg)
        if isinstance(checks, tuple):
            checks = [(name, *checks)]
        else:
            checks = [(f"{name}.{label}", err, tol) for label, err, tol in checks]
        for label, err, tol in checks:
            passed = bool(err < tol)
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'}  {label:<20} error={err:.3e}  tol={tol:.1e}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snlslab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("ground-state", "simulate", "ensemble", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="flat key = value config file")
        s.add_argument("--out", type=Path, default=Path("."), help="output directory")
        s.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        s.add_argument("--jobs", type=int, help="worker processes for ensembles")
        if name == "verify":
            s.add_argument("--suite", action="append", choices=sorted(SUITES),
                           help="suite to run (repeatable; default all available)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        cfg = load_config(args.config) if args.config else {}
        if args.command == "ground-state":
            return cmd_ground_state(cfg, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.seed)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, args.out, args.seed, args.jobs)
        return cmd_verify(cfg, args.suite)
    except (UsageError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SnlsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
