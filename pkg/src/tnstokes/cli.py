"""Command-line entry point: ``tnstokes <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigurationError, TNStokesError
from .experiment import (_f, _write, build_setup, read_ensemble, read_manifest,
                         run_configured_ensemble, write_ensemble, write_manifest)
from .measures import (eoc_table, field_statistics, increment_constant, invariance_defect,
                       occupation_measure, sd_argmax, shifted_mismatch)
from .noise import NoisePath

log = logging.getLogger("tnstokes")


def _float_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if part.startswith("2^"):
            out.append(2.0 ** float(part[2:]))
        else:
            out.append(float(part))
    return out


def _int_list(text):
    return [int(p) for p in text.split(",") if p.strip()]


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="YAML config file or a run manifest.json")
    g.add_argument("--profile", choices=["desk", "paper"])
    g.add_argument("--preset", choices=["exp1", "exp2", "custom"])
    g.add_argument("--p", type=float, help="power-law exponent")
    g.add_argument("--tau", type=lambda s: _float_list(s)[0], help="time step, e.g. 0.03125 or 2^-5")
    g.add_argument("--horizon", type=float, dest="T", help="final time T")
    g.add_argument("--samples", type=int, dest="L", help="Monte-Carlo sample size L")
    g.add_argument("--seed", type=int, dest="master_seed")
    g.add_argument("--mesh", help="vertices per side, e.g. 9 or 9x9")
    g.add_argument("--deterministic", action="store_true", help="switch the noise off")
    g.add_argument("--threads", type=int)
    g.add_argument("--out", dest="output", help="output directory")
    g.add_argument("-v", "--verbose", action="store_true")


def _config(args) -> ExperimentConfig:
    keys = ("profile", "preset", "p", "tau", "T", "L", "master_seed", "mesh", "threads", "output")
    overrides = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "deterministic", False):
        overrides["stochastic"] = False
    return load_config(args.config, overrides)


# ------------------------------------------------------------------ commands
def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output)
    setup = build_setup(cfg)
    st, gd = setup.stepper, setup.gd
    noise = NoisePath(cfg.master_seed, 1, cfg.tau, cfg.N) if setup.stochastic else NoisePath.zero(cfg.N)
    from .dynamics import run_trajectory
    from .measures import PointProbe
    probe = PointProbe(gd, cfg.point)
    pts = {}

    def observe(kind, n, v):
        if kind == "integer":
            pts[n] = probe(v)

    t0 = time.perf_counter()
    rec = run_trajectory(st, setup.init, noise, [observe])
    elapsed = time.perf_counter() - t0
    write_manifest(out, cfg, "simulate", gd)
    _write(out / "energy.csv", ["l", "n", "t", "E"],
           ([1, n, _f(t), _f(e)] for n, (t, e) in enumerate(zip(rec.times, rec.energy))))
    _write(out / "point.csv", ["l", "n", "t", "u_x", "u_y"],
           ([1, n, _f(n * cfg.tau), _f(pts[n][0]), _f(pts[n][1])] for n in range(rec.N + 1)))
    _write(out / "diagnostics.csv",
           ["l", "n", "newton_iterations", "energy_residual", "half_div", "full_div", "dissipation"],
           ([1, n + 1, int(rec.newton_iterations[n]), _f(rec.energy_residual[n]),
             _f(rec.half_div_residual[n]), _f(rec.full_div_residual[n]), _f(rec.dissipation[n])]
            for n in range(rec.N)))
    gd.write_field_csv(out / "final_field.csv", gd.full(rec.final.v, st.forms.g_full))
    print(f"simulate: preset={cfg.preset} p={cfg.p} tau={cfg.tau} N={rec.N} "
          f"stochastic={setup.stochastic} newton_solves={int(rec.newton_iterations.sum())}")
    print(f"  E0={rec.energy[0]:.6e} E_N={rec.energy[-1]:.6e} "
          f"max_energy_residual={rec.energy_residual.max() if rec.N else 0.0:.3e} "
          f"time={elapsed:.2f}s -> {out}")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output)
    setup = build_setup(cfg)
    t0 = time.perf_counter()
    ens = run_configured_ensemble(setup)
    elapsed = time.perf_counter() - t0
    write_manifest(out, cfg, "ensemble", setup.gd,
                   {"partial": ens.partial, "failed": [l for l, _ in ens.failed]})
    write_ensemble(out, ens, setup.gd)
    fin = ens.energy[:, -1]
    se = fin.std(ddof=1) / np.sqrt(ens.L) if ens.L > 1 else 0.0
    print(f"ensemble: preset={cfg.preset} p={cfg.p} tau={cfg.tau} N={ens.N} L={ens.L} "
          f"stochastic={setup.stochastic} failed={len(ens.failed)}")
    print(f"  mean final energy {fin.mean():.6e} (SE {se:.2e}), time={elapsed:.1f}s -> {out}")
    return 0


def _stats_files(run: Path, out: Path, defect_n, defect_N):
    ens = read_ensemble(run)
    man = read_manifest(run)
    from .fem import GradientDiscretisation
    from .mesh import build_uniform
    gd = GradientDiscretisation(build_uniform(*man["config"]["mesh"]))
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for kind in ("integer", "shifted"):
        e = occupation_measure(ens, kind, "energy")
        p = occupation_measure(ens, kind, "point")
        w = 1.0 / (e.N * e.L)
        rows.extend([kind, k, _f(w), _f(e.samples[k]), _f(p.samples[k, 0]), _f(p.samples[k, 1])]
                    for k in range(len(e.samples)))
    _write(out / "measure.csv", ["kind", "sample", "weight", "E", "u_x", "u_y"], rows)

    E = ens.energy
    se = E.std(axis=0, ddof=1) / np.sqrt(ens.L) if ens.L > 1 else np.zeros(E.shape[1])
    _write(out / "energy_stats.csv", ["n", "t", "mean_E", "se_E"],
           ([n, _f(n * ens.tau), _f(E[:, n].mean()), _f(se[n])] for n in range(E.shape[1])))

    if ens.final_fields is not None:
        fs = field_statistics(ens)
        xy = gd.node_coords
        _write(out / "field_stats.csv", ["x", "y", "mean_u_x", "mean_u_y", "sd_u_x", "sd_u_y"],
               ([_f(xy[k, 0]), _f(xy[k, 1]), _f(fs.mean[k, 0]), _f(fs.mean[k, 1]),
                 _f(fs.sd[k, 0]), _f(fs.sd[k, 1])] for k in range(len(xy))))
        where, peak = sd_argmax(fs, gd)
        print(f"  SD peak {peak:.4e} at ({where[0]:.3f}, {where[1]:.3f})")

    drows, mrows = [], []
    names = sorted(ens.functionals)
    N_def = defect_N if defect_N else ens.N - max(defect_n) + 1
    for name in names:
        for n in defect_n:
            if N_def < 1 or N_def + n - 1 > ens.N:
                continue
            d = invariance_defect(ens, name, n, N_def)
            drows.append([name, n, N_def, _f(d.value), _f(d.standard_error), _f(d.bound)])
            m = shifted_mismatch(ens, name, n, N_def)
            mrows.append([name, n, N_def, _f(m.defect), _f(m.standard_error), _f(m.increment_term)])
    _write(out / "defect.csv", ["observable", "n", "N", "value", "standard_error", "bound"], drows)
    _write(out / "mismatch.csv", ["observable", "n", "N", "defect", "standard_error", "increment_term"],
           mrows)
    c = increment_constant(ens)
    _write(out / "increment.csv", ["tau", "N", "c_tau", "standard_error"],
           [[_f(c.tau), c.N, _f(c.value), _f(c.standard_error)]])
    return ens, drows, c


def cmd_stats(args) -> int:
    run = Path(args.run)
    out = Path(args.out) if args.out else run
    ens, drows, c = _stats_files(run, out, _int_list(args.defect_n), args.defect_N)
    print(f"stats: L={ens.L} N={ens.N} tau={ens.tau} increment constant {c.value:.6e} "
          f"(SE {c.standard_error:.2e})")
    for r in drows:
        print(f"  defect {r[0]} n={r[1]} N={r[2]}: {float(r[3]):.3e} "
              f"(SE {float(r[4]):.1e}, bound {float(r[5]):.3e})")
    print(f"  -> {out}")
    return 0


def cmd_eoc(args) -> int:
    runs = [Path(r) for r in args.runs] if args.runs else []
    if not runs:
        cfg0 = _config(args)
        taus = _float_list(args.taus) if args.taus else [cfg0.tau, cfg0.tau / 2, cfg0.tau / 4]
        presets = args.presets.split(",")
        ps = _float_list(args.ps)
        base = Path(cfg0.output) / "runs"
        for preset in presets:
            for p in ps:
                for tau in taus:
                    cfg = load_config(args.config, {**{k: getattr(args, k, None) for k in (
                        "profile", "mesh", "L", "master_seed", "threads", "T")},
                        "preset": preset, "p": p, "tau": tau,
                        "stochastic": False if args.deterministic else None,
                        "output": str(base / f"{preset}_p{p:g}_tau{tau:.6g}")})
                    setup = build_setup(cfg)
                    ens = run_configured_ensemble(setup)
                    write_manifest(Path(cfg.output), cfg, "ensemble", setup.gd)
                    write_ensemble(Path(cfg.output), ens, setup.gd)
                    runs.append(Path(cfg.output))
                    print(f"  ran {cfg.output}")
    groups = {}
    for run in runs:
        c = read_manifest(run)["config"]
        ens = read_ensemble(run)
        groups.setdefault((c["preset"], float(c["p"])), {})[float(c["tau"])] = \
            increment_constant(ens).value
    out = Path(args.output) if args.output else (runs[0].parent if runs else Path("."))
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for (preset, p), vals in sorted(groups.items()):
        for tau, ct, eoc in eoc_table(vals):
            rows.append([preset, _f(p), _f(tau), _f(ct), _f(eoc)])
            print(f"  {preset} p={p:g} tau={tau:.6g} c_tau={ct:.6e} eoc={eoc:.3f}")
    _write(out / "eoc.csv", ["experiment", "p", "tau", "c_tau", "eoc"], rows)
    print(f"eoc -> {out / 'eoc.csv'}")
    return 0


def cmd_streamlines(args) -> int:
    from .fem import GradientDiscretisation
    from .mesh import build_uniform
    from .streamlines import default_seeds, trace, write_streamlines_csv
    run = Path(args.run)
    man = read_manifest(run)
    cfg = load_config(run / "manifest.json")
    ens = read_ensemble(run)
    gd = GradientDiscretisation(build_uniform(*man["config"]["mesh"]))
    fs = field_statistics(ens)
    v_full = np.concatenate([fs.mean[:, 0], fs.mean[:, 1]])
    sl = dict(cfg.streamlines)
    for k in ("h", "max_steps", "per_line", "record_every"):
        if getattr(args, k, None) is not None:
            sl[k] = getattr(args, k)
    seeds, ids = default_seeds(int(sl["per_line"]), cfg.point)
    lines = trace(gd, v_full, seeds, ids, h=float(sl["h"]), max_steps=int(sl["max_steps"]),
                  record_every=int(sl["record_every"]))
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    write_streamlines_csv(out / "streamlines.csv", lines)
    reasons = {}
    for pl in lines:
        reasons[pl.reason] = reasons.get(pl.reason, 0) + 1
    print(f"streamlines: {len(lines)} paths {reasons} -> {out / 'streamlines.csv'}")
    return 0


def cmd_constants(args) -> int:
    from .constants import estimate_constants_p2
    from .fem import GradientDiscretisation
    from .mesh import build_uniform
    cfg = _config(args)
    meshes = [(n, n) for n in _int_list(args.meshes)] if args.meshes else [cfg.mesh]
    rows = []
    for mesh in meshes:
        c = estimate_constants_p2(GradientDiscretisation(build_uniform(*mesh)))
        rows.append([f"{mesh[0]}x{mesh[1]}", _f(c.coercivity), _f(c.coercivity_lower),
                     _f(c.inf_sup), _f(c.inverse)])
        print(f"mesh {mesh[0]}x{mesh[1]}: C_D(2)={c.coercivity:.6f} (lower {c.coercivity_lower:.6f}) "
              f"beta_D(2)={c.inf_sup:.6f} B_D(2)={c.inverse:.6f}")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "constants.csv", ["mesh", "C_D", "C_D_lower", "beta_D", "B_D"], rows)
    return 0


def cmd_validate(args) -> int:
    from .validate import run_battery
    cfg = _config(args)
    results = run_battery(cfg)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"validate: {len(results) - failed}/{len(results)} passed")
    return 1 if failed else 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnstokes", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one trajectory")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="Monte-Carlo ensemble")
    _common(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("stats", help="measures, defects and field statistics of a stored ensemble")
    p.add_argument("run", help="ensemble output directory")
    p.add_argument("--out", help="where to write (default: the run directory)")
    p.add_argument("--defect-n", default="1,4,16", help="shifts n for the invariance defect")
    p.add_argument("--defect-N", type=int, help="averaging length N (default: largest possible)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eoc", help="increment constant and its EOC over tau")
    _common(p)
    p.add_argument("--runs", nargs="*", help="stored ensemble directories (skip the sweep)")
    p.add_argument("--taus", help="comma list, e.g. 2^-5,2^-6,2^-7 (default tau, tau/2, tau/4)")
    p.add_argument("--presets", default="exp1,exp2")
    p.add_argument("--ps", default="1.5,2,3")
    p.set_defaults(func=cmd_eoc)

    p = sub.add_parser("streamlines", help="trace the default 400 seeds through the mean field")
    p.add_argument("run", help="ensemble output directory")
    p.add_argument("--out")
    p.add_argument("--h", type=float)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--per-line", type=int, dest="per_line")
    p.add_argument("--record-every", type=int, dest="record_every")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_streamlines)

    p = sub.add_parser("constants", help="p = 2 coercivity, inf-sup and inverse constants")
    _common(p)
    p.add_argument("--meshes", help="comma list of vertices per side, e.g. 5,9,13")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("validate", help="run the invariant battery")
    _common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def _report(exc: BaseException, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        doc["diagnostics"] = {k: (v if isinstance(v, (int, float, str)) else repr(v))
                              for k, v in diag.items()}
    step = getattr(exc, "step_index", None)
    if step is not None:
        doc["step_index"] = step
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        return _report(exc, 2)
    except TNStokesError as exc:
        return _report(exc, 1)
    except OSError as exc:
        return _report(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
