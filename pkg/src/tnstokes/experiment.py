"""Glue between a configuration, the solver stack and the CSV outputs.

CSV schemas (header row first, floats written with ``repr``):

- energy.csv / energy_shifted.csv: ``l, n, t, E``
- point.csv / point_shifted.csv: ``l, n, t, u_x, u_y``
- increments.csv: ``l, n, increment`` with ``||Pi(v^{n+1} - v^n)||^2``
- functional.csv: ``l, n, kind, name, value``
- final_fields.csv: ``l, node, x, y, u_x, u_y`` (P2 nodes)
- diagnostics.csv: ``l, n, energy_residual``
- failures.csv: ``l, message``
- measure.csv: ``kind, sample, weight, E, u_x, u_y``
- field_stats.csv: ``x, y, mean_u_x, mean_u_y, sd_u_x, sd_u_y``
- defect.csv: ``observable, n, N, value, standard_error, bound``
- eoc.csv: ``experiment, p, tau, c_tau, eoc``
- streamlines.csv: ``line_id, seed_id, k, x, y, speed, reason``

``l`` is the 1-based trajectory index.
"""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .assembly import assemble_static
from .config import ExperimentConfig
from .errors import ConfigurationError
from .dynamics import DiscreteState, Stepper, StepperConfig
from .fem import GradientDiscretisation
from .measures import BoundedLipschitz, EnsembleConfig, EnsembleRecord, run_ensemble
from .mesh import build_uniform
from .rheology import RheologyParams
from .solver import NewtonConfig

MANIFEST = "manifest.json"


@dataclass
class Setup:
    cfg: ExperimentConfig
    gd: GradientDiscretisation
    stepper: Stepper
    init: DiscreteState
    stochastic: bool


def build_setup(cfg: ExperimentConfig) -> Setup:
    data = cfg.fields_data()
    gd = GradientDiscretisation(build_uniform(*cfg.mesh))
    g_full = gd.interpolate(data.g, constrained=True)
    forms = assemble_static(gd, data.sigma, g_full, data.F)
    newton = NewtonConfig(abs_tol=cfg.newton["abs_tol"], rel_tol=cfg.newton["rel_tol"],
                          max_iter=int(cfg.newton["max_iter"]))
    scfg = StepperConfig(cfg.tau, cfg.N, RheologyParams(cfg.p, cfg.kappa), newton)
    stepper = Stepper(gd, forms, scfg)
    init = stepper.helmholtz_init(data.v_in)
    stochastic = cfg.stochastic and forms.Bsigma.nnz > 0
    return Setup(cfg, gd, stepper, init, stochastic)


def default_functional(setup: Setup) -> BoundedLipschitz:
    """tanh(||Pi v|| / s) with s = sqrt(2 E0) (or 1 when E0 = 0); sup |f| = 1."""
    s = setup.cfg.functional_scale
    if s is None:
        e0 = setup.stepper.energy(setup.init.v)
        s = float(np.sqrt(2.0 * e0)) if e0 > 0 else 1.0
    return BoundedLipschitz("tanh_norm", np.zeros(setup.gd.dim_X0), s, setup.gd.mass)


def run_configured_ensemble(setup: Setup, L: Optional[int] = None) -> EnsembleRecord:
    cfg = setup.cfg
    funcs = [default_functional(setup)] if "functional" in cfg.observables else []
    ecfg = EnsembleConfig(L=cfg.L if L is None else L, master_seed=cfg.master_seed,
                          threads=cfg.threads, point=cfg.point, strict=cfg.strict)
    return run_ensemble(setup.stepper, setup.init, ecfg, functionals=funcs,
                        stochastic=setup.stochastic)


# ------------------------------------------------------------------ writing
def _f(x) -> str:
    return repr(float(x))


def _write(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, gd=None, extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    mesh = gd.mesh.descriptor() if gd is not None else build_uniform(*cfg.mesh).descriptor()
    doc = {
        "manifest_version": 1,
        "command": command,
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "mesh": mesh,
        "config": cfg.to_dict(),
    }
    if extra:
        doc.update(extra)
    path = out / MANIFEST
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_ensemble(out: Path, ens: EnsembleRecord, gd: GradientDiscretisation) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    tau, N = ens.tau, ens.N
    done = [int(l) for l in ens.indices]
    files = []
    files.append(_write(out / "energy.csv", ["l", "n", "t", "E"],
                        ([l, n, _f(n * tau), _f(ens.energy[i, n])]
                         for i, l in enumerate(done) for n in range(N + 1))))
    files.append(_write(out / "energy_shifted.csv", ["l", "n", "t", "E"],
                        ([l, n, _f((n + 0.5) * tau), _f(ens.energy_half[i, n])]
                         for i, l in enumerate(done) for n in range(N))))
    files.append(_write(out / "point.csv", ["l", "n", "t", "u_x", "u_y"],
                        ([l, n, _f(n * tau), _f(ens.point[i, n, 0]), _f(ens.point[i, n, 1])]
                         for i, l in enumerate(done) for n in range(N + 1))))
    files.append(_write(out / "point_shifted.csv", ["l", "n", "t", "u_x", "u_y"],
                        ([l, n, _f((n + 0.5) * tau), _f(ens.point_half[i, n, 0]),
                          _f(ens.point_half[i, n, 1])]
                         for i, l in enumerate(done) for n in range(N))))
    files.append(_write(out / "increments.csv", ["l", "n", "increment"],
                        ([l, n, _f(ens.increments[i, n])] for i, l in enumerate(done) for n in range(N))))
    rows = []
    for name in sorted(ens.functionals):
        for kind, table in (("integer", ens.functionals), ("shifted", ens.functionals_half)):
            vals = table[name]
            rows.extend([l, n, kind, name, _f(vals[i, n])]
                        for i, l in enumerate(done) for n in range(vals.shape[1]))
    files.append(_write(out / "functional.csv", ["l", "n", "kind", "name", "value"], rows))
    files.append(_write(out / "diagnostics.csv", ["l", "n", "energy_residual"],
                        ([l, n, _f(ens.energy_residual[i, n])] for i, l in enumerate(done) for n in range(N))))
    if ens.final_fields is not None:
        nn = gd.n_nodes
        xy = gd.node_coords
        files.append(_write(out / "final_fields.csv", ["l", "node", "x", "y", "u_x", "u_y"],
                            ([l, k, _f(xy[k, 0]), _f(xy[k, 1]), _f(ens.final_fields[i, k]),
                              _f(ens.final_fields[i, nn + k])]
                             for i, l in enumerate(done) for k in range(nn))))
    files.append(_write(out / "failures.csv", ["l", "message"], ens.failed))
    return files


# ------------------------------------------------------------------ reading
def _read(path: Path):
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


def _grid(rows, value_idx):
    ls = sorted({int(r[0]) for r in rows})
    ns = max(int(r[1]) for r in rows) + 1 if rows else 0
    pos = {l: i for i, l in enumerate(ls)}
    out = np.empty((len(ls), ns) + ((len(value_idx),) if len(value_idx) > 1 else ()))
    for r in rows:
        vals = [float(r[k]) for k in value_idx]
        out[pos[int(r[0])], int(r[1])] = vals if len(vals) > 1 else vals[0]
    return ls, out


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ConfigurationError(f"{directory} has no {MANIFEST}; not a run directory")
    return json.loads(path.read_text())


def read_ensemble(directory) -> EnsembleRecord:
    """Rebuild an EnsembleRecord from the CSVs written by ``write_ensemble``."""
    d = Path(directory)
    man = read_manifest(d)
    cfg = man["config"]
    ls, energy = _grid(_read(d / "energy.csv")[1], [3])
    _, energy_half = _grid(_read(d / "energy_shifted.csv")[1], [3])
    _, point = _grid(_read(d / "point.csv")[1], [3, 4])
    _, point_half = _grid(_read(d / "point_shifted.csv")[1], [3, 4])
    _, incr = _grid(_read(d / "increments.csv")[1], [2])
    _, eres = _grid(_read(d / "diagnostics.csv")[1], [2])
    funcs, funcs_half = {}, {}
    _, frows = _read(d / "functional.csv")
    for name in sorted({r[3] for r in frows}):
        for kind, table in (("integer", funcs), ("shifted", funcs_half)):
            sel = [[r[0], r[1], r[4]] for r in frows if r[3] == name and r[2] == kind]
            table[name] = _grid(sel, [2])[1]
    final = None
    if (d / "final_fields.csv").exists():
        _, rows = _read(d / "final_fields.csv")
        pos = {l: i for i, l in enumerate(ls)}
        nn = max(int(r[1]) for r in rows) + 1
        final = np.empty((len(ls), 2 * nn))
        for r in rows:
            i, k = pos[int(r[0])], int(r[1])
            final[i, k], final[i, nn + k] = float(r[4]), float(r[5])
    _, failed = _read(d / "failures.csv")
    return EnsembleRecord(
        tau=float(cfg["tau"]), N=energy.shape[1] - 1, master_seed=int(cfg["master_seed"]),
        energy=energy, energy_half=energy_half, point=point, point_half=point_half,
        increments=incr, functionals=funcs, functionals_half=funcs_half, energy_residual=eres,
        final_fields=final, failed=[(int(l), m) for l, m in failed], partial=bool(failed),
        indices=np.array(ls))
