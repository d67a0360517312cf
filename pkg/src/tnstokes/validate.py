"""Quick invariant battery behind ``tnstokes validate``."""

from __future__ import annotations

import numpy as np

from . import quadrature as qr
from .config import ExperimentConfig
from .constants import schur_min
from .dynamics import run_trajectory
from .experiment import build_setup
from .measures import EnsembleConfig, occupation_measure, run_ensemble
from .noise import NoisePath, standard_normal
from .presets import vortex
from .rheology import RheologyParams, stress, stress_derivative


def _quadrature():
    lam = qr.QUAD_POINTS
    worst = 0.0
    # integral of l1^a l2^b over the reference triangle (area 1/2) is a! b! / (a + b + 2)!
    from math import factorial
    for a in range(6):
        for b in range(6 - a):
            approx = 0.5 * qr.QUAD_WEIGHTS @ (lam[:, 1] ** a * lam[:, 2] ** b)
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            worst = max(worst, abs(approx - exact))
    return worst < 1e-14, f"max degree-5 error {worst:.1e}"


def _mesh(setup):
    a = setup.gd.mesh.signed_areas()
    return bool(np.all(a > 0) and abs(a.sum() - 1.0) < 1e-13), f"area sum {a.sum():.15f}"


def _skew(setup):
    Bs = setup.stepper.forms.Bsigma
    asym = abs(Bs + Bs.T).max() if Bs.nnz else 0.0
    v = np.random.default_rng(0).standard_normal(Bs.shape[0])
    q = abs(v @ (Bs @ v)) / (v @ v)
    return asym < 1e-13 and q < 1e-12, f"max|B+B^T|={asym:.1e}, |v.Bv|/|v|^2={q:.1e}"


def _helmholtz(setup):
    st = setup.stepper
    M = st.forms.M
    v0 = setup.init.v
    again = st.helmholtz_init(v0).v
    d = again - v0
    idem = np.sqrt(d @ (M @ d)) / max(np.sqrt(v0 @ (M @ v0)), 1e-300)
    div = np.linalg.norm(st.forms.B @ v0)
    return idem < 1e-10 and div < 1e-8, f"idempotence {idem:.1e}, divergence {div:.1e}"


def _energy_identity(setup):
    st = setup.stepper
    N = min(4, st.cfg.N)
    noise = NoisePath(setup.cfg.master_seed, 1, st.cfg.tau, N) if setup.stochastic else NoisePath.zero(N)
    rec = run_trajectory(st, setup.init, noise, N=N)
    scale = max(rec.energy[0], 1.0)
    worst = float(rec.energy_residual.max()) / scale
    return worst < 1e-7, f"max relative energy-identity residual {worst:.1e} over {N} steps"


def _rheology(cfg: ExperimentConfig):
    rng = np.random.default_rng(1)
    params = RheologyParams(cfg.p, cfg.kappa)
    worst = 0.0
    h = 1e-5
    for _ in range(100):
        A = rng.standard_normal((2, 2))
        H = rng.standard_normal((2, 2))
        fd = (stress(params, A + h * H) - stress(params, A - h * H)) / (2 * h)
        an = stress_derivative(params, A, H)
        worst = max(worst, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300))
    return worst < 1e-5, f"max relative finite-difference error {worst:.1e}"


def _inf_sup(setup):
    mu, it = schur_min(setup.gd)
    beta = 0.5 * np.sqrt(mu)
    return beta > 0.05, f"beta_D(2)={beta:.6f} ({it} inverse iterations)"


def _noise(cfg):
    path = NoisePath(cfg.master_seed, 3, 1.0, 16)
    iso = [standard_normal(cfg.master_seed, 3, n) for n in range(1, 17)]
    same = np.array_equal(path.increments, np.array(iso))
    other = NoisePath(cfg.master_seed, 4, 1.0, 16)
    return bool(same and not np.array_equal(path.increments, other.increments)), \
        "batched and isolated draws agree; streams differ"


def _presets():
    f = vortex()
    xy = np.random.default_rng(2).random((10_000, 2))
    G = f.grad(xy[:, 0], xy[:, 1])
    div = np.abs(G[:, 0, 0] + G[:, 1, 1]).max()
    return div < 1e-9, f"max |div v_in| at 1e4 points {div:.1e}"


def _measures(setup):
    st = setup.stepper
    ens = run_ensemble(st, setup.init, EnsembleConfig(L=2, master_seed=setup.cfg.master_seed),
                       N=min(4, st.cfg.N), stochastic=setup.stochastic)
    masses = [occupation_measure(ens, k).total_mass for k in ("integer", "shifted")]
    ok = all(abs(m - 1.0) < 1e-12 for m in masses)
    return ok, f"total masses {masses[0]:.15f}, {masses[1]:.15f}"


def run_battery(cfg: ExperimentConfig) -> list[tuple[str, bool, str]]:
    setup = build_setup(cfg)
    checks = [
        ("quadrature", _quadrature),
        ("mesh", lambda: _mesh(setup)),
        ("noise_form_skew", lambda: _skew(setup)),
        ("helmholtz", lambda: _helmholtz(setup)),
        ("energy_identity", lambda: _energy_identity(setup)),
        ("rheology_derivative", lambda: _rheology(cfg)),
        ("inf_sup", lambda: _inf_sup(setup)),
        ("noise_streams", lambda: _noise(cfg)),
        ("preset_divergence", _presets),
        ("measure_mass", lambda: _measures(setup)),
    ]
    out = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
