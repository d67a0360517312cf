"""Monte-Carlo ensembles and the statistics built on them.

An ensemble runs ``L`` independent trajectories that share one Helmholtz
initial state and differ only in their noise path. It keeps low-dimensional
observables of every integer state v^n and shifted state (v^{n+1} + v^n)/2,
never the full fields (except the final one and optional snapshots).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import quadrature as qr
from .dynamics import DiscreteState, Stepper, run_trajectory
from .errors import ConfigurationError, RangeError, TNStokesError
from .fem import GradientDiscretisation
from .mesh import locate_point
from .noise import NoisePath

log = logging.getLogger(__name__)

DEFAULT_POINT = (0.5, 0.75)


class PointProbe:
    """Linear functional returning the reconstructed velocity at a fixed point."""

    def __init__(self, gd: GradientDiscretisation, x=DEFAULT_POINT):
        self.x = tuple(float(c) for c in x)
        tri, lam = locate_point(gd.mesh, self.x)
        phi = qr.p2_values(lam)
        nodes = gd.tri_nodes[tri]
        R = np.zeros((2, gd.n_full))
        R[0, nodes] = phi
        R[1, gd.n_nodes + nodes] = phi
        self.R_full = R
        self.R = R[:, gd.free_dofs]

    def __call__(self, v_free) -> np.ndarray:
        return self.R @ v_free


@dataclass
class BoundedLipschitz:
    """f(v) = tanh(||Pi v - c|| / scale); bounded by 1, Lipschitz with constant 1/scale."""

    name: str
    center: np.ndarray
    scale: float
    M: object = field(repr=False, default=None)
    bound: float = 1.0

    def __call__(self, v_free) -> float:
        d = v_free - self.center
        r = np.sqrt(max(float(d @ (self.M @ d)), 0.0))
        return float(np.tanh(r / self.scale))


@dataclass
class EnsembleConfig:
    L: int
    master_seed: int = 0
    threads: int = 1
    point: tuple = DEFAULT_POINT
    strict: bool = True
    keep_final_fields: bool = True
    snapshot_stride: int = 0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ConfigurationError(f"sample size L must be >= 1 (got {self.L})")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.snapshot_stride < 0:
            raise ConfigurationError("snapshot_stride must be >= 0")


@dataclass
class EnsembleRecord:
    """Per-trajectory observables, indexed ``[l, n]`` with l = 0..L-1.

    ``energy`` and ``point`` cover n = 0..N, the ``*_half`` arrays cover the
    shifted states n = 0..N-1, ``increments[l, n] = ||Pi(v^{n+1} - v^n)||^2``.
    """

    tau: float
    N: int
    master_seed: int
    energy: np.ndarray
    energy_half: np.ndarray
    point: np.ndarray
    point_half: np.ndarray
    increments: np.ndarray
    functionals: Dict[str, np.ndarray]
    functionals_half: Dict[str, np.ndarray]
    energy_residual: np.ndarray
    final_fields: Optional[np.ndarray] = None
    failed: list = field(default_factory=list)
    partial: bool = False
    indices: Optional[np.ndarray] = None   # 1-based trajectory index of each row
    snapshots: dict = field(default_factory=dict)   # {l: {n: full field}} when a stride is set

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(1, self.energy.shape[0] + 1)

    @property
    def L(self) -> int:
        return self.energy.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


@dataclass
class _Trajectory:
    energy: np.ndarray
    energy_half: np.ndarray
    point: np.ndarray
    point_half: np.ndarray
    increments: np.ndarray
    functionals: Dict[str, np.ndarray]
    functionals_half: Dict[str, np.ndarray]
    energy_residual: np.ndarray
    final_full: Optional[np.ndarray]
    snapshots: dict


def _run_one(stepper: Stepper, init: DiscreteState, noise: NoisePath, probe: PointProbe,
             functionals: Sequence[BoundedLipschitz], N: int, keep_final: bool,
             stride: int = 0) -> _Trajectory:
    pts = {"integer": np.empty((N + 1, 2)), "shifted": np.empty((N, 2))}
    fvals = {"integer": {f.name: np.empty(N + 1) for f in functionals},
             "shifted": {f.name: np.empty(N) for f in functionals}}
    incr = np.empty(N)
    last = {}

    def observe(kind, n, v):
        pts[kind][n] = probe(v)
        for f in functionals:
            fvals[kind][f.name][n] = f(v)
        if kind == "integer":
            if n > 0:
                d = v - last["v"]
                incr[n - 1] = float(d @ (stepper.forms.M @ d))
            last["v"] = v

    rec = run_trajectory(stepper, init, noise, [observe], N=N, snapshot_stride=stride)
    g = stepper.forms.g_full
    final = stepper.gd.full(rec.final.v, g) if keep_final else None
    snaps = {n: stepper.gd.full(v, g) for n, v in rec.snapshots.items()}
    return _Trajectory(rec.energy, rec.energy_half, pts["integer"], pts["shifted"], incr,
                       fvals["integer"], fvals["shifted"], rec.energy_residual, final, snaps)


def run_ensemble(stepper: Stepper, v_in, cfg: EnsembleConfig, N: Optional[int] = None,
                 functionals: Sequence[BoundedLipschitz] = (), stochastic: bool = True) -> EnsembleRecord:
    """Run ``cfg.L`` trajectories; trajectory ``l`` uses noise stream ``l + 1``.

    Results are keyed by trajectory index, so they do not depend on
    ``cfg.threads`` or on completion order.
    """
    N = stepper.cfg.N if N is None else N
    tau = stepper.cfg.tau
    init = v_in if isinstance(v_in, DiscreteState) else stepper.helmholtz_init(v_in)
    probe = PointProbe(stepper.gd, cfg.point)

    def task(ell):
        noise = NoisePath(cfg.master_seed, ell + 1, tau, N) if stochastic else NoisePath.zero(N)
        try:
            return _run_one(stepper, init, noise, probe, functionals, N, cfg.keep_final_fields,
                            cfg.snapshot_stride)
        except TNStokesError as exc:
            log.warning("trajectory %d failed: %s", ell + 1, exc)
            return exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(task, range(cfg.L)))
    else:
        results = [task(ell) for ell in range(cfg.L)]

    failed = [(ell + 1, str(r)) for ell, r in enumerate(results) if isinstance(r, Exception)]
    if failed and cfg.strict:
        first = next(r for r in results if isinstance(r, Exception))
        raise TNStokesError(f"{len(failed)} of {cfg.L} trajectories failed; first: {first}") from first
    ok = [r for r in results if not isinstance(r, Exception)]
    if not ok:
        raise TNStokesError("every trajectory failed")
    names = [f.name for f in functionals]
    return EnsembleRecord(
        tau=tau, N=N, master_seed=cfg.master_seed,
        energy=np.array([r.energy for r in ok]),
        energy_half=np.array([r.energy_half for r in ok]),
        point=np.array([r.point for r in ok]),
        point_half=np.array([r.point_half for r in ok]),
        increments=np.array([r.increments for r in ok]),
        functionals={k: np.array([r.functionals[k] for r in ok]) for k in names},
        functionals_half={k: np.array([r.functionals_half[k] for r in ok]) for k in names},
        energy_residual=np.array([r.energy_residual for r in ok]),
        final_fields=np.array([r.final_full for r in ok]) if cfg.keep_final_fields else None,
        failed=failed, partial=bool(failed),
        indices=np.array([ell + 1 for ell, r in enumerate(results) if not isinstance(r, Exception)]),
        snapshots={ell + 1: r.snapshots for ell, r in enumerate(results)
                   if not isinstance(r, Exception) and r.snapshots},
    )


# ------------------------------------------------------------ occupation measures
@dataclass
class OccupationMeasure:
    """Uniformly weighted samples of an observable over n = 0..N-1 and all trajectories."""

    kind: str
    observable: str
    samples: np.ndarray
    N: int
    L: int

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.samples), 1.0 / (self.N * self.L))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def mass(self, predicate: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.weights @ np.asarray(predicate(self.samples), dtype=float))

    def mass_in(self, lo: float, hi: float) -> float:
        """Mass of [lo, hi) for scalar observables."""
        s = self.samples.reshape(len(self.samples), -1)[:, 0]
        return float(self.weights @ ((s >= lo) & (s < hi)))

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples.reshape(len(self.samples), -1)

    def histogram(self, bins=50, range=None):
        s = self.samples.reshape(len(self.samples), -1)[:, 0]
        return np.histogram(s, bins=bins, range=range, weights=self.weights)


def _observable_series(ens: EnsembleRecord, kind: str, observable: str) -> np.ndarray:
    shifted = kind == "shifted"
    if kind not in ("integer", "shifted"):
        raise ConfigurationError(f"measure kind must be 'integer' or 'shifted' (got {kind!r})")
    if observable == "energy":
        return ens.energy_half if shifted else ens.energy
    if observable == "point":
        return ens.point_half if shifted else ens.point
    table = ens.functionals_half if shifted else ens.functionals
    if observable in table:
        return table[observable]
    raise ConfigurationError(f"unknown observable {observable!r}")


def occupation_measure(ens: EnsembleRecord, kind: str, observable: str = "energy",
                       N: Optional[int] = None) -> OccupationMeasure:
    """Empirical version of the time-averaged law over the first ``N`` (shifted) states."""
    N = ens.N if N is None else N
    series = _observable_series(ens, kind, observable)
    if N < 1 or N > series.shape[1]:
        raise RangeError(f"N={N} outside 1..{series.shape[1]}")
    samples = series[:, :N]
    samples = samples.reshape((ens.L * N,) + samples.shape[2:])
    return OccupationMeasure(kind, observable, samples, N, ens.L)


# ------------------------------------------------------------- invariance defect
@dataclass
class DefectEstimate:
    value: float
    standard_error: float
    bound: float
    n: int
    N: int

    def within_bound(self, k_se: float = 3.0) -> bool:
        return self.value <= self.bound + k_se * self.standard_error


def invariance_defect(ens: EnsembleRecord, observable: str, n: int, N: int,
                      sup_f: float = 1.0) -> DefectEstimate:
    """Semigroup defect of the integer occupation measure for a test functional.

    ``<P^n f, mu^N> - <f, mu^N>`` is estimated with the index shift
    ``E f(v^{n+k}) = <P^n f, law(v^k)>``, i.e.
    ``|1/N sum_k (mean f(v^{n+k}) - mean f(v^k))|``. The bound is ``2 sup|f| n / N``.
    """
    series = _observable_series(ens, "integer", observable)
    if n < 0 or N < 1:
        raise RangeError("need n >= 0 and N >= 1")
    if N + n - 1 > ens.N:
        raise RangeError(f"defect(n={n}, N={N}) needs {N + n - 1} steps, ensemble has {ens.N}")
    per_traj = (series[:, n:n + N] - series[:, :N]).mean(axis=1)
    value = abs(float(per_traj.mean()))
    se = float(per_traj.std(ddof=1) / np.sqrt(ens.L)) if ens.L > 1 else 0.0
    return DefectEstimate(value, se, 2.0 * sup_f * n / N, n, N)


@dataclass
class MismatchEstimate:
    defect: float
    standard_error: float
    increment_term: float
    n: int
    N: int


def shifted_mismatch(ens: EnsembleRecord, observable: str, n: int, N: int) -> MismatchEstimate:
    """Both sides of the shifted-measure invariance mismatch (reported, not asserted).

    The defect uses ``f(v^{n+k})`` as the index-shift proxy for ``P^n f`` at
    the shifted state of step k; the increment term is
    ``n/N + sqrt(E 1/N sum ||Pi v^{k+1/2} - Pi v^k||^2)``.
    """
    integer = _observable_series(ens, "integer", observable)
    shifted = _observable_series(ens, "shifted", observable)
    if N + n - 1 > ens.N or N > ens.N:
        raise RangeError("not enough steps for the requested (n, N)")
    per_traj = (integer[:, n:n + N] - shifted[:, :N]).mean(axis=1)
    se = float(per_traj.std(ddof=1) / np.sqrt(ens.L)) if ens.L > 1 else 0.0
    half_gap = 0.25 * ens.increments[:, :N].mean(axis=1).mean()
    return MismatchEstimate(abs(float(per_traj.mean())), se, n / N + float(np.sqrt(half_gap)), n, N)


# ------------------------------------------------------------ increment constant
@dataclass
class IncrementEstimate:
    value: float
    standard_error: float
    N: int
    tau: float


def increment_constant(ens: EnsembleRecord, N: Optional[int] = None) -> IncrementEstimate:
    """(1/N) sum_l E ||Pi v^{l+1} - Pi v^l||^2 with its Monte-Carlo standard error."""
    N = ens.N if N is None else N
    if N < 1 or N > ens.N:
        raise RangeError(f"N={N} outside 1..{ens.N}")
    per_traj = ens.increments[:, :N].mean(axis=1)
    se = float(per_traj.std(ddof=1) / np.sqrt(ens.L)) if ens.L > 1 else 0.0
    return IncrementEstimate(float(per_traj.mean()), se, N, ens.tau)


def eoc_table(values: Dict[float, float]) -> list:
    """Rows (tau, c_tau, eoc) with eoc = log2(c(2 tau) / c(tau)); NaN for the coarsest tau."""
    taus = sorted(values, reverse=True)
    rows = []
    for k, tau in enumerate(taus):
        eoc = float("nan")
        if k > 0 and np.isclose(taus[k - 1], 2 * tau):
            eoc = float(np.log2(values[taus[k - 1]] / values[tau]))
        rows.append((tau, values[tau], eoc))
    return rows


# ------------------------------------------------------------- field statistics
@dataclass
class FieldStatistics:
    mean: np.ndarray   # (n_nodes, 2)
    sd: np.ndarray     # (n_nodes, 2)
    L: int


def field_statistics(fields: np.ndarray, gd: Optional[GradientDiscretisation] = None) -> FieldStatistics:
    """Nodewise mean and sample standard deviation over trajectories.

    ``fields`` is either an EnsembleRecord or an (L, n_full) array of full P2
    coefficient vectors (component-blocked).
    """
    if isinstance(fields, EnsembleRecord):
        if fields.final_fields is None:
            raise ConfigurationError("ensemble was run without keeping final fields")
        fields = fields.final_fields
    fields = np.asarray(fields, dtype=float)
    L, n_full = fields.shape
    nn = n_full // 2
    nodal = np.stack([fields[:, :nn], fields[:, nn:]], axis=-1)   # (L, nn, 2)
    mean = nodal.mean(axis=0)
    # shifting by the first sample keeps identical samples at exactly zero spread
    sd = (nodal - nodal[0]).std(axis=0, ddof=1) if L > 1 else np.zeros_like(mean)
    return FieldStatistics(mean, sd, L)


def sd_argmax(stats: FieldStatistics, gd: GradientDiscretisation):
    """Node coordinates where the SD magnitude peaks."""
    mag = np.hypot(stats.sd[:, 0], stats.sd[:, 1])
    k = int(np.argmax(mag))
    return gd.node_coords[k], float(mag[k])
