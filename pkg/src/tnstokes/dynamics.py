"""Helmholtz initialisation, the Crank-Nicolson step and whole trajectories.

The step is solved in the half-step unknown ``w = (v^{n+1} + v^n) / 2``::

    2 M (w - v^n) + tau R(w) - dW (Bsig w + g_noise) - tau F - B^T dpi = 0
    (B w - g_div) orthogonal to mean-zero pressures,  m . dpi = 0

and ``v^{n+1} = 2 w - v^n``, ``pi^{n+1} = pi^n + dpi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledForms, ElementJacobian, _pattern_positions, viscous_residual
from .errors import ConfigurationError, NonConvergenceError, SolverError, StepError
from .fem import FieldExpr, GradientDiscretisation
from .noise import NoisePath
from .rheology import RheologyParams
from .solver import NewtonConfig, SaddleSolver, factorize, newton_solve, saddle_matrix

log = logging.getLogger(__name__)


@dataclass
class DiscreteState:
    v: np.ndarray
    pi: np.ndarray
    n: int = 0
    t: float = 0.0


@dataclass(frozen=True)
class StepperConfig:
    tau: float
    N: int
    rheology: RheologyParams = field(default_factory=RheologyParams)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    check_energy: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"time step must be positive (got {self.tau})")
        if int(self.N) != self.N or self.N < 0:
            raise ConfigurationError(f"step count must be a non-negative integer (got {self.N})")


@dataclass
class StepInfo:
    w: np.ndarray
    dpi: np.ndarray
    newton_iterations: int
    newton_residual: float
    energy_residual: float
    half_div_residual: float
    full_div_residual: float
    dissipation: float


def _project_out(r, m):
    return r - m * (m @ r) / (m @ m)


class Stepper:
    """Operators of one discretised problem, shared by every trajectory."""

    def __init__(self, gd: GradientDiscretisation, forms: AssembledForms, cfg: StepperConfig):
        self.gd, self.forms, self.cfg = gd, forms, cfg
        self.params = cfg.rheology
        self.m = forms.pressure_mean
        self.nv, self.nq = gd.dim_X0, gd.dim_Y
        self.g = forms.g_full if forms.has_boundary_data else None
        self._helmholtz = None
        self._linear_cache = {}
        self._noise_free = forms.Bsigma.nnz == 0 and not np.any(forms.g_noise)
        self._element = ElementJacobian(gd)
        self._build_pattern()

    def _build_pattern(self):
        """Fixed CSC pattern of the step matrix with data slots for each ingredient."""
        f, el, nv = self.forms, self._element, self.nv
        ones = sp.csr_matrix((np.ones(len(el.rows)), (el.rows, el.cols)), shape=(nv, nv))
        A_pat = abs(f.M) + abs(f.Bsigma) + ones
        pattern = saddle_matrix(A_pat, f.B, self.m)
        pattern.sort_indices()
        self._indices, self._indptr = pattern.indices, pattern.indptr
        nnz = pattern.nnz

        def slot(X):
            X = sp.coo_matrix(X)
            pos = _pattern_positions(pattern, X.row, X.col)
            return np.bincount(pos, weights=X.data, minlength=nnz)

        self._base = slot(saddle_matrix(2.0 * f.M, f.B, self.m))
        self._bsig = slot(sp.bmat([[f.Bsigma, None], [None, sp.csr_matrix((self.nq + 1, self.nq + 1))]]))
        self._jpos = el.positions(pattern)
        self._nnz = nnz
        self._shape = pattern.shape

    # ---------------------------------------------------------------- init
    def helmholtz_solver(self) -> SaddleSolver:
        if self._helmholtz is None:
            nt = self.cfg.newton
            self._helmholtz = SaddleSolver(self.forms.M, self.forms.B, self.m, True,
                                           nt.abs_tol, nt.rel_tol)
        return self._helmholtz

    def load(self, v_in: FieldExpr) -> np.ndarray:
        """(v_in, Pi xi) for every free dof."""
        gd = self.gd
        return gd.Pi_free.T @ (gd.W2 @ gd.quad_values(v_in))

    def helmholtz_init(self, v_in: Union[FieldExpr, np.ndarray]) -> DiscreteState:
        """Project ``v_in`` onto the discretely divergence-free velocities."""
        if isinstance(v_in, FieldExpr):
            rhs = self.load(v_in)
        else:
            rhs = self.forms.M @ np.asarray(v_in, dtype=float)
        v0, pi0 = self.helmholtz_solver().solve(rhs, np.zeros(self.nq))
        return DiscreteState(v0, pi0, 0, 0.0)

    # ---------------------------------------------------------------- step
    def _unpack(self, x):
        return x[: self.nv], x[self.nv: self.nv + self.nq], x[-1]

    def residual(self, x, v_n, dW):
        """Residual of the half-step system in ``x = (w, dpi, lambda)``."""
        f, cfg = self.forms, self.cfg
        w, q, lam = self._unpack(x)
        rv = (2.0 * (f.M @ (w - v_n)) + cfg.tau * viscous_residual(self.gd, self.params, w, self.g)
              - dW * (f.Bsigma @ w + f.g_noise) - cfg.tau * f.F_load - f.B.T @ q)
        rq = f.B @ w + lam * self.m - f.g_div
        return np.concatenate([rv, rq, [-(self.m @ q)]])

    def jacobian(self, x, dW) -> sp.csc_matrix:
        """Step matrix with +B^T / +m^T in the pressure columns (see ``_solve``)."""
        local = self._element.local(self.params, x[: self.nv], self.g)
        data = (self._base - dW * self._bsig
                + self.cfg.tau * self._element.scatter(local, self._jpos, self._nnz))
        return sp.csc_matrix((data, self._indices, self._indptr), shape=self._shape)

    def _solve(self, K, r):
        # K carries +B^T / +m^T while the residual uses -B^T dpi and -m.dpi,
        # so the pressure part of the solution changes sign
        d = factorize(K).solve(r)
        d[self.nv: self.nv + self.nq] *= -1.0
        return d

    def _linear_solver(self, dW):
        """Cached LU for p = 2 where the step matrix depends on dW only."""
        key = 0.0 if self._noise_free else dW
        lu = self._linear_cache.get(key)
        if lu is None:
            lu = factorize(self.jacobian(np.zeros(self.nv + self.nq + 1), dW))
            if len(self._linear_cache) > 4:
                self._linear_cache.clear()
            self._linear_cache[key] = lu
        nv, nq = self.nv, self.nq

        def solve(J, r):
            d = lu.solve(r)
            d[nv: nv + nq] *= -1.0
            return d

        return solve

    def step(self, state: DiscreteState, dW: float, guess: Optional[np.ndarray] = None):
        """Advance one time step; returns the new state and a StepInfo."""
        cfg = self.cfg
        v_n = state.v
        x0 = np.zeros(self.nv + self.nq + 1)
        x0[: self.nv] = v_n if guess is None else guess
        if self.params.linear:
            jac, lin = (lambda x: None), self._linear_solver(dW)
        else:
            jac, lin = (lambda x: self.jacobian(x, dW)), self._solve
        try:
            res = newton_solve(lambda x: self.residual(x, v_n, dW), jac, x0, cfg.newton,
                               linear_solve=lin)
        except (NonConvergenceError, SolverError) as exc:
            raise StepError(f"step {state.n + 1} failed: {exc}", state.n + 1, state) from exc
        w, dpi, lam = self._unpack(res.x)
        v_next = 2.0 * w - v_n
        new = DiscreteState(v_next, state.pi + dpi, state.n + 1, (state.n + 1) * cfg.tau)
        info = self._diagnostics(v_n, v_next, w, dpi, dW, res)
        if cfg.check_energy:
            scale = max(1.0, float(v_n @ (self.forms.M @ v_n)))
            bound = 10.0 * max(cfg.newton.abs_tol, cfg.newton.rel_tol * scale)
            if info.energy_residual > bound:
                raise StepError(f"energy identity violated at step {new.n}: "
                                f"{info.energy_residual:.3e} > {bound:.3e}", new.n, state)
        return new, info

    def _diagnostics(self, v_n, v_next, w, dpi, dW, res) -> StepInfo:
        f, tau = self.forms, self.cfg.tau
        Mv = f.M
        visc = float(viscous_residual(self.gd, self.params, w, self.g) @ w)
        e_new = float(v_next @ (Mv @ v_next))
        e_old = float(v_n @ (Mv @ v_n))
        work = 2.0 * tau * float(f.F_load @ w) + 2.0 * dW * float(f.g_noise @ w)
        pressure = 2.0 * float(dpi @ (f.B @ w))
        energy_residual = abs(e_new - e_old + 2.0 * tau * visc - work - pressure)
        half = np.linalg.norm(_project_out(f.B @ w - f.g_div, self.m))
        full = np.linalg.norm(_project_out(f.B @ v_next - f.g_div, self.m))
        return StepInfo(w, dpi, res.iterations, res.residual_norm, energy_residual,
                        float(half), float(full), visc)

    def energy(self, v) -> float:
        return 0.5 * float(v @ (self.forms.M @ v))


Observer = Callable[[str, int, np.ndarray], None]


@dataclass
class TrajectoryRecord:
    """Energies and diagnostics of one trajectory.

    ``energy[n]`` is 0.5 ||Pi v^n||^2 for n = 0..N, ``energy_half[n]`` the same
    for the shifted state (v^{n+1} + v^n)/2, n = 0..N-1.
    """

    tau: float
    energy: np.ndarray
    energy_half: np.ndarray
    energy_residual: np.ndarray
    dissipation: np.ndarray
    newton_iterations: np.ndarray
    half_div_residual: np.ndarray
    full_div_residual: np.ndarray
    final: DiscreteState
    snapshots: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.energy) - 1

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


def run_trajectory(stepper: Stepper, v_in, noise: Optional[NoisePath] = None,
                   observers: Iterable[Observer] = (), N: Optional[int] = None,
                   snapshot_stride: int = 0) -> TrajectoryRecord:
    """Helmholtz-initialise and propagate ``N`` steps (default ``stepper.cfg.N``).

    Each observer is called as ``obs(kind, n, v)`` with kind ``"integer"`` for
    v^n and ``"shifted"`` for (v^{n+1} + v^n)/2, in time order.
    """
    N = stepper.cfg.N if N is None else N
    if noise is None:
        noise = NoisePath.zero(N)
    if noise.N < N:
        raise ConfigurationError(f"noise path has {noise.N} increments, need {N}")
    observers = list(observers)
    state = v_in if isinstance(v_in, DiscreteState) else stepper.helmholtz_init(v_in)
    energy = np.empty(N + 1)
    energy_half = np.empty(N)
    eres = np.empty(N)
    diss = np.empty(N)
    iters = np.empty(N, dtype=np.int64)
    hdiv = np.empty(N)
    fdiv = np.empty(N)
    snaps = {}
    energy[0] = stepper.energy(state.v)
    for obs in observers:
        obs("integer", 0, state.v)
    if snapshot_stride:
        snaps[0] = state.v.copy()
    guess = None
    for n in range(N):
        state, info = stepper.step(state, noise[n + 1], guess)
        guess = info.w
        energy_half[n] = stepper.energy(info.w)
        energy[n + 1] = stepper.energy(state.v)
        eres[n] = info.energy_residual
        diss[n] = info.dissipation
        iters[n] = info.newton_iterations
        hdiv[n] = info.half_div_residual
        fdiv[n] = info.full_div_residual
        for obs in observers:
            obs("shifted", n, info.w)
            obs("integer", n + 1, state.v)
        if snapshot_stride and (n + 1) % snapshot_stride == 0:
            snaps[n + 1] = state.v.copy()
    log.debug("trajectory %d steps, final energy %.6e", N, energy[-1])
    return TrajectoryRecord(stepper.cfg.tau, energy, energy_half, eres, diss, iters,
                            hdiv, fdiv, state, snaps)
