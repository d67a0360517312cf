"""Experiment configuration: YAML schema, profiles and validation.

Schema (all keys optional; unknown keys are rejected)::

    preset: exp1 | exp2 | custom
    profile: desk | paper
    mesh: 9            # or [nx, ny]
    p: 2.0
    kappa: 0.1
    tau: 0.03125
    T: 1.0             # horizon; N = T / tau must be an integer
    L: 100             # Monte-Carlo sample size
    master_seed: 0
    stochastic: true   # false switches the noise coefficient off
    threads: 1
    strict: true       # fail the ensemble if any trajectory fails
    point: [0.5, 0.75]
    observables: [energy, point, functional]
    functional_scale: null   # scale of tanh(||Pi v|| / scale); default sqrt(2 E0)
    fields:            # custom preset only; each of zero | vortex | force | lid
      v_in: vortex
      sigma: vortex
      g: zero
      F: zero
    newton: {abs_tol: 1.0e-8, rel_tol: 1.0e-8, max_iter: 50}
    streamlines: {h: 0.001, max_steps: 100000, per_line: 100, record_every: 10}
    output: out
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigurationError
from .fem import zero_field
from .presets import PresetFields, cellular_force, lid_indicator, preset_fields, vortex

PROFILES = {
    "desk": {"mesh": [9, 9], "L": 100, "tau": 2.0 ** -5, "T": 1.0},
    "paper": {"mesh": [13, 13], "L": 1000, "tau": 2.0 ** -9, "T": 1.0},
}
PRESETS = ("exp1", "exp2", "custom")
OBSERVABLES = ("energy", "point", "functional")
CUSTOM_FIELDS = ("v_in", "sigma", "g", "F")
FIELD_CHOICES = ("zero", "vortex", "force", "lid")
HORIZON_TOL = 1e-12

_TOP_KEYS = {"preset", "profile", "mesh", "p", "kappa", "tau", "T", "L", "master_seed",
             "stochastic", "threads", "strict", "point", "observables", "functional_scale",
             "fields", "newton", "streamlines", "output"}
_NEWTON_KEYS = {"abs_tol", "rel_tol", "max_iter"}
_STREAM_KEYS = {"h", "max_steps", "per_line", "record_every"}


@dataclass
class ExperimentConfig:
    preset: str = "exp1"
    profile: str = "desk"
    mesh: tuple = (9, 9)
    p: float = 2.0
    kappa: float = 0.1
    tau: float = 2.0 ** -5
    T: float = 1.0
    L: int = 100
    master_seed: int = 0
    stochastic: bool = True
    threads: int = 1
    strict: bool = True
    point: tuple = (0.5, 0.75)
    observables: tuple = OBSERVABLES
    functional_scale: Optional[float] = None
    fields: dict = field(default_factory=dict)
    newton: dict = field(default_factory=lambda: {"abs_tol": 1e-8, "rel_tol": 1e-8, "max_iter": 50})
    streamlines: dict = field(default_factory=lambda: {"h": 1e-3, "max_steps": 100_000,
                                                       "per_line": 100, "record_every": 10})
    output: str = "out"

    @property
    def N(self) -> int:
        return int(round(self.T / self.tau))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mesh"] = list(self.mesh)
        d["point"] = list(self.point)
        d["observables"] = list(self.observables)
        return d

    def science_dict(self) -> dict:
        """Settings that affect results (not output location or thread count)."""
        d = self.to_dict()
        for k in ("output", "threads"):
            d.pop(k)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.science_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def fields_data(self) -> PresetFields:
        """Closed-form data of the configured experiment."""
        if self.preset != "custom":
            return preset_fields(self.preset, self.stochastic)
        makers = {"zero": zero_field, "vortex": vortex, "force": cellular_force, "lid": lid_indicator}
        chosen = {k: self.fields.get(k, "zero") for k in CUSTOM_FIELDS}
        if not self.stochastic:
            chosen["sigma"] = "zero"
        f = {k: makers[v]() for k, v in chosen.items()}
        return PresetFields(f["v_in"], f["sigma"], f["g"], f["F"], chosen["g"] != "zero")


def _mesh_tuple(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (int(value), int(value))
    if isinstance(value, str):
        parts = value.lower().replace("x", " ").replace(",", " ").split()
        return tuple(int(p) for p in parts) * (2 if len(parts) == 1 else 1)
    return tuple(int(v) for v in value)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every invariant and raise one ConfigurationError listing all violations."""
    bad = []
    if cfg.preset not in PRESETS:
        bad.append(f"preset must be one of {PRESETS} (got {cfg.preset!r})")
    if cfg.profile not in PROFILES:
        bad.append(f"profile must be one of {tuple(PROFILES)} (got {cfg.profile!r})")
    if len(cfg.mesh) != 2 or min(cfg.mesh) < 2:
        bad.append(f"mesh needs two vertex counts >= 2 (got {cfg.mesh})")
    if not cfg.p > 1:
        bad.append(f"p must exceed 1 (got {cfg.p})")
    if not cfg.kappa >= 0:
        bad.append(f"kappa must be non-negative (got {cfg.kappa})")
    if not cfg.tau > 0:
        bad.append(f"tau must be positive (got {cfg.tau})")
    elif not cfg.T > 0:
        bad.append(f"horizon T must be positive (got {cfg.T})")
    elif abs(cfg.tau * cfg.N - cfg.T) > HORIZON_TOL or cfg.N < 1:
        bad.append(f"horizon T={cfg.T} is not an integer multiple of tau={cfg.tau}")
    if int(cfg.L) != cfg.L or cfg.L < 1:
        bad.append(f"sample size L must be a positive integer (got {cfg.L})")
    if int(cfg.threads) != cfg.threads or cfg.threads < 1:
        bad.append(f"threads must be a positive integer (got {cfg.threads})")
    if int(cfg.master_seed) != cfg.master_seed or cfg.master_seed < 0:
        bad.append(f"master_seed must be a non-negative integer (got {cfg.master_seed})")
    if len(cfg.point) != 2 or not all(0.0 <= c <= 1.0 for c in cfg.point):
        bad.append(f"point must lie in the unit square (got {cfg.point})")
    unknown = [o for o in cfg.observables if o not in OBSERVABLES]
    if unknown:
        bad.append(f"unknown observables {unknown}; choose from {OBSERVABLES}")
    if cfg.functional_scale is not None and not cfg.functional_scale > 0:
        bad.append("functional_scale must be positive")
    for k, v in cfg.fields.items():
        if k not in CUSTOM_FIELDS:
            bad.append(f"unknown field {k!r}; choose from {CUSTOM_FIELDS}")
        elif v not in FIELD_CHOICES:
            bad.append(f"field {k} must be one of {FIELD_CHOICES} (got {v!r})")
    if cfg.fields and cfg.preset != "custom":
        bad.append("fields may only be set for the custom preset")
    for k in set(cfg.newton) - _NEWTON_KEYS:
        bad.append(f"unknown newton key {k!r}")
    for k in set(cfg.streamlines) - _STREAM_KEYS:
        bad.append(f"unknown streamlines key {k!r}")
    if bad:
        raise ConfigurationError("invalid configuration:\n  - " + "\n  - ".join(bad))
    return cfg


def _parse(text: str, source: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigurationError(f"{source}: parse error at {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{source}: parse error: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    # a run manifest carries its configuration under "config"
    if "manifest_version" in data and isinstance(data.get("config"), dict):
        return data["config"]
    return data


def build_config(values: dict, source: str = "<config>") -> ExperimentConfig:
    """Apply profile defaults, then ``values``; reject unknown keys."""
    values = copy.deepcopy(values)
    unknown = sorted(set(values) - _TOP_KEYS)
    if unknown:
        raise ConfigurationError(f"{source}: unknown keys {unknown}")
    profile = values.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigurationError(f"{source}: profile must be one of {tuple(PROFILES)} (got {profile!r})")
    merged = dict(PROFILES[profile])
    merged.update(values)
    base = ExperimentConfig()
    for k in ("newton", "streamlines"):
        given = merged.get(k) or {}
        if not isinstance(given, dict):
            raise ConfigurationError(f"{source}: {k} must be a mapping")
        unknown_sub = sorted(set(given) - (_NEWTON_KEYS if k == "newton" else _STREAM_KEYS))
        if unknown_sub:
            raise ConfigurationError(f"{source}: unknown {k} keys {unknown_sub}")
        d = dict(getattr(base, k))
        d.update(given)
        merged[k] = d
    try:
        if "mesh" in merged:
            merged["mesh"] = _mesh_tuple(merged["mesh"])
        if "point" in merged:
            merged["point"] = tuple(float(c) for c in merged["point"])
        if "observables" in merged:
            obs = merged["observables"]
            merged["observables"] = (obs,) if isinstance(obs, str) else tuple(obs)
        for k in ("p", "kappa", "tau", "T"):
            if k in merged:
                merged[k] = float(merged[k])
        if merged.get("fields") is None:
            merged["fields"] = {}
        # YAML 1.1 reads "1e-08" (no dot) as a string, so coerce explicitly
        for k in ("abs_tol", "rel_tol"):
            merged["newton"][k] = float(merged["newton"][k])
        merged["newton"]["max_iter"] = int(merged["newton"]["max_iter"])
        merged["streamlines"]["h"] = float(merged["streamlines"]["h"])
        for k in ("max_steps", "per_line", "record_every"):
            merged["streamlines"][k] = int(merged["streamlines"][k])
        if merged.get("functional_scale") is not None:
            merged["functional_scale"] = float(merged["functional_scale"])
        cfg = ExperimentConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    return validate(cfg)


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML config (or run manifest), apply ``overrides`` and validate."""
    values, source = {}, "<defaults>"
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist")
        source = str(path)
        values = _parse(path.read_text(), source)
    values = dict(values)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values, source)
