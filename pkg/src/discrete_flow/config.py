"""Experiment configuration: strict JSON with explicit seeds."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import DenseDistribution, Schedule, StateSpace, make_uniform, point_mass
from .exceptions import ConfigError, DiscreteFlowError
from .paths import MixturePath, TargetModel, check_tau

REQUIRED = ("vocab_size", "dim", "tau", "seed")
SWEEP_KEYS = {"taus", "ns", "seeds"}


@dataclass(frozen=True)
class ExperimentConfig:
    vocab_size: int
    dim: int
    tau: float
    seed: int
    schedule: dict = field(default_factory=lambda: {"kind": "linear"})
    target: object = "uniform"
    n_samples: int = 10_000
    n_time_bins: int = 8
    clamp: tuple = (1e-3, 20.0)
    n_trajectories: int = 20_000
    n_intervals: int = 8
    out_dir: str = "out"
    sweep: dict | None = None

    def to_json(self) -> dict:
        """Resolved config as embedded in outputs; out_dir is left out so payloads do not depend on it."""
        out = asdict(self)
        out["clamp"] = list(self.clamp)
        del out["out_dir"]
        return out

    # -- derived objects -----------------------------------------------------
    @property
    def space(self) -> StateSpace:
        return StateSpace(self.vocab_size, self.dim)

    @property
    def path(self) -> MixturePath:
        return MixturePath(self.space, Schedule.from_dict(self.schedule))

    def target_model(self) -> TargetModel:
        return TargetModel(_parse_target(self.target, self.space))


def _int(obj: dict, key: str, lo: int, hi: int | None = None) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo or (hi is not None and v > hi):
        bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
        raise ConfigError(f"{key} must be an integer {bound}, got {v!r}")
    return v


def _num(obj: dict, key: str) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number, got {v!r}")
    return float(v)


def _parse_target(spec, space: StateSpace) -> DenseDistribution:
    """'uniform', 'point:<flat index>', an inline mass list, or a JSON distribution file."""
    try:
        if isinstance(spec, list):
            mass = np.asarray(spec, dtype=float)
            if mass.shape != (space.n_states,):
                raise ConfigError(f"inline target needs {space.n_states} entries, got {mass.size}")
            return DenseDistribution(space, mass)
        if not isinstance(spec, str):
            raise ConfigError(f"target must be a string or a list, got {type(spec).__name__}")
        if spec == "uniform":
            return make_uniform(space)
        if spec.startswith("point:"):
            idx = int(spec.split(":", 1)[1])
            if not 0 <= idx < space.n_states:
                raise ConfigError(f"point target index {idx} outside [0, {space.n_states})")
            return point_mass(space, idx)
        dist = DenseDistribution.load(spec)
    except ConfigError:
        raise
    except OSError:
        raise
    except (DiscreteFlowError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid target {spec!r}: {exc}") from exc
    if dist.space != space:
        raise ConfigError(f"target file {spec} is for space {dist.space}, config has {space}")
    return dist


def parse_config(obj: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate every field before anything runs; unknown keys are rejected."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED if k not in obj]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    vals = dict(obj)
    vals["vocab_size"] = _int(obj, "vocab_size", 2)
    vals["dim"] = _int(obj, "dim", 1)
    vals["seed"] = _int(obj, "seed", 0, 2**64 - 1)
    vals["tau"] = _num(obj, "tau")
    try:
        check_tau(vals["tau"])
        StateSpace(vals["vocab_size"], vals["dim"])
        if "schedule" in obj:
            sch = obj["schedule"]
            if not isinstance(sch, dict) or "kind" not in sch or set(sch) - {"kind", "s"}:
                raise ConfigError("schedule must be an object {kind[, s]}")
            vals["schedule"] = Schedule.from_dict(sch).to_dict()
    except (DiscreteFlowError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for key in ("n_samples", "n_time_bins", "n_trajectories", "n_intervals"):
        if key in obj:
            vals[key] = _int(obj, key, 1)
    if "clamp" in obj:
        c = obj["clamp"]
        if not isinstance(c, list) or len(c) != 2:
            raise ConfigError("clamp must be a list [u_min, u_max]")
        lo, hi = _num({"clamp[0]": c[0]}, "clamp[0]"), _num({"clamp[1]": c[1]}, "clamp[1]")
        if not 0 < lo <= hi:
            raise ConfigError(f"clamp must satisfy 0 < u_min <= u_max, got {c}")
        vals["clamp"] = (lo, hi)
    if "out_dir" in obj and not isinstance(obj["out_dir"], str):
        raise ConfigError("out_dir must be a string")
    if "sweep" in obj and obj["sweep"] is not None:
        vals["sweep"] = _parse_sweep(obj["sweep"])
    tgt = obj.get("target", "uniform")
    if isinstance(tgt, str) and tgt != "uniform" and not tgt.startswith("point:"):
        file = Path(tgt)
        if base_dir is not None and not file.is_absolute():
            vals["target"] = str(base_dir / file)
    cfg = ExperimentConfig(**vals)
    cfg.target_model()
    return cfg


def _parse_sweep(sw) -> dict:
    if not isinstance(sw, dict):
        raise ConfigError("sweep must be an object")
    unknown = sorted(set(sw) - SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")
    out = {}
    for key in ("taus", "ns", "seeds"):
        v = sw.get(key, [])
        if not isinstance(v, list):
            raise ConfigError(f"sweep.{key} must be a list")
        out[key] = v
    for tau in out["taus"]:
        try:
            check_tau(_num({"tau": tau}, "tau"))
        except DiscreteFlowError as exc:
            raise ConfigError(f"sweep tau: {exc}") from exc
    for key in ("ns", "seeds"):
        for v in out[key]:
            _int({key: v}, key, 0 if key == "seeds" else 1)
    return out


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config; I/O failures surface as OSError."""
    path = Path(path)
    text = path.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(obj, path.parent)
