"""
Run configuration: JSON schema, validation and object builders.

A config is a single JSON object. Unknown keys are rejected everywhere.
Pulse specs are tagged by ``kind``::

    {"kind": "smooth", "c0": 1.0, "c1": .., "a1": .., "phi1": .., "c2": ..,
     "a2": .., "phi2": .., "t_p": 6.0, "n_sym": 3}
    {"kind": "square", "amplitudes": [..], "durations": [..], "n_sym": 3}
    {"kind": "constant", "value": 1.0, "duration": 5.0}
    {"kind": "sinusoid", "offset": .., "amplitude": .., "freq": .., "phase": .., "duration": ..}
    {"kind": "waveform", "path": "pulse.csv"}      # columns t, omega

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .design import DesignProblem, OptimizerSettings, SmoothAnsatz, SquareAnsatz, GATE_TARGETS
from .hamiltonians import IsingModel
from .propagation import log_spaced
from .pulses import Constant, Sinusoid, SmoothPulse, SquarePulseSequence, Waveform


class ConfigError(ValueError):
    """Invalid configuration or input file."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_SMOOTH_KEYS = {"kind": {"const": "smooth"}, "c0": _NUM, "t_p": _POS, "n_sym": _INT1}
for _j in (1, 2, 3):
    _SMOOTH_KEYS.update({f"c{_j}": _NUM, f"a{_j}": _NUM, f"phi{_j}": _NUM})

PULSE_SCHEMAS = {
    "smooth": _obj(_SMOOTH_KEYS, ["kind", "c0", "c1", "a1", "phi1", "c2", "a2", "phi2", "t_p"]),
    "square": _obj({"kind": {"const": "square"},
                    "amplitudes": {"type": "array", "items": _NUM, "minItems": 1},
                    "durations": {"type": "array", "items": _POS, "minItems": 1},
                    "n_sym": _INT1}, ["kind", "amplitudes", "durations"]),
    "constant": _obj({"kind": {"const": "constant"}, "value": _NUM, "duration": _NONNEG},
                     ["kind", "value", "duration"]),
    "sinusoid": _obj({"kind": {"const": "sinusoid"}, "offset": _NUM, "amplitude": _NUM,
                      "freq": _NUM, "phase": _NUM, "duration": _POS}, ["kind", "duration"]),
    "waveform": _obj({"kind": {"const": "waveform"}, "path": {"type": "string"}},
                     ["kind", "path"]),
}

_OPTIMIZER = _obj({
    "tolerance": _POS, "max_iter": _INT1, "n_starts": _INT1, "restarts": {"type": "integer", "minimum": 0},
    "polish": {"type": "boolean"}, "polish_evals": {"type": "integer", "minimum": 0},
    "gate_tolerance": _POS,
})

_DESIGN = _obj({
    "ansatz": {"enum": ["smooth", "square"]},
    "n_peaks": {"enum": [2, 3]},
    "n_segments": _INT1,
    "bounds": {"type": "object", "additionalProperties": _PAIR},
    "n_sym": _INT1,
    "k": {"type": "integer"},
    "target_gate": {"enum": [*GATE_TARGETS, None]},
    "optimizer": _OPTIMIZER,
})

_PROJECTION = {"type": "array", "minItems": 3, "maxItems": 3,
               "items": {"oneOf": [{"type": "string"}, {"type": "array", "items": _NUM}]}}

CONFIG_SCHEMA = _obj({
    "model": _obj({"E1": _NUM, "E2": _NUM, "noise": {"type": "string", "pattern": "^[IXYZ]{2}$"}},
                  ["E1", "E2"]),
    "pulse": {"type": "object", "required": ["kind"],
              "properties": {"kind": {"enum": list(PULSE_SCHEMAS)}}},
    "design": _DESIGN,
    "grid": _obj({"max_product": _POS, "steps": {"type": "integer", "minimum": 2},
                  "coarse_product": _POS}),
    "sweep": _obj({"epsilons": {"type": "array", "items": _POS, "minItems": 2},
                   "lo": _POS, "hi": _POS, "n": {"type": "integer", "minimum": 2}}),
    "trace": _obj({"projections": {"type": "array", "items": _PROJECTION}}),
    "seed": {"type": "integer", "minimum": 0},
    "out": {"type": "string"},
}, ["model"])


@dataclass(frozen=True)
class RunConfig:
    """Validated config with the directory its relative paths refer to."""

    data: dict
    root: Path

    @property
    def sha256(self) -> str:
        return config_hash(self.data)

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))


def config_hash(data: dict) -> str:
    """SHA-256 of the canonical JSON encoding."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(data, root: Path | str = ".") -> RunConfig:
    """Check ``data`` against the schema and the cross-field rules."""
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
        if "pulse" in data:
            jsonschema.validate(data["pulse"], PULSE_SCHEMAS[data["pulse"]["kind"]])
    except jsonschema.ValidationError as err:
        raise ConfigError(f"config error at {_where(err)}: {err.message}") from None
    model = data["model"]
    if model["E1"] == 0 and model["E2"] == 0:
        raise ConfigError("model: E1 and E2 cannot both vanish")
    sweep = data.get("sweep", {})
    if "epsilons" in sweep and ({"lo", "hi", "n"} & set(sweep)):
        raise ConfigError("sweep: give either epsilons or lo/hi/n, not both")
    if "steps" in data.get("grid", {}) and "max_product" in data.get("grid", {}):
        raise ConfigError("grid: give either steps or max_product, not both")
    pulse = data.get("pulse", {})
    if pulse.get("kind") == "square" and len(pulse["amplitudes"]) != len(pulse["durations"]):
        raise ConfigError("pulse: need one duration per amplitude")
    if pulse.get("kind") == "smooth" and any(k in pulse for k in ("c3", "a3", "phi3")) \
            and not all(k in pulse for k in ("c3", "a3", "phi3")):
        raise ConfigError("pulse: a third peak needs c3, a3 and phi3")
    return RunConfig(data, Path(root))


def load(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from None
    return validate(data, path.parent)


# ---------------------------------------------------------------------------
# builders


def build_model(cfg: RunConfig) -> IsingModel:
    m = cfg.data["model"]
    return IsingModel(float(m["E1"]), float(m["E2"]), m.get("noise", "IZ"))


def read_waveform(path) -> Waveform:
    """Waveform from a CSV file with a header row and columns ``t, omega``."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise ConfigError(f"cannot read waveform {path}: {err}") from None
    if not rows or [c.strip() for c in rows[0][:2]] != ["t", "omega"]:
        raise ConfigError(f"waveform {path}: header must start with columns t, omega")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError):
        raise ConfigError(f"waveform {path}: non-numeric or missing entries") from None
    if data.ndim != 2 or len(data) < 2:
        raise ConfigError(f"waveform {path}: need at least two samples")
    try:
        return Waveform(data[:, 0], data[:, 1])
    except ValueError as err:
        raise ConfigError(f"waveform {path}: {err}") from None


@dataclass(frozen=True)
class PulseSpec:
    """A pulse shape with the duration to run it for."""

    shape: object
    duration: float


def build_pulse(cfg: RunConfig) -> PulseSpec:
    if "pulse" not in cfg.data:
        raise ConfigError("this command needs a 'pulse' section")
    p = cfg.data["pulse"]
    kind = p["kind"]
    if kind == "smooth":
        shape = SmoothPulse.from_dict(p)
    elif kind == "square":
        shape = SquarePulseSequence(p["amplitudes"], p["durations"], p.get("n_sym", 1))
    elif kind == "constant":
        return PulseSpec(Constant(float(p["value"])), float(p["duration"]))
    elif kind == "sinusoid":
        shape = Sinusoid(p.get("offset", 0.0), p.get("amplitude", 1.0), p.get("freq", 1.0),
                         p.get("phase", 0.0))
        return PulseSpec(shape, float(p["duration"]))
    else:
        shape = read_waveform(cfg.root / p["path"])
    return PulseSpec(shape, float(shape.duration))


def build_epsilons(cfg: RunConfig, default=(1e-4, 1e-1, 12)) -> np.ndarray:
    s = cfg.section("sweep")
    if "epsilons" in s:
        eps = np.array(s["epsilons"], dtype=float)
    else:
        lo, hi, n = s.get("lo", default[0]), s.get("hi", default[1]), s.get("n", default[2])
        if not hi > lo:
            raise ConfigError("sweep: hi must exceed lo")
        eps = log_spaced(lo, hi, n)
    if math.log10(eps.max() / eps.min()) < 2 - 1e-9:
        raise ConfigError("sweep: noise strengths must span at least two decades")
    return eps


def build_problem(cfg: RunConfig, seed: int | None = None) -> DesignProblem:
    if "design" not in cfg.data:
        raise ConfigError("the design command needs a 'design' section")
    d = cfg.data["design"]
    kind = d.get("ansatz", "smooth")
    bounds = d.get("bounds")
    try:
        if kind == "smooth":
            if "n_segments" in d:
                raise ConfigError("design: n_segments applies to the square ansatz only")
            ansatz = SmoothAnsatz.with_bounds(d.get("n_peaks", 2), bounds)
        else:
            if "n_peaks" in d:
                raise ConfigError("design: n_peaks applies to the smooth ansatz only")
            ansatz = SquareAnsatz.with_bounds(d.get("n_segments", 4), bounds)
        opt = dict(d.get("optimizer", {}))
        opt["seed"] = cfg.seed if seed is None else int(seed)
        grid = cfg.section("grid")
        if "steps" in grid:
            raise ConfigError("design: grid must be set by max_product, not steps")
        extra = {k: grid[k] for k in ("max_product", "coarse_product") if k in grid}
        return DesignProblem(
            build_model(cfg), ansatz, d.get("n_sym", 3), d.get("k", 1),
            d.get("target_gate", "Z1"), OptimizerSettings(**opt),
            epsilons=tuple(build_epsilons(cfg)), **extra,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as err:
        raise ConfigError(f"design: {err}") from None
