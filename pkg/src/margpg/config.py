"""Experiment configuration files, presets and observation CSVs."""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .models import MODELS, make_model
from .samplers import ConfigError, SamplerConfig

_TOP_KEYS = {"name", "description", "model", "model_params", "data", "sampler", "runs", "diagnostics", "out"}
_DIAG_DEFAULTS = {
    "acf_max_lag": 50,
    "histogram_bins": 0,
    "update_frequency": True,
    "update_frequency_t_max": None,
    "store_states": False,
    "filtered": False,
}


class ObservationError(ValueError):
    pass


@dataclass
class RunSpec:
    label: str
    sampler: SamplerConfig


@dataclass
class ExperimentConfig:
    """A validated experiment: model, data source, one or more sampler runs and diagnostics.

    ``data`` is either ``{"simulate": {"theta": {...}, "T": int, "seed": int}}``
    or ``{"csv": path}``. ``runs`` entries override the base ``sampler``
    settings and carry a ``label`` used in output column names.
    """

    raw: dict
    model: str
    model_params: dict
    data: dict
    runs: list[RunSpec]
    diagnostics: dict
    out: str
    base_dir: Path = field(default_factory=Path.cwd)

    def make_model(self):
        return make_model(self.model, **self.model_params)

    def observations(self):
        """``(y, x_true)``; ``x_true`` is None for CSV data."""
        if "csv" in self.data:
            path = Path(self.data["csv"])
            if not path.is_absolute():
                path = self.base_dir / path
            return load_observations(path), None
        sim = self.data["simulate"]
        from .rand import RngStream

        x, y = self.make_model().simulate(sim["theta"], int(sim["T"]), RngStream(int(sim.get("seed", 0))))
        return y, x


def _label(run: dict, i: int) -> str:
    return str(run.get("label") or f"{run.get('method', 'run')}-N{run.get('N', i)}")


def validate_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Check every field of a parsed config; raises `ConfigError` naming the first bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ConfigError(sorted(extra)[0], f"unknown key; valid keys: {', '.join(sorted(_TOP_KEYS))}")
    model = raw.get("model")
    if model not in MODELS:
        raise ConfigError("model", f"unknown model {model!r}; valid models: {', '.join(sorted(MODELS))}")
    params = dict(raw.get("model_params") or {})
    try:
        make_model(model, **params)
    except TypeError as e:
        raise ConfigError("model_params", str(e)) from None

    data = raw.get("data")
    if not isinstance(data, dict) or len(data) != 1 or not ({"csv", "simulate"} & set(data)):
        raise ConfigError("data", 'expected {"csv": path} or {"simulate": {"theta": ..., "T": ..., "seed": ...}}')
    if "simulate" in data:
        sim = data["simulate"]
        bad = set(sim) - {"theta", "T", "seed"}
        if bad:
            raise ConfigError(f"data.simulate.{sorted(bad)[0]}", "unknown key; valid keys: T, seed, theta")
        if not isinstance(sim.get("theta"), dict):
            raise ConfigError("data.simulate.theta", "missing true parameter values")
        if not isinstance(sim.get("T"), int) or sim["T"] < 1:
            raise ConfigError("data.simulate.T", "must be a positive integer")
        T = sim["T"]
    else:
        T = None

    base = dict(raw.get("sampler") or {})
    run_dicts = raw.get("runs") or [{}]
    if not isinstance(run_dicts, list):
        raise ConfigError("runs", "must be a list of sampler overrides")
    runs, labels = [], set()
    for i, r in enumerate(run_dicts):
        r = dict(r)
        merged = {**base, **r}
        label = _label(merged, i)
        merged.pop("label", None)
        if label in labels:
            raise ConfigError(f"runs[{i}].label", f"duplicate run label {label!r}")
        labels.add(label)
        sc = SamplerConfig.from_dict(merged)
        try:
            sc.validate(T)
        except ConfigError as e:
            prefix = "sampler" if len(run_dicts) == 1 and not r else f"runs[{i}]"
            raise ConfigError(f"{prefix}.{e.field}", str(e).split(": ", 1)[-1]) from None
        runs.append(RunSpec(label, sc))

    diag = dict(_DIAG_DEFAULTS)
    d = raw.get("diagnostics") or {}
    extra = set(d) - set(_DIAG_DEFAULTS)
    if extra:
        raise ConfigError(f"diagnostics.{sorted(extra)[0]}", f"unknown key; valid keys: {', '.join(sorted(_DIAG_DEFAULTS))}")
    diag.update(d)
    if int(diag["acf_max_lag"]) < 1:
        raise ConfigError("diagnostics.acf_max_lag", "must be at least 1")
    return ExperimentConfig(
        raw=raw,
        model=model,
        model_params=params,
        data=data,
        runs=runs,
        diagnostics=diag,
        out=str(raw.get("out") or "results"),
        base_dir=base_dir or Path.cwd(),
    )


def parse_json(text: str, source: str = "<config>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(source, f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read, override and validate a JSON config file."""
    path = Path(path)
    raw = parse_json(path.read_text(), str(path))
    for o in overrides:
        apply_override(raw, o)
    return validate_config(raw, base_dir=path.parent)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("margpg.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name: str, overrides=()) -> ExperimentConfig:
    f = resources.files("margpg.presets") / f"{name}.json"
    if not f.is_file():
        raise ConfigError("preset", f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    raw = parse_json(f.read_text(), name)
    for o in overrides:
        apply_override(raw, o)
    return validate_config(raw)


def resolve(spec: str, overrides=()) -> ExperimentConfig:
    """A config file path, or a preset name when no such file exists."""
    if Path(spec).is_file():
        return load_config(spec, overrides)
    return load_preset(spec, overrides)


def apply_override(raw: dict, assignment: str) -> None:
    """Set ``a.b.c=value`` in place; the value is parsed as JSON, falling back to a plain string.

    Integer path components index into lists (``runs.0.N=50``). An override of
    a ``sampler`` key also replaces that key in every run that sets it.
    """
    if "=" not in assignment:
        raise ConfigError("override", f"expected key=value, got {assignment!r}")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node.setdefault(p, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    if len(parts) == 2 and parts[0] == "sampler":
        for r in raw.get("runs") or []:
            if last in r:
                r[last] = copy.deepcopy(value)


def load_observations(path) -> np.ndarray:
    """Read a ``t,y`` CSV with ``t = 1, 2, ..., T``; returns ``y`` as floats.

    Raises
    ------
    ObservationError
        For a missing header, malformed rows, gaps, duplicates or descending ``t``.
    """
    path = Path(path)
    if not path.is_file():
        raise ObservationError(f"{path}: no such observation file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ObservationError(f"{path}: empty file")
    if [c.strip() for c in rows[0]] != ["t", "y"]:
        raise ObservationError(f"{path}: expected header 't,y'")
    if len(rows) == 1:
        raise ObservationError(f"{path}: no observations")
    y = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != 2:
            raise ObservationError(f"{path}:{i}: expected two columns")
        try:
            t = int(r[0])
            v = float(r[1])
        except ValueError:
            raise ObservationError(f"{path}:{i}: malformed row {r!r}") from None
        if t != len(y) + 1:
            if not y:
                what = "t must start at 1, got"
            elif t == len(y):
                what = "duplicate"
            else:
                what = "non-ascending" if t < len(y) else "missing steps before"
            raise ObservationError(f"{path}:{i}: {what} t={t}; expected t={len(y) + 1}")
        if not np.isfinite(v):
            raise ObservationError(f"{path}:{i}: non-finite observation")
        y.append(v)
    return np.array(y)


def write_observations(path, y) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"])
        for t, v in enumerate(np.asarray(y, dtype=float), start=1):
            w.writerow([t, f"{v:.17g}"])
