"""YAML run configs and channel files.

Run config (``schema: airsum/1``) holds one optional section per command::

    schema: airsum/1
    seed: 0
    sumber:
      users: 2
      snr_db: [0, 4, 8]
      decoders: [fsjd, ldpc-jd]
      target_bits: 100000
      scenarios: [{kind: fixed, theta: 0.0}, {kind: channels, file: two_users.yaml}]
    phase_sweep:          # same keys as sumber, plus a phase grid in radians
      phases: [0.0, 0.7853981633974483, 1.5707963267948966]
    fl:
      modes: [error-free, trace]
      sum_ber: 0.001
    bound:
      mu: 1.0
      ...

Channel file (``schema: airsum-channel/1``)::

    schema: airsum-channel/1
    frame: {data_symbols: 500}      # optional, FrameConfig fields
    max_cfo_hz: 350                 # optional validation bound
    users:
      - taps: [[1.0, 0.0, 0]]       # [gain_re, gain_im, delay_samples]
        time_offset: 0
        cfo_hz: 120.0

Relative file paths resolve against the directory of the referencing file.
Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import fields
from pathlib import Path
from typing import Mapping

import yaml

from .analysis import ConvergenceParams, SweepSpec
from .conv import ConvCode
from .flsim import MODES, DataConfig, FLConfig
from .phy import MAX_CFO_HZ, FrameConfig, UserChannel
from .scenarios import PhaseScenario

SCHEMA = "airsum/1"
CHANNEL_SCHEMA = "airsum-channel/1"
SECTIONS = ("sumber", "phase_sweep", "fl", "bound")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _read_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _check_keys(section: str, got: Mapping, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"{section}: unknown keys {extra}")


def _build(cls, section: str, raw: Mapping, **fixed):
    """Instantiate a dataclass from a mapping, turning validation errors into ConfigError."""
    names = {f.name for f in fields(cls)}
    _check_keys(section, raw, names)
    try:
        return cls(**{**raw, **fixed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def load_channel_file(path) -> tuple[FrameConfig | None, tuple[UserChannel, ...]]:
    doc = _read_yaml(path)
    if doc.get("schema") != CHANNEL_SCHEMA:
        raise ConfigError(f"{path}: expected schema {CHANNEL_SCHEMA!r}")
    _check_keys(str(path), doc, ("schema", "frame", "max_cfo_hz", "users"))
    frame = _build(FrameConfig, f"{path}: frame", doc["frame"]) if "frame" in doc else None
    users = doc.get("users") or []
    if not users:
        raise ConfigError(f"{path}: no users")
    bound = float(doc.get("max_cfo_hz", MAX_CFO_HZ))
    out = []
    for j, u in enumerate(users):
        where = f"{path}: users[{j}]"
        if not isinstance(u, dict):
            raise ConfigError(f"{where}: must be a mapping")
        _check_keys(where, u, ("taps", "time_offset", "cfo_hz"))
        try:
            taps = tuple((complex(float(t[0]), float(t[1])), int(t[2])) for t in u.get("taps", [[1.0, 0.0, 0]]))
            ch = UserChannel(taps, int(u.get("time_offset", 0)), float(u.get("cfo_hz", 0.0)))
            ch.validate(frame or FrameConfig(), max_cfo_hz=bound)
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        out.append(ch)
    return frame, tuple(out)


def _scenario(raw, base: Path, frame: FrameConfig) -> PhaseScenario:
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict):
        raise ConfigError(f"scenario must be a name or mapping, got {raw!r}")
    _check_keys("scenario", raw, ("kind", "theta", "file"))
    if raw.get("kind") == "channels":
        if "file" not in raw:
            raise ConfigError("channels scenario needs a file")
        path = base / raw["file"]
        file_frame, chans = load_channel_file(path)
        if file_frame is not None and file_frame != frame:
            raise ConfigError(f"{path}: frame differs from the run's frame")
        return PhaseScenario("channels", channels=chans, name=Path(raw["file"]).stem)
    if "file" in raw:
        raise ConfigError("file is only valid for the channels scenario")
    try:
        return PhaseScenario(raw.get("kind", "aligned"), float(raw.get("theta", 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _conv(raw) -> ConvCode:
    raw = dict(raw)
    if "generators" in raw:
        # octal strings ("133") or plain integers
        raw["generators"] = tuple(int(g, 8) if isinstance(g, str) else int(g) for g in raw["generators"])
    return _build(ConvCode, "conv", raw)


def sweep_specs(cfg: Mapping, seed: int, base: Path, section: str = "sumber") -> list[SweepSpec]:
    """One SweepSpec per scenario (or per phase for ``phase_sweep``)."""
    raw = dict(cfg.get(section) or {})
    if not raw:
        raise ConfigError(f"missing section {section!r}")
    frame = _build(FrameConfig, f"{section}.frame", raw.pop("frame", {}) or {})
    conv = _conv(raw.pop("conv", {}) or {})
    if section == "phase_sweep":
        if "scenarios" in raw:
            raise ConfigError("phase_sweep takes phases, not scenarios")
        phases = raw.pop("phases", None)
        if not phases:
            raise ConfigError("phase_sweep needs a nonempty phases list")
        scenarios = [PhaseScenario("fixed", float(p)) for p in phases]
    else:
        scen = raw.pop("scenarios", ["aligned"])
        if not scen:
            raise ConfigError("sumber needs at least one scenario")
        scenarios = [_scenario(s, base, frame) for s in scen]
    if "gains" in raw and raw["gains"] is not None:
        raw["gains"] = tuple(float(g) for g in raw["gains"])
    for key in ("snr_db", "decoders"):
        if key in raw:
            if not isinstance(raw[key], (list, tuple)):
                raise ConfigError(f"{section}.{key} must be a list")
            raw[key] = tuple(raw[key])
    if "snr_db" not in raw:
        raise ConfigError(f"{section}.snr_db is required")
    if "seed" in raw:
        raise ConfigError(f"{section}: set the seed at top level or with --seed")
    return [
        _build(SweepSpec, section, raw, scenario=s, frame=frame, conv=conv, seed=seed)
        for s in scenarios
    ]


def fl_configs(cfg: Mapping, seed: int, base: Path) -> list[FLConfig]:
    """One FLConfig per requested channel mode."""
    raw = dict(cfg.get("fl") or {})
    if not raw:
        raise ConfigError("missing section 'fl'")
    modes = raw.pop("modes", [raw.pop("mode", "error-free")])
    if not isinstance(modes, list) or not modes:
        raise ConfigError("fl.modes must be a nonempty list")
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"fl: unknown modes {bad}; choose from {MODES}")
    frame = _build(FrameConfig, "fl.frame", raw.pop("frame", {}) or {})
    data = _build(DataConfig, "fl.data", raw.pop("data", {}) or {})
    if "scenario" in raw:
        raw["scenario"] = _scenario(raw["scenario"], base, frame)
    table = raw.pop("trace_table", None)
    if isinstance(table, str):
        raw["trace_table"] = _read_trace_table(base / table)
    elif table is not None:
        raw["trace_table"] = tuple((float(s), float(b)) for s, b in table)
    if "seed" in raw:
        raise ConfigError("fl: set the seed at top level or with --seed")
    return [_build(FLConfig, "fl", raw, mode=m, frame=frame, data=data, seed=seed) for m in modes]


def _read_trace_table(path) -> tuple[tuple[float, float], ...]:
    """Two-column CSV ``snr_db,sum_ber``; ``#`` comments and a header line allowed."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read trace table {path}: {exc}") from exc
    out = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            out.append((float(parts[0]), float(parts[1])))
        except (ValueError, IndexError):
            if out:
                raise ConfigError(f"{path}: bad row {line!r}") from None
    if not out:
        raise ConfigError(f"{path}: empty trace table")
    return tuple(out)


def bound_params(cfg: Mapping) -> tuple[ConvergenceParams, float]:
    raw = dict(cfg.get("bound") or {})
    if not raw:
        raise ConfigError("missing section 'bound'")
    gap = raw.pop("w0_gap", None)
    if gap is None:
        raise ConfigError("bound.w0_gap is required")
    for key in ("bits", "spans", "alphas"):
        if isinstance(raw.get(key), str):
            raw[key] = float(raw[key])  # allows "inf"
    return _build(ConvergenceParams, "bound", raw), float(gap)


def load_config(path) -> dict:
    doc = _read_yaml(path)
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
    _check_keys(str(path), doc, ("schema", "seed") + SECTIONS)
    return doc


def config_digest(doc: Mapping) -> str:
    """SHA-256 of the canonical JSON form; formatting and key order do not matter."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_seed(doc: Mapping, override: int | None) -> int:
    seed = override if override is not None else doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return seed
