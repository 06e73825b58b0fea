"""Experiment configuration: INI text with a small value grammar.

Values:

* numbers and words as written (``p = 1``, ``family = two-point``);
* lists separated by spaces or commas (``b = 0.25 1``);
* grids ``geom LO HI COUNT`` (geometric) and ``lin LO HI COUNT`` (uniform).

Unknown sections or keys are errors, reported with the line they sit on.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import asdict, dataclass, replace

import numpy as np

from .models import IncrementModel, ModelError

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "parse_grid", "format_config"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name:
            where.append(field_name)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field_name


def parse_grid(text: str) -> tuple:
    """Parse a list or a ``geom``/``lin`` grid into a tuple of floats."""
    parts = [t for t in re.split(r"[\s,]+", text.strip()) if t]
    if not parts:
        return ()
    if parts[0] in ("geom", "lin"):
        if len(parts) != 4:
            raise ValueError(f"{parts[0]} grid needs LO HI COUNT")
        lo, hi, count = float(parts[1]), float(parts[2]), int(parts[3])
        if count < 1:
            raise ValueError("grid count must be positive")
        if parts[0] == "geom":
            if lo <= 0 or hi <= 0:
                raise ValueError("geometric grid needs positive ends")
            return tuple(np.geomspace(lo, hi, count).tolist())
        return tuple(np.linspace(lo, hi, count).tolist())
    return tuple(float(t) for t in parts)


def _fmt_list(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "two-point"
    params: tuple = (0.3,)
    p: float = 1.0
    seed: int = 1
    out: str = "busyldp-out"
    format: str = "csv"
    start: str = "zero"
    oracle: bool = True
    solver_m: int = 400
    w1_cycles: int = 10_000_000
    w1_levels: tuple = tuple(np.geomspace(2.0, 3000.0, 16).tolist())
    w1_oracle_levels: tuple = tuple(np.geomspace(1e3, 4e5, 13).tolist())
    oracle_K: int = 2000
    vbar_replications: int = 500_000
    vbar_b: tuple = (0.25, 1.0)
    vbar_bn: tuple = (25.0, 50.0, 100.0, 200.0, 400.0)
    vbar_warmup: int | None = None
    findim_times: tuple = (0.5, 1.0)
    findim_thresholds: tuple = (0.6, 0.6)
    findim_n: tuple = (50.0, 100.0, 200.0, 400.0)
    findim_replications: int = 200_000
    expeq_n: tuple = (1000.0, 10000.0, 100000.0)
    expeq_replications: int = 15

    def __post_init__(self):
        for name in ("w1_cycles", "vbar_replications", "findim_replications", "expeq_replications",
                     "solver_m", "oracle_K"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be positive", field_name=name)
        if self.start not in ("zero", "warmed", "both"):
            raise ConfigError("must be zero, warmed or both", field_name="start")
        if self.format not in ("csv", "json"):
            raise ConfigError("must be csv or json", field_name="format")
        if not self.p > 0:
            raise ConfigError("must be positive", field_name="p")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", field_name="seed")
        if len(self.findim_times) != len(self.findim_thresholds):
            raise ConfigError("times and thresholds differ in length", field_name="findim")
        if any(np.diff(self.w1_levels) <= 0) or any(np.diff(self.w1_oracle_levels) <= 0):
            raise ConfigError("levels must be increasing", field_name="w1")

    @property
    def model(self) -> IncrementModel:
        return IncrementModel(self.family, tuple(self.params))

    def stream_name(self, experiment: str) -> str:
        return f"{self.seed}/{experiment}"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_text(self) -> str:
        return format_config(self)

    def digest(self) -> str:
        """SHA-256 of the canonical text, ignoring where and how results are written."""
        neutral = replace(self, out=ExperimentConfig.out, format=ExperimentConfig.format)
        return hashlib.sha256(neutral.to_text().encode()).hexdigest()

    def as_dict(self) -> dict:
        return asdict(self)


# (section, key) -> (field, kind)
_SCHEMA = {
    ("model", "family"): ("family", "str"),
    ("model", "params"): ("params", "list"),
    ("run", "p"): ("p", "float"),
    ("run", "seed"): ("seed", "int"),
    ("run", "out"): ("out", "str"),
    ("run", "format"): ("format", "str"),
    ("run", "start"): ("start", "str"),
    ("run", "oracle"): ("oracle", "bool"),
    ("solver", "m"): ("solver_m", "int"),
    ("w1", "cycles"): ("w1_cycles", "int"),
    ("w1", "levels"): ("w1_levels", "list"),
    ("w1", "oracle_levels"): ("w1_oracle_levels", "list"),
    ("w1", "oracle_k"): ("oracle_K", "int"),
    ("vbar", "replications"): ("vbar_replications", "int"),
    ("vbar", "b"): ("vbar_b", "list"),
    ("vbar", "bn"): ("vbar_bn", "list"),
    ("vbar", "warmup"): ("vbar_warmup", "optint"),
    ("findim", "times"): ("findim_times", "list"),
    ("findim", "thresholds"): ("findim_thresholds", "list"),
    ("findim", "n"): ("findim_n", "list"),
    ("findim", "replications"): ("findim_replications", "int"),
    ("expeq", "n"): ("expeq_n", "list"),
    ("expeq", "replications"): ("expeq_replications", "int"),
}


def _convert(kind: str, raw: str):
    raw = raw.strip()
    if kind == "str":
        return raw
    if kind == "float":
        return float(raw)
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            val = float(raw)
            if not val.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}") from None
            return int(val)
    if kind == "optint":
        return None if raw in ("", "none", "auto") else int(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ValueError(f"expected on/off, got {raw!r}")
    return parse_grid(raw)


def _line_index(text: str) -> dict:
    where = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where[(section, m.group(1).strip().lower())] = i
    return where


def parse_config(text: str) -> ExperimentConfig:
    """Parse configuration text; errors carry the offending line and field."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError("malformed line", line=line) from exc
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(str(exc).split(":")[-1].strip() or "duplicate entry", line=exc.lineno) from exc
    where = _line_index(text)
    known_sections = {s for s, _ in _SCHEMA}
    values = {}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]", line=where.get((section, None)))
        for key, raw in cp.items(section):
            spec = _SCHEMA.get((section, key))
            line = where.get((section, key))
            if spec is None:
                raise ConfigError("unknown key", line=line, field_name=f"{section}.{key}")
            name, kind = spec
            try:
                values[name] = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(str(exc), line=line, field_name=f"{section}.{key}") from exc
    try:
        cfg = ExperimentConfig(**values)
        cfg.model
    except ConfigError as exc:
        section_key = next(((s, k) for (s, k), (f, _) in _SCHEMA.items() if f == exc.field), None)
        raise ConfigError(str(exc).split(": ", 1)[-1], line=where.get(section_key),
                          field_name=".".join(section_key) if section_key else exc.field) from exc
    except ModelError as exc:
        raise ConfigError(str(exc), line=where.get(("model", "params")), field_name="model") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text that parses back to an equal configuration."""
    by_section: dict = {}
    for (section, key), (name, kind) in _SCHEMA.items():
        val = getattr(cfg, name)
        if kind == "list":
            text = _fmt_list(val)
        elif kind == "bool":
            text = "on" if val else "off"
        elif kind == "optint":
            text = "auto" if val is None else str(val)
        elif kind == "float":
            text = repr(float(val))
        else:
            text = str(val)
        by_section.setdefault(section, []).append(f"{key} = {text}")
    blocks = [f"[{s}]\n" + "\n".join(lines) for s, lines in by_section.items()]
    return "\n\n".join(blocks) + "\n"
