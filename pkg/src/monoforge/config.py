"""Run configuration: a line-oriented nested-section text format.

Sections are [name] headers followed by key = value lines.  Values are
parsed exactly (floats through repr round-trip, point lists as
semicolon-separated "re im t" triples).  Unknown sections or keys are
rejected with their line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Point3

_FLOAT = "float"
_INT = "int"
_STR = "str"
_POINTS = "points"
_VECS = "vectors"
_FLOATS = "floats"

SCHEMA = {
    "background": {
        "v": _FLOAT,
        "b": _FLOAT,
        "singularities": _POINTS,
        "centres": _POINTS,
    },
    "gluing": {
        "x0": _VECS,
        "tau": _FLOATS,
        "neck_ratio": _FLOAT,
        "kappa": _FLOAT,
    },
    "numerics": {
        "delta": _FLOAT,
        "mode": _STR,
        "r_trunc": _FLOAT,
        "h_z": _FLOAT,
        "n_t": _INT,
        "cg_tol": _FLOAT,
        "cg_maxiter": _INT,
        "deform_tol_factor": _FLOAT,
        "deform_max_outer": _INT,
        "r_big": _FLOAT,
        "h_eval": _FLOAT,
        "seed": _INT,
        "tol_scale": _FLOAT,
        "image_count": _INT,
        "fourier_count": _INT,
        "crossover_radius": _FLOAT,
    },
    "output": {"directory": _STR},
}

DEFAULTS = {
    "background": {"v": 99.378, "b": 0.0, "singularities": [], "centres": [Point3(0.0, 0.0)]},
    "gluing": {"x0": None, "tau": None, "neck_ratio": 2.2, "kappa": 0.5},
    "numerics": {
        "delta": 0.25,
        "mode": "highmass",
        "r_trunc": 0.6,
        "h_z": 0.015,
        "n_t": 20,
        "cg_tol": 1e-8,
        "cg_maxiter": 2500,
        "deform_tol_factor": 0.02,
        "deform_max_outer": 5,
        "r_big": 20.0,
        "h_eval": 1e-4,
        "seed": 0,
        "tol_scale": 1.0,
        "image_count": 60,
        "fourier_count": 64,
        "crossover_radius": 2.0,
    },
    "output": {"directory": "out"},
}


@dataclass
class RunConfig:
    background: dict = field(default_factory=dict)
    gluing: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @staticmethod
    def default():
        return RunConfig(
            {k: _copy(v) for k, v in DEFAULTS["background"].items()},
            {k: _copy(v) for k, v in DEFAULTS["gluing"].items()},
            {k: _copy(v) for k, v in DEFAULTS["numerics"].items()},
            {k: _copy(v) for k, v in DEFAULTS["output"].items()},
        )

    def section(self, name):
        return getattr(self, name)


def _copy(v):
    if isinstance(v, list):
        return list(v)
    if isinstance(v, np.ndarray):
        return v.copy()
    return v


def _parse_value(kind, raw, lineno):
    raw = raw.strip()
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _STR:
            return raw
        if kind == _POINTS:
            if not raw:
                return []
            pts = []
            for chunk in raw.split(";"):
                xs = [float(t) for t in chunk.split()]
                if len(xs) != 3:
                    raise ValueError("need three numbers per point")
                pts.append(Point3(complex(xs[0], xs[1]), xs[2]))
            return pts
        if kind == _VECS:
            if not raw:
                return None
            rows = [[float(t) for t in chunk.split()] for chunk in raw.split(";")]
            if any(len(r) != 3 for r in rows):
                raise ValueError("need three numbers per vector")
            return np.array(rows)
        if kind == _FLOATS:
            if not raw:
                return None
            return np.array([float(t) for t in raw.split()])
    except ValueError as exc:
        raise ValueError(f"line {lineno}: could not parse value {raw!r}: {exc}") from None
    raise ValueError(f"line {lineno}: unknown kind {kind}")


def _format_value(kind, value):
    if kind == _FLOAT:
        return repr(float(value))
    if kind == _INT:
        return repr(int(value))
    if kind == _STR:
        return str(value)
    if kind == _POINTS:
        return "; ".join(f"{repr(p.z.real)} {repr(p.z.imag)} {repr(p.t)}" for p in value)
    if kind == _VECS:
        if value is None:
            return ""
        return "; ".join(" ".join(repr(float(x)) for x in row) for row in np.atleast_2d(value))
    if kind == _FLOATS:
        if value is None:
            return ""
        return " ".join(repr(float(x)) for x in np.atleast_1d(value))
    raise ValueError(kind)


def parse_config(text) -> RunConfig:
    cfg = RunConfig.default()
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ValueError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key = value, got {stripped!r}")
        if section is None:
            raise ValueError(f"line {lineno}: key outside of any section")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in SCHEMA[section]:
            raise ValueError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        cfg.section(section)[key] = _parse_value(SCHEMA[section][key], raw, lineno)
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in ("background", "gluing", "numerics", "output"):
        lines.append(f"[{section}]")
        data = cfg.section(section)
        for key, kind in SCHEMA[section].items():
            lines.append(f"{key} = {_format_value(kind, data[key])}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))
