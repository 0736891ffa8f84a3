"""Run configuration: a line-oriented ``section.key = value`` format.

Example::

    # gas and background
    gas.gamma = 1.0
    gas.j0 = 0.05
    background.u0 = 2.0
    grid.n1 = 201
    data.modes = u_en:1:0:1.0; b:2:0:0.3:1
    data.sigma = 1e-5

Blank lines and ``#`` comments are ignored. Lists are comma separated.
``data.modes`` entries are ``target:k:l:amplitude[:x1_mode]`` separated by
semicolons. Only the standard library is imported here so the CLI can set
thread counts before numpy loads.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else float(t)


def _modes(text: str) -> tuple:
    out = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = [p.strip() for p in item.split(":")]
        if len(parts) not in (4, 5):
            raise ValueError(f"mode {item!r} must be target:k:l:amplitude[:x1_mode]")
        m = {"target": parts[0], "k": int(parts[1]), "l": int(parts[2]), "amplitude": float(parts[3])}
        if len(parts) == 5:
            m["x1_mode"] = int(parts[4])
        out.append(m)
    return tuple(out)


DEFAULT_MODES = "u_en:1:0:1.0; e_en:0:1:0.5; phi_ex:1:1:0.5; b:2:0:0.3:1"

# key -> (parser, default)
SCHEMA = {
    "gas.gamma": (float, 1.0),
    "gas.j0": (float, 0.05),
    "background.b0": (float, 0.025),
    "background.u0": (float, 2.0),
    "background.e0": (float, 0.0),
    "background.delta": (_opt_float, None),
    "background.length": (float, 2.0),
    "background.step": (float, 1e-3),
    "grid.n1": (int, 201),
    "grid.n2": (int, 33),
    "grid.n3": (int, 33),
    "grid.length": (_opt_float, None),
    "solver.m_max": (int, 8),
    "solver.epsilon": (float, 1e-2),
    "solver.sigma_bar": (float, 1e-3),
    "solver.max_iter": (int, 30),
    "solver.contraction_tol": (float, 1e-10),
    "solver.residual_tol": (float, 1e-6),
    "solver.under_relaxation": (float, 1.0),
    "solver.r_factor": (float, 2.0),
    "weight.n": (int, 401),
    "weight.safety": (float, 0.1),
    "weight.floor": (float, 0.05),
    "weight.min_margin": (float, 1e-3),
    "weight.sweep": (_floats, ()),
    "data.source": (str, "synthetic"),
    "data.manifest": (str, ""),
    "data.modes": (_modes, _modes(DEFAULT_MODES)),
    "data.sigma": (_opt_float, None),
    "data.sweep": (_floats, ()),
    "verify.n1": (_ints, (101, 201, 401)),
    "verify.kmax": (int, 3),
    "verify.corrupt": (_bool, False),
    "output.dir": (str, "out"),
    "output.fields": (_bool, True),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def set(self, key: str, text: str) -> None:
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(text.strip()) if isinstance(text, str) else text
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    @property
    def duct_length(self) -> float | None:
        return self.values["grid.length"]

    def validate(self) -> "RunConfig":
        v = self.values
        checks = [
            (v["gas.gamma"] >= 1.0, "gas.gamma must be >= 1"),
            (v["gas.j0"] > 0, "gas.j0 must be > 0"),
            (v["background.length"] > 0, "background.length must be > 0"),
            (0 < v["background.step"] <= v["background.length"], "background.step out of range"),
            (v["grid.n1"] >= 3 and v["grid.n2"] >= 5 and v["grid.n3"] >= 5, "grid too small"),
            (v["grid.length"] is None or v["grid.length"] > 0, "grid.length must be > 0"),
            (v["solver.m_max"] >= 0, "solver.m_max must be >= 0"),
            (0 < v["solver.epsilon"] <= 1e-2, "solver.epsilon must lie in (0, 1e-2]"),
            (v["solver.max_iter"] >= 1, "solver.max_iter must be >= 1"),
            (v["solver.contraction_tol"] > 0 and v["solver.residual_tol"] > 0, "tolerances must be > 0"),
            (0 < v["solver.under_relaxation"] <= 1, "solver.under_relaxation must lie in (0, 1]"),
            (v["solver.r_factor"] >= 0, "solver.r_factor must be >= 0"),
            (v["data.source"] in ("synthetic", "file"), "data.source must be synthetic or file"),
            (v["data.sigma"] is None or v["data.sigma"] >= 0, "data.sigma must be >= 0"),
            (all(s >= 0 for s in v["data.sweep"]), "data.sweep entries must be >= 0"),
            (all(n >= 3 for n in v["verify.n1"]), "verify.n1 entries must be >= 3"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if v["data.source"] == "file":
            if not v["data.manifest"]:
                raise ConfigError("data.source = file needs data.manifest")
            path = Path(v["data.manifest"])
            if self.source and not path.is_absolute():
                path = Path(self.source).parent / path
            if not path.exists():
                raise ConfigError(f"data.manifest {path} does not exist")
            v["data.manifest"] = str(path)
        return self

    def echo(self) -> dict:
        out = {}
        for k, val in self.values.items():
            out[k] = list(val) if isinstance(val, tuple) else val
        return out


def parse(text: str, source: str | None = None) -> RunConfig:
    cfg = RunConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, val = line.split("=", 1)
        try:
            cfg.set(key, val)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse(path.read_text(), source=str(path))


def dump(cfg: RunConfig) -> str:
    lines = []
    for k, val in cfg.values.items():
        if k == "data.modes":
            text = "; ".join(":".join(str(m[f]) for f in ("target", "k", "l", "amplitude", "x1_mode") if f in m)
                             for m in val)
        elif isinstance(val, tuple):
            text = ", ".join(str(x) for x in val)
        elif val is None:
            text = "auto"
        else:
            text = str(val)
        lines.append(f"{k} = {text}")
    return "\n".join(lines) + "\n"


def replace_values(cfg: RunConfig, **updates) -> RunConfig:
    vals = dict(cfg.values)
    vals.update({k.replace("__", "."): v for k, v in updates.items()})
    return dataclasses.replace(cfg, values=vals)
