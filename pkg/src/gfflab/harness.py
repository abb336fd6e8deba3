"""Run configuration, manifests and atomic output for the experiment suites.

Configs are INI files with a ``[meta]`` section (``schema_version``, ``suite``,
``preset``, ``seed``) and a ``[params]`` section.  A parameter's type comes from
its preset default; lists are comma separated, lists of lists use ``;`` between
rows.  Every run goes to a fresh directory ``<root>/<suite>/run-NNNN``; tables
are written as CSV, then ``manifest.json`` last, all via temp file + rename.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import platform
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, suites

SCHEMA_VERSION = 1
MANIFEST_FORMAT = 1
OUTPUT_ENV = "GFFLAB_OUTPUT"
PRESET_ENV = "GFFLAB_PRESET"
DEFAULT_OUTPUT = "gfflab-runs"
# significant digits kept in the metrics digest; covers reordered compensated sums
DIGEST_DIGITS = 12


class ConfigError(ValueError):
    """Config does not parse or does not match the suite schema."""


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    suite: str
    preset: str
    seed: int
    params: dict
    schema_version: int = SCHEMA_VERSION

    def suite_params(self) -> dict:
        return {**self.params, "seed": self.seed, "preset": self.preset}


def default_preset() -> str:
    return os.environ.get(PRESET_ENV, "quick")


def default_config(suite: str, preset: str | None = None) -> RunConfig:
    preset = preset or default_preset()
    try:
        p = suites.defaults(suite, preset)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    seed = int(p.pop("seed", 0))
    return RunConfig(suite, preset, seed, p)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            return "; ".join(_format_value(r) for r in v)
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _parse_scalar(text: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if isinstance(like, int):
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {type(like).__name__}") from None


def _parse_value(text: str, like, key: str):
    if isinstance(like, list):
        if like and isinstance(like[0], list):
            rows = [r for r in text.split(";") if r.strip()]
            out = [_parse_value(r, like[0], key) for r in rows]
        else:
            items = [t for t in text.split(",") if t.strip()]
            elem = like[0] if like else 0.0
            out = [_parse_scalar(t, elem, key) for t in items]
        if not out:
            raise ConfigError(f"{key}: empty parameter grid")
        return out
    value = _parse_scalar(text, like, key)
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    return value


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["meta"] = {"schema_version": str(cfg.schema_version), "suite": cfg.suite,
                  "preset": cfg.preset, "seed": str(cfg.seed)}
    cp["params"] = {k: _format_value(v) for k, v in cfg.params.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config; missing parameters take the preset value."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config does not parse: {exc}") from None
    if "meta" not in cp:
        raise ConfigError("missing [meta] section")
    meta = cp["meta"]
    unknown = set(cp.sections()) - {"meta", "params"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    try:
        version = int(meta.get("schema_version", ""))
    except ValueError:
        raise ConfigError("meta.schema_version must be an integer") from None
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    if "suite" not in meta:
        raise ConfigError("meta.suite is required")
    base = default_config(meta["suite"], meta.get("preset", default_preset()))
    seed = _parse_scalar(meta.get("seed", str(base.seed)), 0, "seed")
    extra = set(meta) - {"schema_version", "suite", "preset", "seed"}
    if extra:
        raise ConfigError(f"unknown meta keys: {sorted(extra)}")
    params = dict(base.params)
    if "params" in cp:
        for key, text in cp["params"].items():
            if key not in params:
                raise ConfigError(f"unknown parameter {key!r} for suite {base.suite}")
            params[key] = _parse_value(text, base.params[key], key)
    _validate(base.suite, params)
    return RunConfig(base.suite, base.preset, seed, params, version)


def _validate(suite: str, params: dict) -> None:
    for key, v in params.items():
        if isinstance(v, list) and not v:
            raise ConfigError(f"{key}: empty parameter grid")
    positive = ("n_fields", "n_paths", "realizations", "samples", "mc_samples", "dt", "dt_pde",
                "dt_sde", "T", "grid", "steps", "levels", "modes_per_octave", "modes_per_level",
                "step", "decades")
    for key in positive:
        if key in params and not params[key] > 0:
            raise ConfigError(f"{key} must be positive, got {params[key]}")
    for key in ("L", "epsilon2"):
        vals = params.get(key)
        if vals is None:
            continue
        for v in vals if isinstance(vals, list) else [vals]:
            if key == "L" and v < 1:
                raise ConfigError(f"L must be >= 1, got {v}")
            if key == "epsilon2" and v < 0:
                raise ConfigError(f"epsilon2 must be >= 0, got {v}")


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    if isinstance(obj, float):
        return float(f"{obj:.{DIGEST_DIGITS}g}")
    return obj


def metrics_digest(metrics: dict, tables: dict) -> str:
    payload = _rounded(jsonable({"metrics": metrics, "tables": tables}))
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_csv(rows: list[dict]) -> bytes:
    """CSV with the union of row keys as columns; non-scalar cells as JSON."""
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        cells = []
        for c in cols:
            v = jsonable(r.get(c, ""))
            if isinstance(v, float):
                cells.append(repr(v))
            elif isinstance(v, (list, dict, bool)):
                cells.append(json.dumps(v))
            else:
                cells.append(v)
        w.writerow(cells)
    return buf.getvalue().encode()


def read_csv(path: str | Path) -> list[dict]:
    def conv(s):
        if s == "":
            return None
        try:
            return float(s)
        except ValueError:
            pass
        try:
            return json.loads(s)
        except ValueError:
            return s

    with open(path, newline="") as fh:
        return [{k: conv(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    tool_version: str
    suite: str
    preset: str
    seed: int
    config: dict
    config_text: str
    started_at: str
    wall_clock_s: float
    metrics: dict
    checks: list
    outputs: dict
    metrics_digest: str
    passed: bool
    schema_version: int = SCHEMA_VERSION
    tolerance_version: int = suites.TOLERANCE_VERSION
    manifest_format: int = MANIFEST_FORMAT
    environment: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)

    def run_config(self) -> RunConfig:
        return parse_config(self.config_text)


def output_root(root: str | Path | None = None) -> Path:
    return Path(root or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


def new_run_dir(root: Path, name: str) -> Path:
    """First free ``run-NNNN`` directory; created exclusively so runs never share one."""
    base = root / name
    base.mkdir(parents=True, exist_ok=True)
    i = 1
    while True:
        d = base / f"run-{i:04d}"
        try:
            d.mkdir()
            return d
        except FileExistsError:
            i += 1


def write_run(name: str, cfg_dict: dict, config_text: str, seed: int, preset: str,
              metrics: dict, tables: dict, checks: list, started: float,
              root: str | Path | None = None) -> tuple[Path, RunManifest]:
    run_dir = new_run_dir(output_root(root), name)
    outputs = {}
    for tname, rows in tables.items():
        data = table_csv(rows)
        fname = f"{tname}.csv"
        atomic_write(run_dir / fname, data)
        outputs[fname] = hashlib.sha256(data).hexdigest()
    checks = [c.to_dict() if hasattr(c, "to_dict") else c for c in checks]
    man = RunManifest(
        tool_version=__version__, suite=name, preset=preset, seed=seed, config=jsonable(cfg_dict),
        config_text=config_text, started_at=time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        wall_clock_s=time.time() - started, metrics=jsonable(metrics), checks=checks,
        outputs=outputs, metrics_digest=metrics_digest(metrics, tables),
        passed=all(c["passed"] for c in checks),
        environment={"python": platform.python_version(), "numpy": np.__version__})
    atomic_write(run_dir / "manifest.json", man.to_json().encode())
    return run_dir, man


def run_suite(cfg: RunConfig, root: str | Path | None = None) -> tuple[Path, RunManifest, suites.SuiteResult]:
    started = time.time()
    res = suites.run(cfg.suite, cfg.suite_params())
    run_dir, man = write_run(cfg.suite, {"meta": {"schema_version": cfg.schema_version,
                                                  "suite": cfg.suite, "preset": cfg.preset,
                                                  "seed": cfg.seed},
                                         "params": cfg.params},
                             dump_config(cfg), cfg.seed, cfg.preset, res.metrics, res.tables,
                             res.checks, started, root)
    return run_dir, man, res


def check_report(checks: list) -> str:
    lines = []
    for c in checks:
        c = c.to_dict() if hasattr(c, "to_dict") else c
        lines.append(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}")
    return "\n".join(lines)
