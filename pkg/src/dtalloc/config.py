"""Scenario files: TOML sections ``problem``, ``network``, ``protocol``, ``delay``, ``sweep``, ``output``.

A file may start from a named preset (``preset = "edp50"``); its own keys
override the preset section by section.  Validation collects every problem
before raising so a user sees all of them at once, each tagged with the line
where the offending key appears.

Grammar (all keys optional unless noted)::

    seed = 7                         # master seed, sub-seeds are derived from it
    preset = "edp50"

    [problem]
    kind = "generators"              # generators | explicit | logexp_random
    n = 50                           # generators, logexp_random
    b = 3200                         # required
    types = "random"                 # or ["A", "B", ...] (generators)
    penalty = { c = 1.0, sigma = 2 } # or { c = 1.0, mu = 10.0 }
    costs = [{ kind = "quadratic", gamma = 0.04, beta = 2.0 }]   # explicit
    a = [1.0, 2.0]                   # explicit, weighted constraint
    ranges = { alpha = [0.05, 0.2], beta = [-0.2, 0.2], gamma = [-0.3, 0.3],
               eta = [0.0, 0.6], zeta = 0.2, a_abs = [0.5, 2.0] }           # logexp_random
    init = "uniform"                 # uniform | random

    [network]
    kind = "erdos_renyi"             # erdos_renyi | cycle | path | complete | file |
                                     # alternating_matchings | random_switching
    p = 0.2
    weight_range = [0.005, 0.025]
    weight = 1.0
    path = "graph.txt"               # kind = file, path relative to the scenario file
    normalize = "none"               # none | max_degree
    snapshots = 10                   # random_switching
    duration = 10                    # random_switching, alternating_matchings
    spectrum = "union"               # union | snapshot

    [protocol]
    variant = "node"                 # node | link | hybrid
    nonlinearity = "sat(kappa=1/60)"
    link_nonlinearity = "logq(delta=0.125)"    # hybrid only
    step_T = 1.0                     # or step_fraction = 0.5 (times T_lambda)
    max_steps = 20000
    termination_residual = 1e-9
    target_residual = 1e-2           # reported iterations-to-target

    [delay]
    tau_bar = 6
    mode = "varying"                 # varying | fixed
    table = [[0, 1, 2]]              # fixed: per-pair delays, others use default
    default = 6
    case = "I"                       # I | II
    send_policy = "on_update"        # on_update | every_step

    [sweep]
    grid = { "network.p" = [0.15, 0.3, 0.45] }
    trials = 5                       # per grid cell, seeds derived from the master seed
    workers = 1

    [output]
    dir = "runs/edp50"
    states = false
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigParseError, ConfigValidationError
from .nonlinearity import parse_nonlinearity

__all__ = [
    "ScenarioConfig",
    "load_config",
    "load_text",
    "apply_overrides",
    "validate",
    "config_hash",
    "PRESETS",
]

SECTIONS = ("problem", "network", "protocol", "delay", "sweep", "output")
TOP_KEYS = {"seed", "preset", "name"}
ALLOWED = {
    "problem": {"kind", "n", "b", "types", "penalty", "costs", "a", "ranges", "init"},
    "network": {"kind", "p", "weight_range", "weight", "path", "normalize", "snapshots", "duration", "spectrum", "n"},
    "protocol": {
        "variant", "nonlinearity", "link_nonlinearity", "step_T", "step_fraction", "max_steps",
        "termination_residual", "target_residual",
    },
    "delay": {"tau_bar", "mode", "seed", "table", "default", "case", "send_policy"},
    "sweep": {"grid", "trials", "seeds", "workers", "target_residual"},
    "output": {"dir", "states"},
}
NETWORK_KINDS = {"erdos_renyi", "cycle", "path", "complete", "file", "alternating_matchings", "random_switching"}
SWITCHING_KINDS = {"alternating_matchings", "random_switching"}

PRESETS: dict[str, dict] = {
    "edp50": {
        "name": "edp50",
        "seed": 7,
        "problem": {"kind": "generators", "n": 50, "b": 3200.0, "types": "random", "penalty": {"c": 1.0, "sigma": 2}},
        "network": {"kind": "erdos_renyi", "p": 0.2, "weight_range": [0.005, 0.025], "normalize": "max_degree"},
        "protocol": {
            "variant": "node", "nonlinearity": "sat(kappa=1/60)", "step_T": 1.0,
            "max_steps": 20000, "termination_residual": 1e-9, "target_residual": 1e-2,
        },
        "output": {"dir": "runs/edp50"},
    },
    "edp5-cycle": {
        "name": "edp5-cycle",
        "seed": 11,
        "problem": {"kind": "generators", "n": 5, "b": 300.0, "types": ["A", "B", "C", "D", "E"]},
        "network": {"kind": "cycle", "weight": 1.0},
        "protocol": {
            "variant": "node", "nonlinearity": "sat(kappa=1/60)", "step_T": 0.02,
            "max_steps": 600000, "termination_residual": 1e-4, "target_residual": 1e-2,
        },
        "delay": {"tau_bar": 6, "mode": "varying", "case": "I"},
        "output": {"dir": "runs/edp5-cycle"},
    },
    "quantized100": {
        "name": "quantized100",
        "seed": 5,
        "problem": {
            "kind": "logexp_random", "n": 100, "b": 10.0,
            "ranges": {
                "alpha": [0.05, 0.2], "beta": [-0.2, 0.2], "gamma": [-0.3, 0.3],
                "eta": [0.0, 0.6], "zeta": 0.2, "a_abs": [0.5, 2.0],
            },
        },
        "network": {"kind": "random_switching", "p": 0.1, "snapshots": 10, "duration": 10, "weight_range": [1.0, 1.0]},
        "protocol": {
            "variant": "hybrid", "nonlinearity": "sat(kappa=1)", "link_nonlinearity": "logq(delta=0.125)",
            "step_T": 0.1, "max_steps": 20000, "termination_residual": 0.0,
        },
        "output": {"dir": "runs/quantized100"},
    },
}


@dataclass
class ScenarioConfig:
    raw: dict
    source: str = "<memory>"
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def name(self) -> str:
        return str(self.raw.get("name", Path(self.source).stem))

    def section(self, name: str) -> dict:
        return self.raw.get(name, {}) or {}

    @property
    def has_delay(self) -> bool:
        return bool(self.section("delay"))

    @property
    def has_sweep(self) -> bool:
        return bool(self.section("sweep"))

    def hash(self) -> str:
        return config_hash(self.raw)

    def with_overrides(self, assignments: dict[str, Any]) -> ScenarioConfig:
        raw = copy.deepcopy(self.raw)
        for path, value in assignments.items():
            _set_path(raw, path, value)
        return ScenarioConfig(raw, self.source, self.base_dir)


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


# keys that select the same quantity; setting one displaces the other
_EXCLUSIVE = {("protocol", "step_T"): "step_fraction", ("protocol", "step_fraction"): "step_T"}


def _set_path(raw: dict, path: str, value) -> None:
    parts = path.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    rival = _EXCLUSIVE.get(tuple(parts[-2:]))
    if rival is not None and len(parts) == 2:
        node.pop(rival, None)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key in SECTIONS:
            merged = {**out[key], **val}
            for sub in val:
                rival = _EXCLUSIVE.get((key, sub))
                if rival is not None and rival not in val:
                    merged.pop(rival, None)
            out[key] = merged
        else:
            out[key] = copy.deepcopy(val)
    return out


def _locate(text: str, section: str | None, key: str) -> str:
    """``"line N"`` where ``key`` is assigned inside ``section``; empty if not found."""
    current = None
    pattern = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=")
    for lineno, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            if section == current and key == "":
                return f"line {lineno}"
            continue
        if current == section and pattern.match(line):
            return f"line {lineno}"
    return ""


def load_text(text: str, source: str = "<memory>", base_dir: Path | None = None) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{source}: {exc}") from exc
    preset = raw.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigValidationError([f"{source}: {_locate(text, None, 'preset')}: unknown preset {preset!r}"])
        raw = _merge(PRESETS[preset], {k: v for k, v in raw.items() if k != "preset"})
    cfg = ScenarioConfig(raw, source, base_dir or Path.cwd())
    problems = validate(cfg, text)
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    """Read and validate a scenario file, or build a named preset (``edp50`` etc.)."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        cfg = ScenarioConfig(copy.deepcopy(PRESETS[str(path)]), str(path))
        problems = validate(cfg, "")
        if problems:
            raise ConfigValidationError(problems)
        return cfg
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    return load_text(text, str(p), p.parent)


def parse_override(item: str) -> tuple[str, Any]:
    """``"protocol.step_T=0.05"`` -> ``("protocol.step_T", 0.05)``; values use TOML syntax, bare words are strings."""
    if "=" not in item:
        raise ConfigParseError(f"override {item!r} must look like section.key=value")
    path, _, value = item.partition("=")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return path.strip(), parsed


def apply_overrides(cfg: ScenarioConfig, items: list[str]) -> ScenarioConfig:
    out = cfg.with_overrides(dict(parse_override(i) for i in items))
    problems = validate(out, "")
    if problems:
        raise ConfigValidationError(problems)
    return out


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: ScenarioConfig, text: str = "") -> list[str]:
    """All validation problems, each prefixed with the source and line when known."""
    raw = cfg.raw
    out: list[str] = []

    def err(section, key, msg):
        where = _locate(text, section, key) if text else ""
        label = f"{section}.{key}" if section else key
        out.append(f"{cfg.source}: {where + ': ' if where else ''}{label}: {msg}")

    for key in raw:
        if key not in TOP_KEYS and key not in SECTIONS:
            err(None, key, "unknown top-level key")
    if "seed" in raw and not isinstance(raw["seed"], int):
        err(None, "seed", "must be an integer")
    for sec in SECTIONS:
        if sec in raw and not isinstance(raw[sec], dict):
            err(None, sec, "must be a table")
            return out
        for key in raw.get(sec, {}) or {}:
            if key not in ALLOWED[sec]:
                err(sec, key, f"unknown key; expected one of {sorted(ALLOWED[sec])}")

    pr = cfg.section("problem")
    kind = pr.get("kind", "generators")
    if kind not in ("generators", "explicit", "logexp_random"):
        err("problem", "kind", f"unknown problem kind {kind!r}")
    if not _is_num(pr.get("b")):
        err("problem", "b", "required number")
    n = pr.get("n")
    if kind == "explicit":
        costs = pr.get("costs")
        if not isinstance(costs, list) or len(costs) < 2:
            err("problem", "costs", "explicit problems need a list of at least two costs")
        else:
            n = len(costs)
            for c in costs:
                if not isinstance(c, dict) or c.get("kind") not in ("quadratic", "logexp", "generator"):
                    err("problem", "costs", f"bad cost entry {c!r}")
        a = pr.get("a")
        if a is not None:
            if not isinstance(a, list) or len(a) != n:
                err("problem", "a", "must list one coefficient per agent")
            elif any(not _is_num(v) or v == 0 for v in a):
                err("problem", "a", "coefficients must be nonzero numbers")
    else:
        types = pr.get("types", "random")
        if isinstance(types, list):
            n = n if n is not None else len(types)
            if len(types) != n:
                err("problem", "types", "length must equal n")
            if any(str(t).upper() not in "ABCDE" or len(str(t)) != 1 for t in types):
                err("problem", "types", "generator types are letters A..E")
        if not isinstance(n, int) or n < 2:
            err("problem", "n", "needs an integer n >= 2")
    if pr.get("init", "uniform") not in ("uniform", "random"):
        err("problem", "init", "must be 'uniform' or 'random'")
    pen = pr.get("penalty")
    if pen is not None:
        if not isinstance(pen, dict):
            err("problem", "penalty", "must be a table")
        else:
            if "sigma" in pen and (not isinstance(pen["sigma"], int) or pen["sigma"] < 2):
                err("problem", "penalty", "sigma must be an integer >= 2 (use mu for a smooth penalty)")
            if not _is_num(pen.get("c", 1.0)) or pen.get("c", 1.0) <= 0:
                err("problem", "penalty", "c must be positive")

    nw = cfg.section("network")
    nkind = nw.get("kind", "erdos_renyi")
    if nkind not in NETWORK_KINDS:
        err("network", "kind", f"unknown network kind {nkind!r}")
    if nkind in ("erdos_renyi", "random_switching"):
        p = nw.get("p", 0.2)
        if not _is_num(p) or not 0 < p <= 1:
            err("network", "p", "link probability must be in (0, 1]")
    wr = nw.get("weight_range")
    if wr is not None and (
        not isinstance(wr, list) or len(wr) != 2 or not all(_is_num(v) for v in wr) or not 0 < wr[0] <= wr[1]
    ):
        err("network", "weight_range", "must be [lo, hi] with 0 < lo <= hi")
    if nkind == "file":
        path = nw.get("path")
        if not isinstance(path, str):
            err("network", "path", "graph file path required for kind = file")
        elif not (cfg.base_dir / path).exists():
            err("network", "path", f"graph file {path!r} does not exist")
    if nw.get("normalize", "none") not in ("none", "max_degree"):
        err("network", "normalize", "must be 'none' or 'max_degree'")
    if nw.get("spectrum", "union") not in ("union", "snapshot"):
        err("network", "spectrum", "must be 'union' or 'snapshot'")
    for key in ("snapshots", "duration"):
        if key in nw and (not isinstance(nw[key], int) or nw[key] < 1):
            err("network", key, "must be a positive integer")

    pc = cfg.section("protocol")
    if pc.get("variant", "node") not in ("node", "link", "hybrid"):
        err("protocol", "variant", "must be node, link or hybrid")
    if "step_T" in pc and "step_fraction" in pc:
        err("protocol", "step_T", "give step_T or step_fraction, not both")
    if "step_T" in pc and (not _is_num(pc["step_T"]) or pc["step_T"] <= 0):
        err("protocol", "step_T", "must be > 0")
    if "step_fraction" in pc and (not _is_num(pc["step_fraction"]) or pc["step_fraction"] <= 0):
        err("protocol", "step_fraction", "must be > 0")
    if "step_T" not in pc and "step_fraction" not in pc:
        err("protocol", "step_T", "required (or step_fraction)")
    if not isinstance(pc.get("max_steps", 1), int) or pc.get("max_steps", 1) < 0:
        err("protocol", "max_steps", "must be a nonnegative integer")
    for key in ("termination_residual", "target_residual"):
        if key in pc and (not _is_num(pc[key]) or pc[key] < 0):
            err("protocol", key, "must be a nonnegative number")
    for key in ("nonlinearity", "link_nonlinearity"):
        if key in pc:
            try:
                parse_nonlinearity(str(pc[key]))
            except ValueError as exc:
                err("protocol", key, str(exc))
    if pc.get("variant") == "hybrid" and "link_nonlinearity" not in pc:
        err("protocol", "link_nonlinearity", "required for the hybrid variant")

    dl = cfg.section("delay")
    if dl:
        tb = dl.get("tau_bar")
        if not isinstance(tb, int) or tb < 0:
            err("delay", "tau_bar", "must be a nonnegative integer")
            tb = None
        if dl.get("mode", "varying") not in ("varying", "fixed"):
            err("delay", "mode", "must be 'varying' or 'fixed'")
        if dl.get("case", "II") not in ("I", "II"):
            err("delay", "case", "must be 'I' or 'II'")
        if dl.get("send_policy", "on_update") not in ("on_update", "every_step"):
            err("delay", "send_policy", "must be 'on_update' or 'every_step'")
        table = dl.get("table", [])
        if not isinstance(table, list) or any(
            not isinstance(r, list) or len(r) != 3 or not all(isinstance(v, int) for v in r) for r in table
        ):
            err("delay", "table", "must be a list of [i, j, tau] integer triples")
        elif tb is not None and any(not 0 <= r[2] <= tb for r in table):
            err("delay", "table", f"delays must lie in 0..tau_bar={tb}")
        if tb is not None and nkind in SWITCHING_KINDS:
            duration = nw.get("duration", 10 if nkind == "random_switching" else 1)
            if duration <= tb + 1:
                err(
                    "delay", "tau_bar",
                    f"switching snapshots last {duration} steps; with delays the duration must exceed "
                    f"tau_bar + 1 = {tb + 1} so packets land before their link switches off",
                )

    sw = cfg.section("sweep")
    if sw:
        grid = sw.get("grid", {})
        if not isinstance(grid, dict):
            err("sweep", "grid", "must be a table of dotted paths to value lists")
        else:
            for path, vals in grid.items():
                if not isinstance(vals, list) or not vals:
                    err("sweep", "grid", f"grid entry {path!r} must be a non-empty list")
                sec = path.split(".")[0]
                if sec not in SECTIONS or len(path.split(".")) != 2:
                    err("sweep", "grid", f"grid key {path!r} must be section.key")
        trials = sw.get("trials", 1)
        if "seeds" in sw:
            if not isinstance(sw["seeds"], list) or not sw["seeds"]:
                err("sweep", "seeds", "must be a non-empty list of integers")
        elif not isinstance(trials, int) or trials < 1:
            err("sweep", "trials", "must be a positive integer")
        if "workers" in sw and (not isinstance(sw["workers"], int) or sw["workers"] < 1):
            err("sweep", "workers", "must be a positive integer")
    return out
