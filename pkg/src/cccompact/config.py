"""Scenario configuration: schema validation with line-precise messages."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import jsonschema

SCENARIO_KINDS = ("distance", "converge-metric", "flow-compare", "poincare", "doubling",
                  "covering", "compactness", "blowup-demo")

#: kinds that need a family / a sequence block
NEEDS_FAMILY = ("distance", "doubling")
NEEDS_SEQUENCE = ("converge-metric", "poincare", "compactness")


class ConfigError(ValueError):
    def __init__(self, issues: List["ConfigIssue"]):
        self.issues = issues
        super().__init__("\n".join(str(i) for i in issues))


@dataclass
class ConfigIssue:
    path: str
    line: int
    message: str
    source: str = "<config>"

    def __str__(self) -> str:
        where = self.path or "<root>"
        return f"{self.source}:{self.line}: {where}: {self.message}"


@lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(resources.files("cccompact").joinpath("scenario.schema.json").read_text())


# -- locating JSON paths in the source text -------------------------------------------

_WS = re.compile(r"[ \t\n\r]*")
_NUM = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?")
_decoder = json.JSONDecoder()


def locate_lines(text: str) -> Dict[Tuple, int]:
    """Map every key path (tuple of keys / indices) to the 1-based line of its value."""
    lines: Dict[Tuple, int] = {}

    def line_at(pos: int) -> int:
        return text.count("\n", 0, pos) + 1

    def skip(pos: int) -> int:
        return _WS.match(text, pos).end()

    def value(pos: int, path: Tuple) -> int:
        pos = skip(pos)
        lines[path] = line_at(pos)
        ch = text[pos]
        if ch == "{":
            pos = skip(pos + 1)
            if text[pos] == "}":
                return pos + 1
            while True:
                pos = skip(pos)
                key, pos = json.decoder.scanstring(text, pos + 1)
                pos = skip(pos)
                pos = value(pos + 1, path + (key,))  # skip ':'
                pos = skip(pos)
                if text[pos] == "}":
                    return pos + 1
                pos += 1  # ','
        if ch == "[":
            pos = skip(pos + 1)
            if text[pos] == "]":
                return pos + 1
            k = 0
            while True:
                pos = value(pos, path + (k,))
                pos = skip(pos)
                k += 1
                if text[pos] == "]":
                    return pos + 1
                pos += 1
        if ch == '"':
            return json.decoder.scanstring(text, pos + 1)[1]
        m = _NUM.match(text, pos)
        if m:
            return m.end()
        for lit in ("true", "false", "null"):
            if text.startswith(lit, pos):
                return pos + len(lit)
        raise ValueError(f"unexpected character at line {line_at(pos)}")

    value(0, ())
    return lines


def _line_for(lines: Dict[Tuple, int], path: Tuple) -> int:
    path = tuple(path)
    while path not in lines and path:
        path = path[:-1]
    return lines.get(path, 1)


def _fmt_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


# -- semantic checks ------------------------------------------------------------------

def _semantic(cfg: dict) -> List[Tuple[Tuple, str]]:
    out: List[Tuple[Tuple, str]] = []
    kind = cfg.get("scenario")
    eng = cfg.get("engine") or {}
    if "beta" in eng or "alpha" in eng:
        beta = eng.get("beta", 3)
        alpha = eng.get("alpha", 2.0)
        if isinstance(beta, int) and isinstance(alpha, (int, float)):
            if not Fraction(2) ** beta > 2 * Fraction(alpha):
                out.append((("engine", "beta"),
                            f"constraint 2^beta > 2*alpha violated: 2^{beta} <= 2*{alpha}"))
    grid = cfg.get("grid") or {}
    for k, pair in enumerate(grid.get("box", []) or []):
        if isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, (int, float)) for v in pair):
            if pair[0] > pair[1]:
                out.append((("grid", "box", k), f"box axis {k} has lower bound above upper bound"))
    if kind in NEEDS_FAMILY and "family" not in cfg:
        out.append(((), f"scenario {kind!r} needs a 'family' block"))
    if kind in NEEDS_SEQUENCE and "sequence" not in cfg:
        out.append(((), f"scenario {kind!r} needs a 'sequence' block"))
    if kind in ("distance", "converge-metric", "poincare", "doubling", "compactness", "blowup-demo") \
            and "grid" not in cfg:
        out.append(((), f"scenario {kind!r} needs a 'grid' block"))
    return out


def validate_text(text: str, source: str = "<config>") -> Tuple[Union[dict, None], List[ConfigIssue]]:
    """Parse and validate; returns ``(config or None, issues)``."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [ConfigIssue("", exc.lineno, f"invalid JSON: {exc.msg}", source)]
    lines = locate_lines(text)
    issues = []
    v = jsonschema.Draft202012Validator(schema())
    for err in sorted(v.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        path = tuple(err.absolute_path)
        issues.append(ConfigIssue(_fmt_path(path), _line_for(lines, path), err.message, source))
    if not issues:
        for path, msg in _semantic(cfg):
            issues.append(ConfigIssue(_fmt_path(path), _line_for(lines, path), msg, source))
    issues.sort(key=lambda i: (i.line, i.path))
    return (cfg if not issues else None), issues


def validate_config(path) -> List[ConfigIssue]:
    """All schema and constraint violations of the file (empty when valid)."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([ConfigIssue("", 0, f"cannot read file: {exc}", str(p))]) from exc
    return validate_text(text, str(p))[1]


def load_config(path) -> Dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([ConfigIssue("", 0, f"cannot read file: {exc}", str(p))]) from exc
    cfg, issues = validate_text(text, str(p))
    if issues:
        raise ConfigError(issues)
    return cfg
