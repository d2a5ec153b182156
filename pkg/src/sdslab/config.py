"""Experiment configs and definition files.

Everything is INI text read with :mod:`configparser` (``;`` or ``#`` comments,
indented continuation lines for multi-line values, no interpolation). One
``[experiment]`` section names the command, the master seed and the numeric
parameters. Measures, observables, maps and tabular window observables are
referenced by value:

* ``name args``  a built-in preset (``sdslab list-presets``), e.g. ``perturbed2 0.3``
* ``name``       a ``[measure name]`` / ``[observable name]`` / ``[map name]`` /
  ``[tabular name]`` section of the same file, which takes precedence
* ``@path``      a definition file (relative to the referring file) holding one
  such section; references inside it resolve within that file or to presets

Definition sections::

    [measure m]    kind = atomic   atoms = <one "x_1 .. x_d weight" per line>
                   kind = density  preset = lebesgue | resolution = R, dim = d, values = <R^d numbers>
                   kind = mixture  t = 0.3, first = <ref>, second = <ref>
                   kind = preset   preset = <name args>
    [observable o] preset = <name args>
                   or dim = d, coefficients = <one "k_1 .. k_d re im" per line>
    [map f]        preset = <name args>  or  degree = D, lift = <expression in x>
    [tabular t]    alphabet = <atoms>, weights = <optional>, window = w, harmonics = K,
                   table = <one "i_-w .. i_w : c_0 a_1 .. a_K b_1 .. b_K" per line>
                   or random_seed = S (standard normal table)

Atom weights must sum to 1 within 1e-9; they are then renormalised exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expanding, holonomy, presets
from .spectral import FourierObservable
from .torus_measure import AtomicMeasure, DensityMeasure, MixtureMeasure, lebesgue

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "WEIGHT_TOL"]

WEIGHT_TOL = 1e-9
COMMANDS = ("mixing", "ldt", "clt", "holonomy", "expanding", "dc-check")
DEF_KINDS = ("measure", "observable", "map", "tabular")


class ConfigError(ValueError):
    """A config problem, reported together with the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _reader(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   comment_prefixes=(";", "#"), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(source, f"unreadable config ({exc.__class__.__name__}: {exc})") from None
    return cp


def _canonical(cp: configparser.ConfigParser) -> dict:
    return {sec: {k: " ".join(v.split()) for k, v in sorted(cp[sec].items())} for sec in sorted(cp.sections())}


@dataclass
class _Source:
    """One parsed file plus the files it referenced, for resolution and hashing."""

    path: str
    cp: configparser.ConfigParser
    loaded: dict = field(default_factory=dict)  # path -> _Source

    def definition(self, kind: str, name: str):
        sec = f"{kind} {name}"
        return self.cp[sec] if self.cp.has_section(sec) else None


def _floats(key: str, text: str) -> list[float]:
    try:
        return [float(t) for t in text.split()]
    except ValueError:
        raise ConfigError(key, f"expected numbers, got {text!r}") from None


def _rows(key: str, text: str) -> list[list[float]]:
    rows = [_floats(key, line) for line in text.strip().splitlines() if line.strip()]
    if not rows:
        raise ConfigError(key, "no data lines")
    return rows


class _Resolver:
    def __init__(self, root: _Source):
        self.root = root

    def _file(self, src: _Source, key: str, rel: str) -> _Source:
        path = os.path.normpath(os.path.join(os.path.dirname(src.path), rel))
        if path not in self.root.loaded:
            try:
                with open(path, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(key, f"cannot read definition file {rel!r} ({exc.strerror})") from None
            self.root.loaded[path] = _Source(path, _reader(text, path))
        return self.root.loaded[path]

    def resolve(self, kind: str, key: str, ref: str, src: _Source | None = None, depth: int = 0):
        src = src or self.root
        ref = ref.strip()
        if not ref:
            raise ConfigError(key, f"empty {kind} reference")
        if depth > 8:
            raise ConfigError(key, "reference chain too deep")
        if ref.startswith("@"):
            if src is not self.root:
                raise ConfigError(key, "definition files cannot reference other files")
            sub = self._file(src, key, ref[1:].strip())
            secs = [s for s in sub.cp.sections() if s.split(" ", 1)[0] == kind]
            if len(secs) != 1:
                raise ConfigError(key, f"{ref[1:]!r} must hold exactly one [{kind} ...] section")
            return self._build(kind, f"[{secs[0]}]", sub.cp[secs[0]], sub, depth + 1)
        sec = src.definition(kind, ref)
        if sec is not None:
            return self._build(kind, f"[{kind} {ref}]", sec, src, depth + 1)
        return self._preset(kind, key, ref)

    def _preset(self, kind: str, key: str, ref: str):
        name, *args = ref.split()
        try:
            p = presets.lookup(kind, name)
        except KeyError:
            raise ConfigError(key, f"unknown {kind} {name!r} (not a preset or a [{kind} {name}] section)") from None
        try:
            return p.build(*_floats(key, " ".join(args)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"bad arguments for preset {name!r}: {exc}") from None

    def _build(self, kind: str, label: str, sec, src: _Source, depth: int):
        builder: Callable = getattr(self, f"_build_{kind}")
        try:
            return builder(label, sec, src, depth)
        except ConfigError:
            raise
        except (ValueError, TypeError, SyntaxError) as exc:
            raise ConfigError(label, str(exc)) from None

    @staticmethod
    def _need(label: str, sec, key: str) -> str:
        if key not in sec:
            raise ConfigError(f"{label} {key}", "missing")
        return sec[key]

    def _build_measure(self, label, sec, src, depth):
        kind = sec.get("kind", "preset" if "preset" in sec else "")
        if kind == "preset":
            return self._preset("measure", f"{label} preset", self._need(label, sec, "preset"))
        if kind == "atomic":
            key = f"{label} atoms"
            rows = _rows(key, self._need(label, sec, "atoms"))
            if len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
                raise ConfigError(key, "each atom line is 'x_1 .. x_d weight' with the same d")
            arr = np.array(rows)
            w = arr[:, -1]
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ConfigError(key, f"weights sum to {w.sum()!r}, not 1 within {WEIGHT_TOL:g}")
            return AtomicMeasure(arr[:, :-1], w / w.sum())
        if kind == "density":
            if "preset" in sec:
                if sec["preset"].split()[0] != "lebesgue":
                    raise ConfigError(f"{label} preset", "the only density preset is lebesgue")
                dim = int(sec.get("dim", "1"))
                res = sec.get("resolution")
                return lebesgue(dim, int(res) if res else None)
            res = int(self._need(label, sec, "resolution"))
            dim = int(sec.get("dim", "1"))
            vals = np.array(_floats(f"{label} values", self._need(label, sec, "values")))
            if vals.size != res**dim:
                raise ConfigError(f"{label} values", f"expected {res ** dim} values, got {vals.size}")
            total = vals.mean()
            if total <= 0:
                raise ConfigError(f"{label} values", "density has no mass")
            return DensityMeasure(vals.reshape((res,) * dim) / total)
        if kind == "mixture":
            t = float(self._need(label, sec, "t"))
            first = self.resolve("measure", f"{label} first", self._need(label, sec, "first"), src, depth)
            second = self.resolve("measure", f"{label} second", self._need(label, sec, "second"), src, depth)
            return MixtureMeasure(t, first, second)
        raise ConfigError(f"{label} kind", f"expected atomic, density, mixture or preset, got {kind!r}")

    def _build_observable(self, label, sec, src, depth):
        if "preset" in sec:
            return self._preset("observable", f"{label} preset", sec["preset"])
        key = f"{label} coefficients"
        dim = int(sec.get("dim", "1"))
        terms = {}
        for row in _rows(key, self._need(label, sec, "coefficients")):
            if len(row) != dim + 2 or any(v != int(v) for v in row[:dim]):
                raise ConfigError(key, f"each line is {dim} integer indices then re im")
            terms[tuple(int(v) for v in row[:dim])] = complex(row[dim], row[dim + 1])
        alpha = float(sec.get("holder_alpha", "1"))
        try:
            return FourierObservable.from_dict(terms, dim=dim, holder_alpha=alpha)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None

    def _build_map(self, label, sec, src, depth):
        grid = int(sec.get("grid", "2048"))
        if "preset" in sec:
            model = self._preset("map", f"{label} preset", sec["preset"])
            return model if grid == model.grid else _regrid(model, grid)
        degree = int(self._need(label, sec, "degree"))
        return expanding.map_from_expression(self._need(label, sec, "lift"), degree, grid=grid)

    def _build_tabular(self, label, sec, src, depth):
        alphabet = np.array(_floats(f"{label} alphabet", self._need(label, sec, "alphabet")))
        m = alphabet.size
        weights = np.array(_floats(f"{label} weights", sec.get("weights", " ".join(["1"] * m))))
        if "weights" not in sec:
            weights = weights / m
        if weights.size != m:
            raise ConfigError(f"{label} weights", f"expected {m} weights")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"{label} weights", f"weights sum to {weights.sum()!r}, not 1 within {WEIGHT_TOL:g}")
        w = int(self._need(label, sec, "window"))
        K = int(self._need(label, sec, "harmonics"))
        n_pat, n_basis = m ** (2 * w + 1), 2 * K + 1
        if "random_seed" in sec:
            table = np.random.default_rng(int(sec["random_seed"])).standard_normal((n_pat, n_basis))
        else:
            key = f"{label} table"
            table = np.full((n_pat, n_basis), np.nan)
            for line in self._need(label, sec, "table").strip().splitlines():
                if ":" not in line:
                    raise ConfigError(key, "each line is 'pattern : coefficients'")
                pat_txt, coef_txt = line.split(":", 1)
                pat = [int(v) for v in _floats(key, pat_txt)]
                coef = _floats(key, coef_txt)
                if len(pat) != 2 * w + 1 or any(not 0 <= v < m for v in pat) or len(coef) != n_basis:
                    raise ConfigError(key, f"bad table line {line.strip()!r}")
                idx = 0
                for v in pat:
                    idx = idx * m + v
                table[idx] = coef
            if np.isnan(table).any():
                raise ConfigError(key, f"table must list all {n_pat} symbol patterns")
        obs = holonomy.tabular_observable(alphabet, w, K, table, name=label)
        return TabularSpec(obs, AtomicMeasure(alphabet[:, None], weights / weights.sum()))


def _regrid(model: expanding.CircleMapModel, grid: int) -> expanding.CircleMapModel:
    return expanding.CircleMapModel(model.lift, model.lift_prime, model.degree, model.lambda_star,
                                    grid=grid, name=model.name)


@dataclass(frozen=True, eq=False)
class TabularSpec:
    observable: holonomy.WindowObservable
    symbol_measure: AtomicMeasure


@dataclass
class ExperimentConfig:
    """A parsed ``[experiment]`` section plus resolved references."""

    path: str
    command: str
    seed: int
    params: dict  # raw strings from [experiment]
    source: _Source
    _used: set = field(default_factory=set)

    # typed accessors; each names its key on failure

    def _raw(self, key: str, default=None) -> str:
        self._used.add(key)
        if key in self.params:
            return self.params[key]
        if default is None:
            raise ConfigError(f"[experiment] {key}", "missing")
        return default

    def has(self, key: str) -> bool:
        return key in self.params

    def text(self, key: str, default: str | None = None) -> str:
        return self._raw(key, default).strip()

    def int(self, key: str, default: int | None = None, minimum: int | None = None) -> int:
        raw = self._raw(key, None if default is None else str(default))
        try:
            v = int(raw)
        except ValueError:
            raise ConfigError(f"[experiment] {key}", f"expected an integer, got {raw!r}") from None
        if minimum is not None and v < minimum:
            raise ConfigError(f"[experiment] {key}", f"must be >= {minimum}")
        return v

    def float(self, key: str, default: float | None = None) -> float:
        raw = self._raw(key, None if default is None else repr(default))
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[experiment] {key}", f"expected a number, got {raw!r}") from None

    def floats(self, key: str, default: str | None = None) -> list[float]:
        vals = _floats(f"[experiment] {key}", self._raw(key, default))
        if not vals:
            raise ConfigError(f"[experiment] {key}", "empty list")
        return vals

    def ints(self, key: str, default: str | None = None) -> list[int]:
        """Integers, also accepting ``a:b`` (inclusive range) and ``a:b:s`` items."""
        out = []
        for item in self._raw(key, default).split():
            try:
                if ":" in item:
                    parts = [int(x) for x in item.split(":")]
                    lo, hi, step = (parts + [1])[:3]
                    out.extend(range(lo, hi + 1, step))
                else:
                    out.append(int(item))
            except ValueError:
                raise ConfigError(f"[experiment] {key}", f"bad integer item {item!r}") from None
        if not out:
            raise ConfigError(f"[experiment] {key}", "empty list")
        return out

    def ref(self, kind: str, key: str | None = None, default: str | None = None):
        key = key or kind
        return _Resolver(self.source).resolve(kind, f"[experiment] {key}", self._raw(key, default))

    def unused(self) -> list[str]:
        return sorted(set(self.params) - self._used - {"command", "seed"})

    def config_hash(self) -> str:
        blob = {"main": _canonical(self.source.cp), "seed": self.seed,
                "files": {os.path.basename(p): _canonical(s.cp) for p, s in sorted(self.source.loaded.items())}}
        blob["main"]["experiment"]["seed"] = str(self.seed)
        text = json.dumps(blob, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_config(text: str, path: str = "<config>", seed_override: int | None = None) -> ExperimentConfig:
    cp = _reader(text, path)
    for sec in cp.sections():
        head = sec.split(" ", 1)[0]
        if sec != "experiment" and (head not in DEF_KINDS or " " not in sec):
            raise ConfigError(f"[{sec}]", "unknown section (expected [experiment] or [<kind> <name>])")
    if not cp.has_section("experiment"):
        raise ConfigError("[experiment]", "missing section")
    params = dict(cp["experiment"])
    command = params.get("command", "").strip()
    if command not in COMMANDS:
        raise ConfigError("[experiment] command", f"expected one of {', '.join(COMMANDS)}, got {command!r}")
    if seed_override is not None:
        seed = seed_override
    else:
        if "seed" not in params:
            raise ConfigError("[experiment] seed", "missing (no entropy is taken from the environment)")
        try:
            seed = int(params["seed"], 0)
        except ValueError:
            raise ConfigError("[experiment] seed", f"expected an integer, got {params['seed']!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("[experiment] seed", "must be a 64-bit unsigned integer")
    return ExperimentConfig(path, command, seed, params, _Source(os.path.abspath(path), cp))


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(path, f"cannot read config ({exc.strerror})") from None
    return parse_config(text, path, seed_override)

