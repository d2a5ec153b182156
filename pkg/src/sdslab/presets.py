"""Named measures, observables and circle maps available to configs and the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from . import expanding, spectral
from .torus_measure import GOLDEN, dirac, lebesgue, two_atom

__all__ = ["Preset", "MEASURES", "OBSERVABLES", "MAPS", "lookup", "listing"]


@dataclass(frozen=True)
class Preset:
    name: str
    build: Callable  # build(*float_args)
    summary: str


def _int(x: float) -> int:
    if x != int(x):
        raise ValueError(f"expected an integer argument, got {x!r}")
    return int(x)


MEASURES = {
    p.name: p
    for p in [
        Preset("dirac", lambda: dirac([0.0]), "point mass at 0; frozen chain, no mixing"),
        Preset("dirac-golden", lambda: dirac([GOLDEN]),
               "point mass at g = (sqrt5 - 1)/2; ergodic rotation, not mixing"),
        Preset("dirac-half", lambda: dirac([0.5]), "point mass at 1/2; period-2 orbit"),
        Preset("two-atom-golden", lambda: two_atom([0.0], [GOLDEN]),
               "(delta_0 + delta_g)/2; mixing Diophantine with tau = 1"),
        Preset("two-atom-half", lambda: two_atom([0.0], [0.5]),
               "(delta_0 + delta_1/2)/2; rational, fails the ergodic condition"),
        Preset("lebesgue", lambda dim=1: lebesgue(_int(dim)),
               "uniform measure [dim]; mu_hat(k) = 0 for k != 0"),
    ]
}

OBSERVABLES = {
    p.name: p
    for p in [
        Preset("cos", lambda: spectral.cos_observable(), "cos(2 pi theta)"),
        Preset("sqrt2cos", lambda: spectral.cos_observable(math.sqrt(2.0)),
               "sqrt(2) cos(2 pi theta); unit variance under Lebesgue"),
        Preset("harmonic", lambda k=1: spectral.harmonic(_int(k)), "cos(2 pi k theta) [k]"),
        Preset("sum_cos_k2", lambda K=64: spectral.sum_cos_k2(_int(K)),
               "sum_{k=1..K} cos(2 pi k theta) / k^2 [K, default 64]"),
        Preset("triangle", lambda K=63: spectral.triangle_observable(_int(K)),
               "zero-mean tent 1 - 4 dist(theta, Z), odd harmonics up to K [K, default 63]"),
    ]
}

MAPS = {
    p.name: p
    for p in [
        Preset("doubling", lambda: expanding.doubling(), "lift 2x; g = 1"),
        Preset("tripling", lambda: expanding.tripling(), "lift 3x; g = 1"),
        Preset("perturbed2", lambda eps=0.5: expanding.perturbed2(eps),
               "lift 2x + eps sin(2 pi x)/(2 pi) [eps, default 0.5]"),
    ]
}

_KINDS = {"measure": MEASURES, "observable": OBSERVABLES, "map": MAPS}


def lookup(kind: str, name: str) -> Preset:
    table = _KINDS[kind]
    if name not in table:
        raise KeyError(f"unknown {kind} preset {name!r}")
    return table[name]


def listing() -> str:
    lines = []
    for kind, table in _KINDS.items():
        lines.append(f"{kind}s:")
        for name in sorted(table):
            lines.append(f"  {name:<16} {table[name].summary}")
    return "\n".join(lines) + "\n"
