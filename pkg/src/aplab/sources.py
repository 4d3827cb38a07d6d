"""Analytic source descriptors: power laws, constants and their sums.

Configs describe f and g as continuum objects so that a resolution sweep
samples the same function at every h.  A descriptor is a list of terms::

    [{"kind": "power", "center": [0, 0], "exponent": -0.5, "amplitude": 1.0},
     {"kind": "constant", "value": 2.0}]

A power term evaluates to amplitude * |x - center|^exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError
from .grid import GridDomain, ScalarField

__all__ = ["PowerTerm", "ConstantTerm", "AnalyticSource", "parse_source"]


@dataclass(frozen=True)
class PowerTerm:
    center: tuple
    exponent: float
    amplitude: float = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(x - np.asarray(self.center, float), axis=-1)
        if self.exponent == 0:
            return np.full(d.shape, self.amplitude)
        with np.errstate(divide="ignore"):
            return self.amplitude * d**self.exponent

    @property
    def singular(self) -> bool:
        return self.exponent < 0

    def to_dict(self) -> dict:
        return {"kind": "power", "center": list(self.center), "exponent": self.exponent,
                "amplitude": self.amplitude}


@dataclass(frozen=True)
class ConstantTerm:
    value: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[:-1], self.value)

    singular = False

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class AnalyticSource:
    terms: tuple

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1])
        for t in self.terms:
            out = out + t(x)
        return out

    @property
    def singular(self) -> bool:
        return any(t.singular for t in self.terms)

    @property
    def is_radial(self) -> bool:
        return all(isinstance(t, ConstantTerm) or not np.any(t.center) for t in self.terms)

    def radial(self, r: float) -> float:
        """Value at distance r from the origin; only meaningful when ``is_radial``."""
        total = 0.0
        for t in self.terms:
            if isinstance(t, ConstantTerm):
                total += t.value
            else:
                total += t.amplitude * (1.0 if t.exponent == 0 else r**t.exponent)
        return total

    def sample(self, domain: GridDomain, name: str) -> ScalarField:
        for t in self.terms:
            if isinstance(t, PowerTerm) and len(t.center) != domain.dim:
                raise ParameterError(f"{name}: center {list(t.center)} does not have {domain.dim} coordinates")
        values = self(domain.coords)
        if not np.all(np.isfinite(values)):
            raise DataError(f"{name}: analytic source is not finite at some cell center "
                            "(singular point on a cell center?)")
        return domain.sample(self, name=name, singular=self.singular)

    def to_list(self) -> list:
        return [t.to_dict() for t in self.terms]


def _num(d: dict, key: str, where: str, default=None) -> float:
    if key not in d:
        if default is None:
            raise ParameterError(f"{where}: missing key {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParameterError(f"{where}.{key}: expected a finite number, got {v!r}")
    return float(v)


def parse_source(desc, dim: int, where: str = "source") -> AnalyticSource:
    """Build an AnalyticSource from a number or a list of term dicts."""
    if isinstance(desc, (int, float)) and not isinstance(desc, bool):
        return AnalyticSource((ConstantTerm(float(desc)),))
    if isinstance(desc, dict):
        desc = [desc]
    if not isinstance(desc, Sequence) or isinstance(desc, str) or not desc:
        raise ParameterError(f"{where}: expected a number or a nonempty list of terms")
    terms = []
    for i, t in enumerate(desc):
        loc = f"{where}[{i}]"
        if not isinstance(t, dict):
            raise ParameterError(f"{loc}: expected an object")
        kind = t.get("kind")
        if kind == "constant":
            extra = set(t) - {"kind", "value"}
            if extra:
                raise ParameterError(f"{loc}: unknown keys {sorted(extra)}")
            terms.append(ConstantTerm(_num(t, "value", loc)))
        elif kind == "power":
            extra = set(t) - {"kind", "center", "exponent", "amplitude"}
            if extra:
                raise ParameterError(f"{loc}: unknown keys {sorted(extra)}")
            center = t.get("center", [0.0] * dim)
            if (not isinstance(center, Sequence) or len(center) != dim
                    or not all(isinstance(c, (int, float)) and math.isfinite(c) for c in center)):
                raise ParameterError(f"{loc}.center: expected {dim} finite coordinates")
            terms.append(PowerTerm(tuple(float(c) for c in center), _num(t, "exponent", loc),
                                   _num(t, "amplitude", loc, 1.0)))
        else:
            raise ParameterError(f"{loc}.kind: expected 'power' or 'constant', got {kind!r}")
    return AnalyticSource(tuple(terms))
