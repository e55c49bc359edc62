"""Laguerre-Gauss, Hermite-Gauss and superposition fields at the waist plane."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import eval_genlaguerre, eval_hermite

from .errors import DegenerateFieldError, TruncationError
from .field import ComplexField, GridSpec, normalize

DEFAULT_WAIST = 0.94e-3

# power allowed to fall outside the grid before a mode counts as truncated
TRUNCATION_TOL = 1e-4


@dataclass(frozen=True)
class ModeSpec:
    """One LG (index1=l, index2=p) or HG (index1=n, index2=m) mode."""

    family: str
    index1: int
    index2: int
    waist: float = DEFAULT_WAIST

    def __post_init__(self):
        fam = str(self.family).upper()
        if fam not in ("LG", "HG"):
            raise ValueError(f"unknown mode family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam == "LG" and self.index2 < 0:
            raise ValueError("LG radial index p must be >= 0")
        if fam == "HG" and (self.index1 < 0 or self.index2 < 0):
            raise ValueError("HG indices must be >= 0")
        if not self.waist > 0:
            raise ValueError("waist must be positive")

    @property
    def label(self) -> str:
        return f"{self.family}({self.index1},{self.index2})"

    def token(self) -> str:
        return f"{self.family}:{self.index1},{self.index2}:{self.waist * 1e3:.6g}"

    @classmethod
    def parse(cls, token: str) -> "ModeSpec":
        """Parse ``"LG:l,p:waist_mm"`` or ``"HG:n,m:waist_mm"`` (waist optional)."""
        m = re.fullmatch(r"\s*(LG|HG)\s*:\s*(-?\d+)\s*,\s*(-?\d+)\s*(?::\s*([0-9.eE+-]+)\s*)?", token, re.I)
        if not m:
            raise ValueError(f"cannot parse mode token {token!r}")
        waist = float(m.group(4)) * 1e-3 if m.group(4) else DEFAULT_WAIST
        return cls(m.group(1), int(m.group(2)), int(m.group(3)), waist)


@dataclass(frozen=True)
class Superposition:
    coefficients: tuple
    specs: tuple

    def __post_init__(self):
        coeffs = tuple(complex(c) for c in self.coefficients)
        specs = tuple(self.specs)
        if len(coeffs) != len(specs):
            raise ValueError("coefficients and specs differ in length")
        if not specs:
            raise ValueError("empty superposition")
        if len({s.waist for s in specs}) > 1:
            raise ValueError("all modes of a superposition must share one waist")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "specs", specs)

    @property
    def waist(self) -> float:
        return self.specs[0].waist

    def to_json(self) -> list:
        return [{"re": c.real, "im": c.imag, "spec": s.token()} for c, s in zip(self.coefficients, self.specs)]

    @classmethod
    def from_json(cls, data) -> "Superposition":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(
            tuple(complex(d["re"], d.get("im", 0.0)) for d in data),
            tuple(ModeSpec.parse(d["spec"]) for d in data),
        )


InputSpec = Union[ModeSpec, Superposition]


def spec_to_json(spec: InputSpec):
    """JSON-ready form: a token string for a mode, a list for a superposition."""
    if isinstance(spec, ModeSpec):
        return spec.token()
    return spec.to_json()


def spec_from_json(data) -> InputSpec:
    if isinstance(data, str):
        return ModeSpec.parse(data)
    return Superposition.from_json(data)


def _finish(grid: GridSpec, u: np.ndarray, what: str) -> ComplexField:
    # u carries the analytic normalization, so its grid power is the captured fraction
    captured = float(np.sum(np.abs(u) ** 2) * grid.pitch**2)
    if 1.0 - captured > TRUNCATION_TOL:
        raise TruncationError(f"{what}: only {captured:.6f} of the power fits on the grid")
    u.flags.writeable = False
    return normalize(ComplexField(grid, u))


def lg_mode(spec: ModeSpec, grid: GridSpec) -> ComplexField:
    """Unit-power LG_{l,p} at its waist."""
    if spec.family != "LG":
        raise ValueError(f"lg_mode needs an LG spec, got {spec.family}")
    l, p, w = spec.index1, spec.index2, spec.waist
    al = abs(l)
    R, PHI = grid.polar()
    norm = math.sqrt(2 * math.factorial(p) / (math.pi * math.factorial(p + al))) / w
    rho = math.sqrt(2) * R / w
    radial = norm * rho**al * eval_genlaguerre(p, al, rho**2) * np.exp(-((R / w) ** 2))
    u = radial * np.exp(1j * l * PHI) if l else radial.astype(np.complex128)
    return _finish(grid, u, spec.label)


def _hermite_1d(n: int, x: np.ndarray, w: float) -> np.ndarray:
    c = (2 / math.pi) ** 0.25 / math.sqrt(w * 2**n * math.factorial(n))
    s = math.sqrt(2) * x / w
    return c * eval_hermite(n, s) * np.exp(-((x / w) ** 2))


def hg_mode(spec: ModeSpec, grid: GridSpec) -> ComplexField:
    """Unit-power HG_{n,m} at its waist.

    ``n`` counts vertical nodal lines (sign changes along x) and ``m``
    horizontal ones (sign changes along y).
    """
    if spec.family != "HG":
        raise ValueError(f"hg_mode needs an HG spec, got {spec.family}")
    n, m, w = spec.index1, spec.index2, spec.waist
    x = (np.arange(grid.nx) - grid.nx // 2) * grid.pitch
    y = (np.arange(grid.ny) - grid.ny // 2) * grid.pitch
    u = np.outer(_hermite_1d(m, y, w), _hermite_1d(n, x, w)).astype(np.complex128)
    return _finish(grid, u, spec.label)


def gaussian(grid: GridSpec, waist: float = DEFAULT_WAIST) -> ComplexField:
    return lg_mode(ModeSpec("LG", 0, 0, waist), grid)


def mode_field(spec: InputSpec, grid: GridSpec) -> ComplexField:
    """Synthesize any input spec (single mode or superposition)."""
    if isinstance(spec, Superposition):
        return superpose(spec, grid)
    if spec.family == "LG":
        return lg_mode(spec, grid)
    return hg_mode(spec, grid)


def superpose(s: Superposition, grid: GridSpec) -> ComplexField:
    """Unit-power sum of ``c_i * mode_i`` over the superposition's modes."""
    if not any(abs(c) > 0 for c in s.coefficients):
        raise DegenerateFieldError("all superposition coefficients are zero")
    u = np.zeros(grid.shape, dtype=np.complex128)
    for c, spec in zip(s.coefficients, s.specs):
        if c != 0:
            u += c * mode_field(spec, grid).amplitude
    u.flags.writeable = False
    return normalize(ComplexField(grid, u))


def lg_set(waist: float = DEFAULT_WAIST) -> list[ModeSpec]:
    """The nine lowest LG modes, l in {-1, 0, 1} by p in {0, 1, 2}."""
    return [ModeSpec("LG", l, p, waist) for l in (-1, 0, 1) for p in (0, 1, 2)]


def hg_set(waist: float = DEFAULT_WAIST) -> list[ModeSpec]:
    """The nine lowest HG modes, n and m in {0, 1, 2}."""
    return [ModeSpec("HG", n, m, waist) for n in (0, 1, 2) for m in (0, 1, 2)]


def gram_matrix(fields: Sequence[ComplexField]) -> np.ndarray:
    stack = np.stack([f.amplitude.ravel() for f in fields])
    return (stack.conj() @ stack.T) * fields[0].grid.pitch**2
