"""Complex scalar fields sampled on a uniform transverse grid.

The grid origin sits at sample ``(nx // 2, ny // 2)``; amplitudes are stored
row-major with shape ``(ny, nx)``, so ``amplitude[iy, ix]`` is the sample at
``x = (ix - nx/2) * pitch``, ``y = (iy - ny/2) * pitch``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DegenerateFieldError, FileFormatError, GridMismatchError

MAGIC = b"MPLC1\n"

DEFAULT_N = 1024
DEFAULT_PITCH = 8e-6
DEFAULT_WAVELENGTH = 808e-9


@dataclass(frozen=True)
class GridSpec:
    nx: int = DEFAULT_N
    ny: int = DEFAULT_N
    pitch: float = DEFAULT_PITCH
    wavelength: float = DEFAULT_WAVELENGTH

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if int(n) != n or n < 2 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 2, got {n!r}")
            object.__setattr__(self, name, int(n))
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "wavelength", float(self.wavelength))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extent(self) -> tuple[float, float]:
        """Physical width and height of the grid in meters."""
        return (self.nx * self.pitch, self.ny * self.pitch)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid ``(X, Y)`` of sample positions, read-only and cached."""
        return _coords(self)

    def polar(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid ``(R, PHI)`` of polar sample coordinates."""
        return _polar(self)


@lru_cache(maxsize=4)
def _coords(grid: GridSpec):
    x = (np.arange(grid.nx) - grid.nx // 2) * grid.pitch
    y = (np.arange(grid.ny) - grid.ny // 2) * grid.pitch
    X, Y = np.meshgrid(x, y)
    X.flags.writeable = False
    Y.flags.writeable = False
    return X, Y


@lru_cache(maxsize=4)
def _polar(grid: GridSpec):
    X, Y = _coords(grid)
    R = np.hypot(X, Y)
    PHI = np.arctan2(Y, X)
    R.flags.writeable = False
    PHI.flags.writeable = False
    return R, PHI


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex amplitude on a grid. Immutable: the array is made read-only."""

    grid: GridSpec
    amplitude: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitude)
        if a.dtype != np.complex128 or a.flags.writeable:
            # copy so later mutation of the caller's array cannot leak in
            a = np.array(a, dtype=np.complex128)
        if a.shape != self.grid.shape:
            raise GridMismatchError(f"amplitude shape {a.shape} != grid shape {self.grid.shape}")
        if not np.isfinite(a).all():
            raise ValueError("field contains non-finite samples")
        object.__setattr__(self, "amplitude", _readonly(a))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ComplexField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def scaled(self, factor: complex) -> "ComplexField":
        return ComplexField(self.grid, self.amplitude * factor)


@dataclass(frozen=True, eq=False)
class PhaseMask:
    """Real phase pattern for one modulation plane, wrapped into [-pi, pi)."""

    grid: GridSpec
    phase: np.ndarray

    def __post_init__(self):
        p = np.array(self.phase, dtype=np.float64)
        if p.shape != self.grid.shape:
            raise GridMismatchError(f"phase shape {p.shape} != grid shape {self.grid.shape}")
        if not np.isfinite(p).all():
            raise ValueError("phase mask contains non-finite values")
        object.__setattr__(self, "phase", _readonly(wrap_phase(p)))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "PhaseMask":
        return cls(grid, np.zeros(grid.shape))

    def phasor(self) -> np.ndarray:
        return np.exp(1j * self.phase)


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Wrap angles into [-pi, pi)."""
    w = np.mod(np.asarray(phase, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    # mod can round up to exactly 2*pi for inputs just below a multiple of 2*pi
    w[w >= np.pi] -= 2 * np.pi
    return w


def _check_grids(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def inner_product(a: ComplexField, b: ComplexField) -> complex:
    """Discrete overlap integral ``sum(conj(a) * b) * pitch**2``."""
    _check_grids(a, b)
    return complex(np.vdot(a.amplitude, b.amplitude) * a.grid.pitch**2)


def power(a: ComplexField) -> float:
    return float(np.vdot(a.amplitude, a.amplitude).real * a.grid.pitch**2)


def normalize(a: ComplexField) -> ComplexField:
    p = power(a)
    if not p > 0:
        raise DegenerateFieldError("cannot normalize a zero-power field")
    return ComplexField(a.grid, a.amplitude / np.sqrt(p))


def apply_phase(a: ComplexField, m: PhaseMask) -> ComplexField:
    _check_grids(a, m)
    return ComplexField(a.grid, a.amplitude * m.phasor())


# -- binary field files -----------------------------------------------------

def _write_header(fh, meta: dict) -> None:
    fh.write(MAGIC)
    fh.write(json.dumps(meta, separators=(",", ":")).encode("utf-8") + b"\n")


def read_header(fh) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise FileFormatError("missing MPLC1 magic")
    line = fh.readline()
    try:
        return json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"bad metadata line: {exc}") from None


def save_field(path, a: ComplexField) -> Path:
    path = Path(path)
    g = a.grid
    meta = {"kind": "field", "nx": g.nx, "ny": g.ny, "pitch_m": g.pitch, "wavelength_m": g.wavelength}
    with open(path, "wb") as fh:
        _write_header(fh, meta)
        fh.write(a.amplitude.astype("<c16").tobytes())
    return path


def load_field(path) -> ComplexField:
    with open(path, "rb") as fh:
        meta = read_header(fh)
        if meta.get("kind") != "field":
            raise FileFormatError(f"expected kind 'field', got {meta.get('kind')!r}")
        try:
            grid = GridSpec(meta["nx"], meta["ny"], meta["pitch_m"], meta["wavelength_m"])
        except KeyError as exc:
            raise FileFormatError(f"missing metadata key {exc}") from None
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != grid.nx * grid.ny:
        raise FileFormatError(f"expected {grid.nx * grid.ny} samples, found {data.size}")
    return ComplexField(grid, data.reshape(grid.shape).astype(np.complex128))
