"""Band-limited angular-spectrum propagation between modulation planes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatchError
from .field import ComplexField, GridSpec, PhaseMask

DEFAULT_SPACING = 0.80


@dataclass(frozen=True, eq=False)
class PropagationPlan:
    """Precomputed transfer function for one grid and distance.

    ``transfer`` is stored in unshifted FFT order. Frequencies outside the
    band limit, and evanescent ones, are zero; everything else has unit
    modulus. A negative distance gives the exact complex conjugate.
    """

    grid: GridSpec
    distance: float
    transfer: np.ndarray

    @classmethod
    def build(cls, grid: GridSpec, distance: float) -> "PropagationPlan":
        return _plan(grid, float(distance))

    @property
    def band_limit(self) -> float:
        return band_limit(self.grid, self.distance)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Propagate a raw ``(ny, nx)`` amplitude array; returns a new array."""
        if self.distance == 0:
            return np.array(u, dtype=np.complex128)
        spec = sfft.fft2(u)
        spec *= self.transfer
        return sfft.ifft2(spec, overwrite_x=True)


def band_limit(grid: GridSpec, distance: float) -> float:
    """Largest |f_x|, |f_y| kept for a propagation over ``distance``.

    The grid extent plays the role of the source window in the usual
    sampling condition for the angular-spectrum transfer function, i.e.
    ``1 / (lambda * sqrt((2 * du * z)**2 + 1))`` with ``du = 1 / (2 L)``.
    """
    L = max(grid.extent)
    du = 1.0 / (2.0 * L)
    return 1.0 / (grid.wavelength * np.sqrt((2.0 * du * abs(distance)) ** 2 + 1.0))


@lru_cache(maxsize=8)
def _plan(grid: GridSpec, distance: float) -> PropagationPlan:
    fx = sfft.fftfreq(grid.nx, grid.pitch)
    fy = sfft.fftfreq(grid.ny, grid.pitch)
    FX, FY = np.meshgrid(fx, fy)
    arg = 1.0 / grid.wavelength**2 - FX**2 - FY**2
    # phase of the positive-distance transfer; negative distance conjugates it
    kz_z = 2 * np.pi * abs(distance) * np.sqrt(np.maximum(arg, 0.0))
    h = np.exp(1j * np.sign(distance) * kz_z) if distance else np.ones(grid.shape, dtype=np.complex128)
    ulim = band_limit(grid, distance)
    h[(arg <= 0) | (np.abs(FX) > ulim) | (np.abs(FY) > ulim)] = 0.0
    h.flags.writeable = False
    return PropagationPlan(grid, distance, h)


def propagate(a: ComplexField, distance: float) -> ComplexField:
    if distance == 0:
        return a
    out = PropagationPlan.build(a.grid, distance).apply(a.amplitude)
    out.flags.writeable = False
    return ComplexField(a.grid, out)


def _check_stack(grid: GridSpec, masks, spacings):
    if not masks:
        # an empty stack means plain cascaded propagation over the spacings
        return [PhaseMask.zeros(grid) for _ in spacings]
    if len(masks) != len(spacings):
        raise ValueError(f"{len(masks)} masks but {len(spacings)} spacings")
    for m in masks:
        if m.grid != grid:
            raise GridMismatchError("mask grid differs from field grid")
    return list(masks)


def forward_pass(a: ComplexField, masks: Sequence[PhaseMask], spacings: Sequence[float]) -> list[ComplexField]:
    """Fields at each plane just before its mask, then the output field.

    ``spacings[t]`` is the free-space distance after mask ``t``. An empty
    mask list propagates through the spacings unmodulated, so
    ``forward_pass(a, [], [z])`` is ``[a, propagate(a, z)]``.
    """
    masks = _check_stack(a.grid, masks, spacings)
    out = [a]
    u = a
    for mask, z in zip(masks, spacings):
        u = propagate(ComplexField(a.grid, _ro(u.amplitude * mask.phasor())), z)
        out.append(u)
    return out


def backward_pass(g: ComplexField, masks: Sequence[PhaseMask], spacings: Sequence[float]) -> list[ComplexField]:
    """Adjoint of :func:`forward_pass`, listed in plane order.

    ``g`` sits at the output plane. Entry ``t`` is the backward field at
    plane ``t`` on the same (pre-mask) side as ``forward_pass``'s entry
    ``t``; the last entry is ``g`` itself. Masks are undone with their
    conjugate phase, so feeding the forward output back recovers every
    forward entry.
    """
    masks = _check_stack(g.grid, masks, spacings)
    n = len(masks)
    out = [None] * (n + 1)
    out[n] = g
    u = g
    for t in reversed(range(n)):
        u = propagate(u, -spacings[t])
        u = ComplexField(g.grid, _ro(u.amplitude * np.conj(masks[t].phasor())))
        out[t] = u
    return out


def second_moment_waist(a: ComplexField) -> tuple[float, float]:
    """1/e^2 radii ``(w_x, w_y)`` from intensity second moments (D4-sigma / 2)."""
    X, Y = a.grid.coords()
    I = a.intensity
    total = I.sum()
    cx = (I * X).sum() / total
    cy = (I * Y).sum() / total
    sx2 = (I * (X - cx) ** 2).sum() / total
    sy2 = (I * (Y - cy) ** 2).sum() / total
    return 2 * float(np.sqrt(sx2)), 2 * float(np.sqrt(sy2))


def _ro(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr
