"""Wavefront-matching design of multi-plane phase converters.

A converter maps one input mode onto the fiber Gaussian. Masks are stored
in the forward convention: a field passing plane ``t`` is multiplied by
``exp(1j * mask[t])``. The backward-travelling target therefore sees the
conjugate phase, which is the phase that enters the overlap field below.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateFieldError, FileFormatError, GridMismatchError, PreconditionError
from .field import (
    ComplexField,
    GridSpec,
    PhaseMask,
    _write_header,
    inner_product,
    power,
    read_header,
)
from .modes import DEFAULT_WAIST, InputSpec, gaussian, spec_from_json, spec_to_json
from .propagation import DEFAULT_SPACING, PropagationPlan, forward_pass

log = logging.getLogger(__name__)

# overlap samples weaker than this fraction of the peak carry only rounding noise
NEGLIGIBLE_OVERLAP = 1e-20


@dataclass(frozen=True)
class WfmConfig:
    n_planes: int = 3
    max_sweeps: int = 200
    target_overlap: float = 0.999
    # side length in pixels of the centered square the masks may modulate;
    # None means the whole computational grid
    active_region: Optional[int] = None
    update_offset: bool = True

    def __post_init__(self):
        if self.n_planes < 1:
            raise ValueError("n_planes must be >= 1")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not 0 < self.target_overlap <= 1:
            raise ValueError("target_overlap must lie in (0, 1]")
        if self.active_region is not None and self.active_region < 1:
            raise ValueError("active_region must be positive")


@dataclass(frozen=True, eq=False)
class ConverterDesign:
    masks: tuple
    spacings: tuple
    input_spec: Optional[InputSpec]
    target_waist: float
    achieved_overlap: float
    sweeps_used: int
    converged: bool = True
    history: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.masks) != len(self.spacings):
            raise ValueError("masks and spacings differ in length")
        object.__setattr__(self, "masks", tuple(self.masks))
        object.__setattr__(self, "spacings", tuple(float(s) for s in self.spacings))

    @property
    def n_planes(self) -> int:
        return len(self.masks)

    @property
    def grid(self) -> Optional[GridSpec]:
        return self.masks[0].grid if self.masks else None


def active_mask(grid: GridSpec, extent: Optional[int]) -> Optional[np.ndarray]:
    """Boolean map of the centered ``extent x extent`` modulation window."""
    if extent is None or (extent >= grid.nx and extent >= grid.ny):
        return None
    act = np.zeros(grid.shape, dtype=bool)
    x0 = grid.nx // 2 - extent // 2
    y0 = grid.ny // 2 - extent // 2
    act[max(y0, 0) : y0 + extent, max(x0, 0) : x0 + extent] = True
    return act


def fiber_target(grid: GridSpec, waist: float, spacings: Sequence[float]) -> ComplexField:
    """Fiber Gaussian at the converter output plane.

    The fiber's collimated mode has its waist referred to the converter
    input plane; it is carried through the unmodulated plane spacings so
    that an aligned Gaussian input couples with zero masks.
    """
    return _fiber_target(grid, float(waist), tuple(float(s) for s in spacings))


@lru_cache(maxsize=8)
def _fiber_target(grid, waist, spacings):
    return forward_pass(gaussian(grid, waist), [], list(spacings))[-1]


def _check(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def overlap_field(M_t: ComplexField, G_t: ComplexField, mask: PhaseMask) -> ComplexField:
    """Pointwise overlap ``conj(M) * G * exp(i * mask)`` of a mode pair."""
    _check(M_t, G_t)
    _check(M_t, mask)
    return ComplexField(M_t.grid, np.conj(M_t.amplitude) * G_t.amplitude * mask.phasor())


def phase_update(o_t: ComplexField, apply_offset: bool = True) -> PhaseMask:
    """Phase change ``-arg(o * exp(-i*phi))``, phi the circular mean of arg(o).

    The mean is intensity weighted, ``phi = arg(sum(o))``. Samples with no
    overlap get a zero change.
    """
    o = o_t.amplitude
    mag = np.abs(o)
    peak = mag.max()
    if peak == 0:
        raise DegenerateFieldError("overlap field is identically zero")
    phi = np.angle(o.sum()) if apply_offset else 0.0
    delta = -np.angle(o * np.exp(-1j * phi))
    delta[mag <= NEGLIGIBLE_OVERLAP * peak] = 0.0
    return PhaseMask(o_t.grid, delta)


def _matched_phasor(M, G, phasor, active, apply_offset):
    """Phasor form of one overlap + phase-update step.

    Equivalent to ``mask - phase_update(overlap_field(M, G, -mask))`` for a
    mask in forward convention, but avoids the angle/exp round trip.
    """
    o = np.conj(M) * G
    o_seen = o * np.conj(phasor)
    if active is not None:
        o_seen[~active] = 0
    mag = np.abs(o)
    peak = mag.max()
    if peak == 0:
        raise DegenerateFieldError("overlap field is identically zero")
    keep = mag <= NEGLIGIBLE_OVERLAP * peak
    if active is not None:
        keep |= ~active
    offset = np.exp(-1j * np.angle(o_seen.sum())) if apply_offset else 1.0
    mag[keep] = 1.0
    new = o * (offset / mag)
    new[keep] = phasor[keep]
    return new


def _assert_unit(f: ComplexField, name: str):
    p = power(f)
    if abs(p - 1.0) > 1e-6:
        raise PreconditionError(f"{name} must be unit-normalized (power={p:.9f})")


def design_converter(
    input: ComplexField,
    target: ComplexField,
    cfg: WfmConfig = WfmConfig(),
    spacings: Optional[Sequence[float]] = None,
    *,
    input_spec: Optional[InputSpec] = None,
    target_waist: float = DEFAULT_WAIST,
) -> ConverterDesign:
    """Run wavefront matching until ``cfg.target_overlap`` or ``cfg.max_sweeps``.

    Each sweep walks the target backward from the output plane, refitting
    masks ``n..1`` against the recorded forward fields, then walks the input
    forward through the new masks to re-record the fields for the next
    sweep. The overlap reported after a sweep is that of this forward field.

    ``target`` is the fiber mode at the output plane (see
    :func:`fiber_target`). An unconverged run is returned with
    ``converged=False`` rather than raising.
    """
    _check(input, target)
    _assert_unit(input, "input")
    _assert_unit(target, "target")
    grid = input.grid
    n = cfg.n_planes
    spacings = [DEFAULT_SPACING] * n if spacings is None else [float(s) for s in spacings]
    if len(spacings) != n:
        raise ValueError(f"need {n} spacings, got {len(spacings)}")
    plans = [PropagationPlan.build(grid, z) for z in spacings]
    back = [PropagationPlan.build(grid, -z) for z in spacings]
    act = active_mask(grid, cfg.active_region)
    area = grid.pitch**2

    phasors = [np.ones(grid.shape, dtype=np.complex128) for _ in range(n)]
    fields_in = [None] * n
    u = input.amplitude
    for t in range(n):
        fields_in[t] = u
        u = plans[t].apply(u * phasors[t])

    tgt = target.amplitude
    history = []
    t0 = time.perf_counter()
    for sweep in range(1, cfg.max_sweeps + 1):
        g = tgt
        for t in reversed(range(n)):
            g = back[t].apply(g)
            phasors[t] = _matched_phasor(fields_in[t], g, phasors[t], act, cfg.update_offset)
            g = g * np.conj(phasors[t])
        u = input.amplitude
        for t in range(n):
            fields_in[t] = u
            u = plans[t].apply(u * phasors[t])
        ov = float(abs(np.vdot(tgt, u) * area) ** 2)
        history.append(ov)
        log.debug("sweep %d overlap %.6f (%.1fs)", sweep, ov, time.perf_counter() - t0)
        if ov >= cfg.target_overlap:
            break

    masks = tuple(PhaseMask(grid, np.angle(p)) for p in phasors)
    design = ConverterDesign(
        masks=masks,
        spacings=tuple(spacings),
        input_spec=input_spec,
        target_waist=target_waist,
        achieved_overlap=0.0,
        sweeps_used=len(history),
        history=tuple(history),
    )
    # report the overlap of the masks as stored, so it is recomputable exactly
    achieved = conversion_overlap(design, input, target)
    converged = achieved >= cfg.target_overlap
    if not converged:
        log.warning("design unconverged after %d sweeps: overlap %.6f", len(history), achieved)
    return ConverterDesign(
        masks=masks,
        spacings=tuple(spacings),
        input_spec=input_spec,
        target_waist=target_waist,
        achieved_overlap=achieved,
        sweeps_used=len(history),
        converged=converged,
        history=tuple(history),
    )


def conversion_overlap(design: ConverterDesign, input: ComplexField, target: ComplexField) -> float:
    """``|<target | converter(input)>|^2``."""
    _check(input, target)
    out = forward_pass(input, list(design.masks), list(design.spacings))[-1]
    return float(abs(inner_product(target, out)) ** 2)


def quantize(design: ConverterDesign, levels: int = 256) -> ConverterDesign:
    """Copy of ``design`` with masks rounded to ``levels`` phase steps, like an SLM."""
    step = 2 * np.pi / levels
    masks = tuple(PhaseMask(m.grid, np.round(m.phase / step) * step) for m in design.masks)
    return ConverterDesign(
        masks, design.spacings, design.input_spec, design.target_waist,
        design.achieved_overlap, design.sweeps_used, design.converged, design.history,
    )


# -- converter files ----------------------------------------------------------

def save_converter(path, design: ConverterDesign) -> Path:
    path = Path(path)
    grid = design.grid
    meta = {
        "kind": "converter",
        "n_planes": design.n_planes,
        "spacings_m": list(design.spacings),
        "target_waist_m": design.target_waist,
        "achieved_overlap": design.achieved_overlap,
        "input_spec": None if design.input_spec is None else spec_to_json(design.input_spec),
        "sweeps_used": design.sweeps_used,
        "converged": design.converged,
        "nx": grid.nx if grid else None,
        "ny": grid.ny if grid else None,
        "pitch_m": grid.pitch if grid else None,
        "wavelength_m": grid.wavelength if grid else None,
    }
    with open(path, "wb") as fh:
        _write_header(fh, meta)
        for m in design.masks:
            fh.write(m.phase.astype("<f8").tobytes())
    return path


def load_converter(path) -> tuple[ConverterDesign, dict]:
    """Read a converter file; returns the design and its raw metadata."""
    with open(path, "rb") as fh:
        meta = read_header(fh)
        if meta.get("kind") != "converter":
            raise FileFormatError(f"expected kind 'converter', got {meta.get('kind')!r}")
        raw = fh.read()
    try:
        n = int(meta["n_planes"])
        spacings = [float(s) for s in meta["spacings_m"]]
        masks = []
        if n:
            grid = GridSpec(meta["nx"], meta["ny"], meta["pitch_m"], meta["wavelength_m"])
            data = np.frombuffer(raw, dtype="<f8")
            if data.size != n * grid.nx * grid.ny:
                raise FileFormatError(f"expected {n} masks of {grid.shape}, found {data.size} values")
            blocks = data.reshape(n, grid.ny, grid.nx)
            masks = [PhaseMask(grid, b) for b in blocks]
        spec = meta.get("input_spec")
        design = ConverterDesign(
            masks=tuple(masks),
            spacings=tuple(spacings),
            input_spec=None if spec is None else spec_from_json(spec),
            target_waist=float(meta["target_waist_m"]),
            achieved_overlap=float(meta["achieved_overlap"]),
            sweeps_used=int(meta.get("sweeps_used", 0)),
            converged=bool(meta.get("converged", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FileFormatError):
            raise
        raise FileFormatError(f"malformed converter metadata: {exc}") from None
    return design, meta

