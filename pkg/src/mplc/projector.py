"""Simulated projective measurements through a converter and a single-mode fiber."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateFieldError, FileFormatError, GridMismatchError, PreconditionError
from .field import ComplexField, GridSpec, PhaseMask, inner_product
from .modes import DEFAULT_WAIST, InputSpec, gram_matrix, mode_field, spec_to_json
from .propagation import forward_pass
from .wfm import (
    ConverterDesign,
    WfmConfig,
    design_converter,
    fiber_target,
    load_converter,
    save_converter,
)

log = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-3


@dataclass(frozen=True)
class ThroughputModel:
    per_plane_efficiency: float = 0.75
    n_planes: int = 3
    fiber_coupling: float = 1.0

    def __post_init__(self):
        for name in ("per_plane_efficiency", "fiber_coupling"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.n_planes < 0:
            raise ValueError("n_planes must be >= 0")

    @property
    def total(self) -> float:
        return self.per_plane_efficiency**self.n_planes * self.fiber_coupling


def throughput(model: ThroughputModel) -> float:
    """Fraction of input light detected after every SLM plane and the fiber."""
    return model.total


def project(
    design: ConverterDesign,
    field: ComplexField,
    *,
    shift_px: tuple[int, int] = (0, 0),
    waist_scale: float = 1.0,
) -> float:
    """Fiber-coupling probability of ``field`` after the converter.

    ``shift_px`` displaces every mask laterally by ``(dx, dy)`` pixels and
    ``waist_scale`` rescales the fiber mode waist; both model misalignment.
    """
    grid = field.grid
    if design.grid is not None and design.grid != grid:
        raise GridMismatchError("design and field grids differ")
    masks = list(design.masks)
    dx, dy = shift_px
    if dx or dy:
        masks = [PhaseMask(grid, np.roll(m.phase, (dy, dx), axis=(0, 1))) for m in masks]
    target = fiber_target(grid, design.target_waist * waist_scale, design.spacings)
    out = forward_pass(field, masks, list(design.spacings))[-1]
    return float(abs(inner_product(target, out)) ** 2)


def visibility(C) -> float:
    """Trace over grand sum of a cross-talk matrix."""
    values = np.asarray(C.values if isinstance(C, CrosstalkMatrix) else C, dtype=float)
    total = values.sum()
    if not total > 0:
        raise DegenerateFieldError("cross-talk matrix sums to zero")
    return float(np.trace(values) / total)


@dataclass
class CrosstalkMatrix:
    """``values[i, j]``: coupling of input mode ``j`` into projector ``i``."""

    labels: list
    values: np.ndarray
    converged: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        d = len(self.labels)
        if self.values.shape != (d, d):
            raise ValueError(f"values shape {self.values.shape} does not match {d} labels")
        if not self.converged:
            self.converged = [True] * d

    @property
    def visibility(self) -> float:
        return visibility(self)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.labels))
        for label, row in zip(self.labels, self.values):
            w.writerow([label] + [f"{v:.9g}" for v in row])
        buf.write(f"# visibility={self.visibility:.9g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source) -> "CrosstalkMatrix":
        """Parse CSV text or a path written by :meth:`to_csv`."""
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text(encoding="utf-8")
        rows = [r for r in csv.reader(l for l in text.splitlines() if l and not l.startswith("#"))]
        try:
            labels = rows[0][1:]
            if len(rows) - 1 != len(labels):
                raise FileFormatError(f"{len(labels)} column labels but {len(rows) - 1} rows")
            values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FileFormatError):
                raise
            raise FileFormatError(f"malformed cross-talk CSV: {exc}") from None
        if values.shape != (len(labels), len(labels)):
            raise FileFormatError(f"cross-talk matrix is not square: {values.shape}")
        return cls(labels, values)


class DesignStore:
    """Memo of converter designs, optionally backed by a directory of converter files.

    Designs are keyed by input spec, grid, plane spacings, fiber waist and
    WFM settings, so a file is only reused for an identical problem.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._memo: dict[str, ConverterDesign] = {}
        # wall-clock seconds per freshly computed design, by key
        self.timings: dict[str, float] = {}

    @staticmethod
    def key(spec: InputSpec, grid: GridSpec, cfg: WfmConfig, spacings, target_waist) -> str:
        blob = json.dumps(
            {
                "spec": spec_to_json(spec),
                "grid": [grid.nx, grid.ny, grid.pitch, grid.wavelength],
                "cfg": [cfg.n_planes, cfg.max_sweeps, cfg.target_overlap, cfg.active_region, cfg.update_offset],
                "spacings": [float(s) for s in spacings],
                "target_waist": float(target_waist),
            },
            sort_keys=True,
        )
        return hashlib.sha1(blob.encode()).hexdigest()[:20]

    def get(
        self,
        spec: InputSpec,
        grid: GridSpec,
        cfg: WfmConfig,
        spacings: Sequence[float],
        target_waist: float,
        field: Optional[ComplexField] = None,
    ) -> ConverterDesign:
        k = self.key(spec, grid, cfg, spacings, target_waist)
        if k in self._memo:
            return self._memo[k]
        path = self.directory / f"{k}.mplc" if self.directory is not None else None
        if path is not None and path.exists():
            design, _ = load_converter(path)
        else:
            field = mode_field(spec, grid) if field is None else field
            target = fiber_target(grid, target_waist, spacings)
            t0 = time.perf_counter()
            design = design_converter(field, target, cfg, spacings, input_spec=spec, target_waist=target_waist)
            self.timings[k] = time.perf_counter() - t0
            log.info("designed %s: overlap %.6f in %d sweeps", _label(spec), design.achieved_overlap, design.sweeps_used)
            if path is not None:
                save_converter(path, design)
        self._memo[k] = design
        return design

    def __len__(self):
        return len(self._memo)


def _label(spec) -> str:
    return getattr(spec, "label", "superposition")


def crosstalk_matrix(
    mode_set: Sequence[InputSpec],
    cfg: WfmConfig = WfmConfig(),
    *,
    grid: GridSpec = GridSpec(),
    spacings: Optional[Sequence[float]] = None,
    target_waist: float = DEFAULT_WAIST,
    labels: Optional[Sequence[str]] = None,
    store: Optional[DesignStore] = None,
    shift_px: tuple[int, int] = (0, 0),
    waist_scale: float = 1.0,
    groups: int = 1,
) -> CrosstalkMatrix:
    """Design a projector per mode and couple every mode through every projector.

    ``groups`` splits the set into that many equal consecutive blocks, such
    as the bases of a BB84 alphabet; modes need only be orthogonal within a
    block. Rows whose design did not converge are flagged in ``converged``;
    the matrix is returned regardless.
    """
    spacings = [0.80] * cfg.n_planes if spacings is None else list(spacings)
    labels = [_label(s) for s in mode_set] if labels is None else list(labels)
    store = DesignStore() if store is None else store
    fields = [mode_field(s, grid) for s in mode_set]
    d = len(fields)
    if groups < 1 or d % groups:
        raise ValueError(f"cannot split {d} modes into {groups} equal groups")
    size = d // groups
    for start in range(0, d, size):
        gram = gram_matrix(fields[start:start + size])
        off = np.abs(gram - np.diag(np.diag(gram)))
        if off.max() >= ORTHOGONALITY_TOL:
            raise PreconditionError(f"mode set not orthogonal on this grid (max |Gram| off-diagonal {off.max():.3g})")
    values = np.zeros((d, d))
    converged = []
    for i, spec in enumerate(mode_set):
        design = store.get(spec, grid, cfg, spacings, target_waist, field=fields[i])
        converged.append(design.converged)
        for j, f in enumerate(fields):
            values[i, j] = project(design, f, shift_px=shift_px, waist_scale=waist_scale)
    return CrosstalkMatrix(labels, values, converged)


def efficiency_csv(C: CrosstalkMatrix, model: ThroughputModel = ThroughputModel(), path=None) -> str:
    """Per-mode diagonal coupling and the detected fraction after SLM losses."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "coupling", "detected_fraction"])
    slm = model.per_plane_efficiency**model.n_planes
    for label, c in zip(C.labels, np.diag(C.values)):
        w.writerow([label, f"{c:.9g}", f"{c * slm:.9g}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
