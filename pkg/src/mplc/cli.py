"""Command-line driver: ``mplc {design,crosstalk,bb84,tomography,propagate}``.

Exit status: 0 success, 2 usage or parse error, 3 unconverged design,
4 file I/O or format error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FileFormatError, MplcError
from .field import GridSpec, save_field
from .modes import DEFAULT_WAIST, ModeSpec, hg_set, lg_set, mode_field
from .projector import CrosstalkMatrix, DesignStore, ThroughputModel, crosstalk_matrix, efficiency_csv
from .propagation import propagate, second_moment_waist
from .quantum import (
    ModeBasis,
    analytic_error_rate,
    mub_states,
    run_tomography,
    simulate_bb84,
    sin_state,
)
from .wfm import WfmConfig, design_converter, fiber_target, save_converter

log = logging.getLogger("mplc")

EXIT_OK, EXIT_USAGE, EXIT_UNCONVERGED, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    nx: int = 1024
    ny: int = 1024
    pitch_m: float = 8e-6
    wavelength_m: float = 808e-9
    waist_m: float = DEFAULT_WAIST
    target_waist_m: Optional[float] = None
    n_planes: int = 3
    spacings_m: tuple = (0.80,)
    target_overlap: float = 0.999
    max_sweeps: int = 200
    active_region: Optional[int] = None
    seed: int = 0
    rounds: int = 1_000_000
    output_dir: str = "mplc_out"
    cache_dir: Optional[str] = None

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.pitch_m, self.wavelength_m)

    @property
    def wfm(self) -> WfmConfig:
        return WfmConfig(self.n_planes, self.max_sweeps, self.target_overlap, self.active_region)

    @property
    def spacings(self) -> list[float]:
        s = [float(v) for v in self.spacings_m]
        if len(s) == 1:
            return s * self.n_planes
        if len(s) != self.n_planes:
            raise UsageError(f"{len(s)} spacings given for {self.n_planes} planes")
        return s

    @property
    def fiber_waist(self) -> float:
        return self.waist_m if self.target_waist_m is None else self.target_waist_m

    def validate(self):
        for name in ("pitch_m", "wavelength_m", "waist_m", "n_planes", "max_sweeps", "rounds", "nx", "ny"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if self.target_waist_m is not None and not self.target_waist_m > 0:
            raise UsageError("target_waist_m must be positive")
        if any(s <= 0 for s in self.spacings):
            raise UsageError("spacings must be positive")
        try:
            self.grid
            self.wfm
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def set(self, key: str, raw: str):
        """Assign one ``key=value`` setting, converting from text."""
        fields_ = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields_:
            raise UsageError(f"unknown config key {key!r}")
        raw = raw.strip()
        try:
            if key == "spacings_m":
                value = tuple(float(v) for v in raw.split(",") if v.strip())
            elif key in ("target_waist_m", "active_region", "cache_dir") and raw.lower() in ("", "none"):
                value = None
            elif key in ("nx", "ny", "n_planes", "max_sweeps", "seed", "rounds", "active_region"):
                value = int(raw)
            elif key in ("output_dir", "cache_dir"):
                value = raw
            else:
                value = float(raw)
        except ValueError:
            raise UsageError(f"bad value for {key}: {raw!r}") from None
        setattr(self, key, value)

    def snapshot(self) -> str:
        """``key=value`` text that reloads to this exact configuration."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "spacings_m":
                v = ",".join(repr(float(s)) for s in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def read_config_file(path, cfg: RunConfig) -> RunConfig:
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


@dataclass
class RunReport:
    command: str
    config: RunConfig
    timings: dict = field(default_factory=dict)
    overlaps: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)

    def write(self, out: Path) -> Path:
        path = out / f"report_{self.command}.json"
        snap = out / "config_snapshot.cfg"
        snap.write_text(self.config.snapshot(), encoding="utf-8")
        self.manifest += [str(snap), str(path)]
        doc = {
            "command": self.command,
            "config": dataclasses.asdict(self.config),
            "timings": self.timings,
            "overlaps": self.overlaps,
            "results": self.results,
            "manifest": self.manifest,
        }
        path.write_text(json.dumps(doc, indent=2, default=_json_default), encoding="utf-8")
        return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _store(cfg: RunConfig) -> DesignStore:
    return DesignStore(cfg.cache_dir)


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label).strip("_")


def mode_sets(token: str, waist: float):
    """Specs and labels for a named campaign."""
    if token == "lg9":
        specs = lg_set(waist)
        return specs, [s.label for s in specs]
    if token == "hg9":
        specs = hg_set(waist)
        return specs, [s.label for s in specs]
    if token == "mub14":
        basis = ModeBasis(tuple(ModeSpec(s.family, s.index1, s.index2, waist) for s in ModeBasis().specs))
        mubs = mub_states(basis.d)
        specs = [basis.state_spec(mubs.bases[k, n]) for k in (0, 1) for n in range(basis.d)]
        labels = [f"psi{n + 1}" for n in range(basis.d)] + [f"phi{n}" for n in range(basis.d)]
        return specs, labels
    raise UsageError(f"unknown mode set {token!r}; choose lg9, hg9 or mub14")


def parse_state(token: str, d: int = 7) -> np.ndarray:
    token = token.strip()
    if token == "sinstate":
        return sin_state(d)
    if token.startswith("comp:"):
        k = int(token[5:])
        if not 1 <= k <= d:
            raise UsageError(f"computational index must be in 1..{d}")
        v = np.zeros(d, dtype=complex)
        v[k - 1] = 1
        return v
    try:
        amps = np.array([complex(t.replace(" ", "")) for t in token.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse state {token!r}") from None
    if amps.size != d or not np.any(amps):
        raise UsageError(f"state needs {d} amplitudes, not all zero")
    return amps / np.linalg.norm(amps)


# -- commands -------------------------------------------------------------------

def cmd_design(args, cfg: RunConfig, out: Path) -> int:
    try:
        spec = ModeSpec.parse(args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = RunReport("design", cfg)
    t0 = time.perf_counter()
    grid = cfg.grid
    inp = mode_field(spec, grid)
    target = fiber_target(grid, cfg.fiber_waist, cfg.spacings)
    design = design_converter(inp, target, cfg.wfm, cfg.spacings, input_spec=spec, target_waist=cfg.fiber_waist)
    report.timings["design_s"] = time.perf_counter() - t0
    path = save_converter(out / f"converter_{_safe(spec.label)}.mplc", design)
    report.manifest.append(str(path))
    report.overlaps[spec.label] = design.achieved_overlap
    report.results = {"sweeps_used": design.sweeps_used, "converged": design.converged}
    report.write(out)
    print(f"{spec.label}: overlap {design.achieved_overlap:.6f} after {design.sweeps_used} sweeps"
          f"{'' if design.converged else ' (UNCONVERGED)'}")
    return EXIT_OK if design.converged else EXIT_UNCONVERGED


def cmd_crosstalk(args, cfg: RunConfig, out: Path) -> int:
    specs, labels = mode_sets(args.set, cfg.waist_m)
    report = RunReport("crosstalk", cfg)
    t0 = time.perf_counter()
    store = _store(cfg)
    C = crosstalk_matrix(
        specs, cfg.wfm, grid=cfg.grid, spacings=cfg.spacings, target_waist=cfg.fiber_waist,
        labels=labels, store=store, shift_px=(args.shift, 0), groups=2 if args.set == "mub14" else 1,
    )
    report.timings["crosstalk_s"] = time.perf_counter() - t0
    csv_path = out / f"crosstalk_{args.set}.csv"
    C.to_csv(csv_path)
    eff_path = out / f"efficiency_{args.set}.csv"
    efficiency_csv(C, ThroughputModel(n_planes=cfg.n_planes), eff_path)
    report.manifest += [str(csv_path), str(eff_path)]
    report.overlaps = {lab: float(C.values[i, i]) for i, lab in enumerate(labels)}
    report.results = {"visibility": C.visibility, "converged": C.converged}
    if args.set == "mub14":
        report.results["analytic_error_rate"] = analytic_error_rate(C.values, len(labels) // 2)
    report.write(out)
    print(f"{args.set}: visibility {C.visibility:.6f}")
    return EXIT_OK if all(C.converged) else EXIT_UNCONVERGED


def cmd_bb84(args, cfg: RunConfig, out: Path) -> int:
    d = ModeBasis().d
    if args.channel == "ideal":
        channel = None
    else:
        channel = CrosstalkMatrix.from_csv(Path(args.channel)).values
        if channel.shape != (2 * d, 2 * d):
            raise FileFormatError(f"channel matrix must be {2 * d}x{2 * d}, got {channel.shape}")
    report = RunReport("bb84", cfg)
    t0 = time.perf_counter()
    res = simulate_bb84(d, cfg.rounds, cfg.seed, channel)
    report.timings["bb84_s"] = time.perf_counter() - t0
    report.results = res.to_dict()
    report.results["channel"] = args.channel
    if channel is not None:
        report.results["analytic_error_rate"] = analytic_error_rate(channel, d)
    report.write(out)
    print(f"e_b = {res.error_rate:.6f}, R = {res.key_rate:.6f} bits per sifted photon "
          f"(sifted fraction {res.sifted_fraction:.4f})")
    return EXIT_OK


def cmd_tomography(args, cfg: RunConfig, out: Path) -> int:
    basis = ModeBasis(tuple(ModeSpec(s.family, s.index1, s.index2, cfg.waist_m) for s in ModeBasis().specs))
    psi = parse_state(args.state, basis.d)
    report = RunReport("tomography", cfg)
    t0 = time.perf_counter()
    tomo = run_tomography(
        psi, args.source, basis=basis, grid=cfg.grid, cfg=cfg.wfm, spacings=cfg.spacings,
        target_waist=cfg.fiber_waist, store=_store(cfg), state_spec=args.state,
    )
    report.timings["tomography_s"] = time.perf_counter() - t0
    json_path = tomo.write_json(out / "tomography.json")
    re_path, im_path = tomo.write_csv(out / "rho")
    report.manifest += [str(json_path), str(re_path), str(im_path)]
    report.results = {"fidelity": tomo.fidelity, "converged": tomo.converged, "source": args.source}
    report.write(out)
    print(f"fidelity {tomo.fidelity:.6f} ({args.source} projectors)")
    return EXIT_OK if tomo.converged else EXIT_UNCONVERGED


def cmd_propagate(args, cfg: RunConfig, out: Path) -> int:
    try:
        spec = ModeSpec.parse(args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = RunReport("propagate", cfg)
    f = propagate(mode_field(spec, cfg.grid), args.distance)
    wx, wy = second_moment_waist(f)
    path = save_field(out / f"field_{_safe(spec.label)}_z{args.distance:g}.mplc", f)
    report.manifest.append(str(path))
    report.results = {"distance_m": args.distance, "waist_x_m": wx, "waist_y_m": wy}
    report.write(out)
    print(f"second-moment waist at z={args.distance:g} m: {wx * 1e3:.6f} mm (x), {wy * 1e3:.6f} mm (y)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--planes", type=int, help="number of phase planes")
    common.add_argument("--grid", type=int, help="grid size N (N x N samples)")
    common.add_argument("--waist", type=float, metavar="MM", help="mode waist in mm")
    common.add_argument("--target-waist", type=float, metavar="MM", help="fiber mode waist in mm (default: --waist)")
    common.add_argument("--spacing", type=float, metavar="M", help="plane spacing in m (all planes)")
    common.add_argument("--rounds", type=int, help="BB84 rounds")
    common.add_argument("--max-sweeps", type=int)
    common.add_argument("--active-region", type=int, metavar="PX")
    common.add_argument("--cache", metavar="DIR", help="directory for reusable converter files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mplc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("design", parents=[common], help="design one converter")
    s.add_argument("mode", help='mode token, e.g. "LG:-1,1:0.94"')
    s = sub.add_parser("crosstalk", parents=[common], help="cross-talk matrix campaign")
    s.add_argument("set", choices=["lg9", "hg9", "mub14"])
    s.add_argument("--shift", type=int, default=0, metavar="PX", help="lateral mask misalignment")
    s = sub.add_parser("bb84", parents=[common], help="simulate 7-dimensional BB84")
    s.add_argument("channel", help='cross-talk CSV of the 14 states, or "ideal"')
    s = sub.add_parser("tomography", parents=[common], help="MUB state tomography")
    s.add_argument("state", help='"sinstate", "comp:K" or a comma list of 7 amplitudes')
    s.add_argument("--source", choices=["ideal", "wfm"], default="ideal")
    s = sub.add_parser("propagate", parents=[common], help="propagate a mode in free space")
    s.add_argument("mode")
    s.add_argument("--distance", type=float, required=True, metavar="M")
    return p


COMMANDS = {
    "design": cmd_design,
    "crosstalk": cmd_crosstalk,
    "bb84": cmd_bb84,
    "tomography": cmd_tomography,
    "propagate": cmd_propagate,
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        read_config_file(args.config, cfg)
    overrides = {
        "output_dir": args.out,
        "seed": args.seed,
        "n_planes": args.planes,
        "rounds": args.rounds,
        "max_sweeps": args.max_sweeps,
        "active_region": args.active_region,
        "cache_dir": args.cache,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.grid is not None:
        cfg.nx = cfg.ny = args.grid
    if args.waist is not None:
        cfg.waist_m = args.waist * 1e-3
    if args.target_waist is not None:
        cfg.target_waist_m = args.target_waist * 1e-3
    if args.spacing is not None:
        cfg.spacings_m = (args.spacing,)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except (UsageError, MplcError) as exc:
        code = EXIT_IO if isinstance(exc, FileFormatError) else EXIT_USAGE
        print(f"mplc: error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"mplc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
