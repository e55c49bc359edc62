"""Qudit applications: MUBs, high-dimensional BB84 and direct-inversion tomography."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, PreconditionError, UnsupportedDimensionError
from .field import GridSpec
from .modes import DEFAULT_WAIST, ModeSpec, Superposition, mode_field
from .propagation import DEFAULT_SPACING
from .wfm import WfmConfig

ORTHONORMAL_TOL = 1e-8


def qudit_modes(waist: float = DEFAULT_WAIST) -> list[ModeSpec]:
    """The seven LG modes |1>..|7> used for the qudit experiments, as (l, p)."""
    lp = [(-1, 1), (-1, 0), (0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]
    return [ModeSpec("LG", l, p, waist) for l, p in lp]


@dataclass(frozen=True)
class ModeBasis:
    specs: tuple = field(default_factory=lambda: tuple(qudit_modes()))

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if len(self.specs) < 2:
            raise ValueError("a mode basis needs at least two modes")
        if len(set(self.specs)) != len(self.specs):
            raise ValueError("mode basis contains repeated modes")

    @property
    def d(self) -> int:
        return len(self.specs)

    def state_spec(self, amplitudes) -> ModeSpec | Superposition:
        """Field spec for a state given by its amplitudes on this basis."""
        amps = np.asarray(amplitudes, dtype=complex)
        nz = np.flatnonzero(np.abs(amps) > 0)
        if len(nz) == 1 and amps[nz[0]] == 1:
            return self.specs[nz[0]]
        return Superposition(tuple(amps[nz]), tuple(self.specs[i] for i in nz))


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % k for k in range(2, math.isqrt(n) + 1))


@dataclass(frozen=True, eq=False)
class MubSet:
    """``bases[k, n]`` is state ``n`` of basis ``k`` (basis 0 computational)."""

    d: int
    bases: np.ndarray

    def projector(self, k: int, n: int) -> np.ndarray:
        v = self.bases[k, n]
        return np.outer(v, v.conj())


def mub_states(d: int) -> MubSet:
    """Complete set of d+1 mutually unbiased bases for prime ``d``.

    Basis ``k >= 1`` has amplitudes ``w^(n m + (k-1) m^2) / sqrt(d)`` with
    ``w = exp(2 pi i / d)``; ``k = 1`` is the Fourier basis. For ``d = 2``
    the quadratic term is taken with ``i`` instead of ``w = -1``, which
    otherwise would repeat the Fourier basis.
    """
    if not is_prime(d):
        raise UnsupportedDimensionError(f"MUB construction needs a prime dimension, got {d}")
    m = np.arange(d)
    n = m[:, None]
    bases = np.empty((d + 1, d, d), dtype=complex)
    bases[0] = np.eye(d)
    for k in range(1, d + 1):
        if d == 2:
            phase = np.pi * n * m + np.pi / 2 * (k - 1) * m**2
        else:
            # reduce the exponent mod d before scaling so phases stay exact
            phase = 2 * np.pi * ((n * m + (k - 1) * m**2) % d) / d
        bases[k] = np.exp(1j * phase) / np.sqrt(d)
    return MubSet(d, bases)


def shannon_entropy_d(x: float, d: int) -> float:
    """d-dimensional Shannon entropy ``-x log2(x/(d-1)) - (1-x) log2(1-x)``."""
    if not 0 <= x <= 1:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if d < 2:
        raise DomainError(f"d must be >= 2, got {d}")
    h = 0.0
    if x > 0:
        # split the log so a subnormal x cannot underflow to log2(0)
        h -= x * (math.log2(x) - math.log2(d - 1))
    if x < 1:
        h -= (1 - x) * math.log2(1 - x)
    return h


def secret_key_rate(e_b: float, d: int) -> float:
    """Secret key bits per sifted photon, ``log2(d) - 2 h_d(e_b)``; may be negative."""
    if not 0 <= e_b <= 1:
        raise DomainError(f"error rate must lie in [0, 1], got {e_b}")
    return math.log2(d) - 2 * shannon_entropy_d(e_b, d)


def _check_orthonormal(basis: np.ndarray):
    gram = basis.conj() @ basis.T
    if not np.allclose(gram, np.eye(len(basis)), atol=ORTHONORMAL_TOL):
        raise PreconditionError("measurement basis is not orthonormal")


def born_probabilities(psi, basis) -> np.ndarray:
    """``|<b_i|psi>|^2`` for every row ``b_i`` of ``basis``."""
    psi = np.asarray(psi, dtype=complex)
    basis = np.asarray(basis, dtype=complex)
    if abs(np.vdot(psi, psi).real - 1) > ORTHONORMAL_TOL:
        raise PreconditionError("state vector is not normalized")
    _check_orthonormal(basis)
    return np.abs(basis.conj() @ psi) ** 2


def density(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def reconstruct_density(P, mubs: MubSet) -> np.ndarray:
    """Direct inversion ``rho = sum_{k,n} P[k,n] |phi_kn><phi_kn| - 1``.

    No positivity constraint is imposed; noisy data can give negative
    eigenvalues.
    """
    P = np.asarray(P, dtype=float)
    d = mubs.d
    if P.shape != (d + 1, d):
        raise PreconditionError(f"expected a {(d + 1, d)} probability table, got {P.shape}")
    sums = P.sum(axis=1)
    if np.any(np.abs(sums - 1) > 1e-6):
        raise PreconditionError(f"probabilities must sum to 1 per basis, got {sums}")
    V = mubs.bases.reshape(-1, d)
    rho = (V.T * P.ravel()) @ V.conj() - np.eye(d)
    return 0.5 * (rho + rho.conj().T)


def _check_density(rho, name):
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise PreconditionError(f"{name} is not square")
    if not np.allclose(rho, rho.conj().T, atol=1e-10):
        raise PreconditionError(f"{name} is not Hermitian")


def _pure_vector(rho):
    """State vector of a rank-one density matrix, else None."""
    w, v = np.linalg.eigh(rho)
    if abs(w[-1] - 1) < 1e-10 and np.all(np.abs(w[:-1]) < 1e-10):
        return v[:, -1]
    return None


def fidelity(rho_exp, rho_th) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho_exp) rho_th sqrt(rho_exp)))^2``.

    A pure ``rho_th = |psi><psi|`` takes the equivalent shortcut
    ``<psi|rho_exp|psi>``, and by symmetry so does a pure ``rho_exp``.
    Otherwise negative eigenvalues of the inputs are clamped to zero
    before the square roots.
    """
    rho_exp = np.asarray(rho_exp, dtype=complex)
    rho_th = np.asarray(rho_th, dtype=complex)
    _check_density(rho_exp, "rho_exp")
    _check_density(rho_th, "rho_th")
    psi = _pure_vector(rho_th)
    other = rho_exp
    if psi is None:
        psi, other = _pure_vector(rho_exp), rho_th
    if psi is not None:
        F = np.vdot(psi, other @ psi).real
    else:
        we, ve = np.linalg.eigh(rho_exp)
        sq = (ve * np.sqrt(np.clip(we, 0, None))) @ ve.conj().T
        inner = sq @ rho_th @ sq
        ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
        F = np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2
    return float(np.clip(F, 0.0, 1.0 + 1e-6))


# -- BB84 ---------------------------------------------------------------------

@dataclass(frozen=True)
class BB84Result:
    error_rate: float
    key_rate: float
    n_rounds: int
    sifted: int
    errors: int
    d: int

    @property
    def sifted_fraction(self) -> float:
        return self.sifted / self.n_rounds

    @property
    def efficiency_factor(self) -> float:
        # a single-outcome projector only fires for one of d outcomes
        return 1.0 / self.d

    def to_dict(self) -> dict:
        return {
            "error_rate": self.error_rate,
            "key_rate": self.key_rate,
            "n_rounds": self.n_rounds,
            "sifted": self.sifted,
            "errors": self.errors,
            "sifted_fraction": self.sifted_fraction,
            "d": self.d,
            "single_outcome_efficiency_factor": self.efficiency_factor,
        }


def _channel_array(channel, d: int) -> np.ndarray:
    if channel is None or (isinstance(channel, str) and channel == "ideal"):
        return np.eye(2 * d)
    values = getattr(channel, "values", channel)
    C = np.asarray(values, dtype=float)
    if C.shape != (2 * d, 2 * d):
        raise PreconditionError(f"channel must be {2 * d}x{2 * d}, got {C.shape}")
    if np.any(C < 0) or np.any(C > 1 + 1e-6):
        raise PreconditionError("channel couplings must lie in [0, 1]")
    return np.clip(C, 0.0, 1.0)


def simulate_bb84(
    basis_a: ModeBasis | int = ModeBasis(),
    n_rounds: int = 100_000,
    seed: int = 0,
    channel=None,
) -> BB84Result:
    """Monte Carlo run of two-basis d-dimensional BB84 with single-outcome detection.

    Per round Alice sends a uniform (basis, state) and Bob sets a uniform
    (basis, projector); the detector fires with the channel coupling
    ``C[projector, sent]``, states indexed computational first, Fourier
    second. Rounds count toward the sifted key when the bases agree and
    the detector fires.
    """
    d = basis_a if isinstance(basis_a, int) else basis_a.d
    if n_rounds <= 0:
        raise ValueError("n_rounds must be positive")
    C = _channel_array(channel, d)
    rng = np.random.default_rng(seed)
    a_basis = rng.integers(0, 2, n_rounds)
    a_state = rng.integers(0, d, n_rounds)
    b_basis = rng.integers(0, 2, n_rounds)
    b_state = rng.integers(0, d, n_rounds)
    fire = rng.random(n_rounds) < C[b_basis * d + b_state, a_basis * d + a_state]
    kept = fire & (a_basis == b_basis)
    sifted = int(kept.sum())
    errors = int((kept & (a_state != b_state)).sum())
    e_b = errors / sifted if sifted else float("nan")
    R = secret_key_rate(e_b, d) if sifted else float("nan")
    return BB84Result(e_b, R, n_rounds, sifted, errors, d)


def analytic_error_rate(channel, d: int) -> float:
    """Expected sifted error rate for uniform state and projector choices."""
    C = _channel_array(channel, d)
    wrong = total = 0.0
    for b in range(2):
        block = C[b * d : (b + 1) * d, b * d : (b + 1) * d]
        total += block.sum()
        wrong += block.sum() - np.trace(block)
    return float(wrong / total)


# -- tomography -----------------------------------------------------------------

def sin_state(d: int = 7) -> np.ndarray:
    """Amplitudes proportional to sin(n pi / (d-1)), n = 0..d-1, normalized."""
    a = np.sin(np.arange(d) * np.pi / (d - 1))
    return a / np.linalg.norm(a)


@dataclass
class TomographyReport:
    state: np.ndarray
    probabilities: np.ndarray
    rho: np.ndarray
    fidelity: float
    projector_source: str
    converged: bool = True
    state_spec: str = ""

    def to_dict(self) -> dict:
        return {
            "state_spec": self.state_spec,
            "probabilities": self.probabilities.tolist(),
            "rho_real": self.rho.real.tolist(),
            "rho_imag": self.rho.imag.tolist(),
            "fidelity": self.fidelity,
            "projector_source": self.projector_source,
            "converged": self.converged,
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    def write_csv(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        re_path = prefix.with_name(prefix.name + "_real.csv")
        im_path = prefix.with_name(prefix.name + "_imag.csv")
        np.savetxt(re_path, self.rho.real, delimiter=",", fmt="%.12g")
        np.savetxt(im_path, self.rho.imag, delimiter=",", fmt="%.12g")
        return re_path, im_path


def run_tomography(
    psi,
    projector_source: str = "ideal",
    *,
    basis: ModeBasis = ModeBasis(),
    grid: GridSpec = GridSpec(),
    cfg: WfmConfig = WfmConfig(),
    spacings: Optional[Sequence[float]] = None,
    target_waist: Optional[float] = None,
    store=None,
    state_spec: str = "",
) -> TomographyReport:
    """Measure ``psi`` in all d+1 MUBs, reconstruct by direct inversion, score fidelity.

    ``"ideal"`` uses Born-rule probabilities. ``"wfm"`` synthesizes each MUB
    state as a field, designs its converter and couples the field of
    ``psi`` through it; raw couplings are normalized per basis.
    """
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    d = basis.d
    if psi.shape != (d,):
        raise PreconditionError(f"state has {psi.size} amplitudes, basis has {d} modes")
    mubs = mub_states(d)
    converged = True
    if projector_source == "ideal":
        P = np.array([born_probabilities(psi, mubs.bases[k]) for k in range(d + 1)])
    elif projector_source == "wfm":
        from .projector import DesignStore, project

        store = DesignStore() if store is None else store
        spacings = [DEFAULT_SPACING] * cfg.n_planes if spacings is None else list(spacings)
        target_waist = basis.specs[0].waist if target_waist is None else target_waist
        field_psi = mode_field(basis.state_spec(psi), grid)
        raw = np.zeros((d + 1, d))
        for k in range(d + 1):
            for n in range(d):
                spec = basis.state_spec(mubs.bases[k, n])
                design = store.get(spec, grid, cfg, spacings, target_waist)
                converged &= design.converged
                raw[k, n] = project(design, field_psi)
        P = raw / raw.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown projector source {projector_source!r}")
    rho = reconstruct_density(P, mubs)
    F = fidelity(rho, density(psi))
    return TomographyReport(psi, P, rho, F, projector_source, bool(converged), state_spec)
