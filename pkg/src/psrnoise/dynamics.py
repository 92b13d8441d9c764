"""
Lindblad generator and Bloch drift system for a pumped multilevel atom.

Conventions
-----------
The density matrix is vectorized row-major, ``x[i*n + j] = rho[i, j]``.
Component ``(i, j)`` is the expectation value of the operator
``s_(i,j) = |j><i|``, so the same matrix ``M`` propagates both the
Schrodinger-picture vector ``x`` and the Heisenberg-picture operators:
``d s_a/dt = sum_b M[a, b] s_b``.

All rates and frequencies are in units of Gamma.  The frame rotates at the
pump frequency; ground levels keep their own energies relative to the
detuning-reference ground level.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
from scipy import linalg

from .angular import LevelScheme, PolarizationGeometry, SchemeError

logger = logging.getLogger(__name__)

LOSS_MODES = ("recycle", "open")


class SteadyStateError(RuntimeError):
    """Raised when the steady state is not unique or the solve is ill-conditioned."""


@dataclass(frozen=True)
class DriveConfig:
    """Pump and medium parameters, all frequencies in Gamma.

    Attributes
    ----------
    Omega_f : reduced Rabi frequency of the fine-structure transition.
    detuning : pump detuning from the scheme's reference transition.
    gamma0 : ground-state decoherence / transit rate.
    C : cooperativity of the medium.
    deltas : noise sideband frequencies.
    loss_mode : ``"recycle"`` re-injects decay into unmodeled ground levels
        uniformly over the modeled ground sublevels; ``"open"`` parks it in a
        shelf level that refills the ground at ``gamma0``.
    doppler_shift : k.v of the velocity class; the atom sees ``detuning - doppler_shift``.
    """

    Omega_f: float = 10.0
    detuning: float = 0.0
    gamma0: float = 0.01
    C: float = 100.0
    deltas: tuple = (0.2,)
    loss_mode: str = "recycle"
    doppler_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in np.atleast_1d(self.deltas)))
        self.validate()

    def validate(self) -> None:
        if not self.Omega_f >= 0:
            raise ValueError(f"Omega_f must be >= 0, got {self.Omega_f}")
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be > 0 (a zero rate leaves the steady state undetermined), got {self.gamma0}")
        if not self.C >= 0:
            raise ValueError(f"C must be >= 0, got {self.C}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if any(d < 0 for d in self.deltas):
            raise ValueError("noise frequencies must be >= 0")

    @property
    def effective_detuning(self) -> float:
        return self.detuning - self.doppler_shift

    def with_(self, **kw) -> "DriveConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Generator:
    """Hamiltonian and jump operators of the single-atom master equation."""

    H: np.ndarray
    jumps: tuple
    ground: np.ndarray
    excited: np.ndarray
    pump_raising: np.ndarray  # P^dagger, |e><g| part of the pump coupling
    vacuum_raising: np.ndarray  # V^dagger, |e><g| part of the vacuum-mode coupling
    labels: tuple = ()
    closed: bool = False

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """Master-equation right-hand side in matrix form."""
        out = -1j * (self.H @ rho - rho @ self.H)
        for L in self.jumps:
            LdL = L.conj().T @ L
            out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
        return out

    def adjoint_rhs(self, op: np.ndarray) -> np.ndarray:
        """Heisenberg-picture generator applied to an operator."""
        out = 1j * (self.H @ op - op @ self.H)
        for L in self.jumps:
            Ld = L.conj().T
            LdL = Ld @ L
            out += Ld @ op @ L - 0.5 * (LdL @ op + op @ LdL)
        return out


@dataclass(frozen=True)
class DriftSystem:
    """Linear Bloch system ``dx/dt = M x + b`` on the coherence vector.

    ``b`` is identically zero for the number-conserving models built here;
    it is kept so the steady-state solve handles affine systems.
    """

    generator: Generator
    M: np.ndarray
    b: np.ndarray
    rho_ss: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.generator.n

    @property
    def x_ss(self) -> np.ndarray:
        if self.rho_ss is None:
            raise SteadyStateError("steady state not solved yet")
        return self.rho_ss.reshape(-1)

    def ordering(self) -> List[tuple]:
        n = self.n
        return [(i, j) for i in range(n) for j in range(n)]


def superoperator(gen: Generator) -> np.ndarray:
    """Row-major Liouvillian matrix of ``gen``."""
    n = gen.n
    eye = np.eye(n)
    H = gen.H
    M = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for L in gen.jumps:
        LdL = L.conj().T @ L
        M += np.kron(L, L.conj()) - 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
    return M


def _coupling_matrix(scheme: LevelScheme, c: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n), dtype=complex)
    m = scheme.n
    for qi in range(3):
        if c[qi] != 0:
            out[:m, :m] += c[qi] * scheme.coupling.d[qi]
    return out


def build_generator(
    scheme: LevelScheme,
    drive: DriveConfig,
    geometry: PolarizationGeometry,
    *,
    Gamma: float = 1.0,
    closed: bool = False,
) -> DriftSystem:
    """Construct the generator and drift matrix for a driven scheme.

    Parameters
    ----------
    closed : bool
        Validation-only switch: drop every dissipative term, leaving the
        coherent pump dynamics.
    """
    if scheme.coupling.d.shape != (3, scheme.n, scheme.n):
        raise SchemeError("coupling tensor does not match the scheme dimension")
    if geometry.pump.shape != (3,) or geometry.vacuum.shape != (3,):
        raise SchemeError("polarization geometry must carry three spherical components")
    frame = scheme.metadata.get("frame", "propagation")
    if geometry.frame != frame:
        raise SchemeError(f"geometry frame {geometry.frame!r} does not match scheme frame {frame!r}")

    shelf = drive.loss_mode == "open" and np.any(scheme.loss > 0) and not closed
    n = scheme.n + (1 if shelf else 0)
    ground = scheme.ground
    excited = scheme.excited
    gref, eref = scheme.reference
    energies = scheme.energies
    omega_L = scheme.reference_frequency() + drive.effective_detuning

    diag = np.zeros(n)
    diag[ground] = energies[ground] - energies[gref]
    diag[excited] = energies[excited] - energies[gref] - omega_L

    P_up = _coupling_matrix(scheme, geometry.pump, n)
    V_up = _coupling_matrix(scheme, geometry.vacuum, n)
    H = np.diag(diag).astype(complex) - 0.5 * drive.Omega_f * (P_up + P_up.conj().T)

    jumps = []
    if not closed:
        m = scheme.n
        for qi in range(3):
            L = np.zeros((n, n), dtype=complex)
            L[:m, :m] = np.sqrt(Gamma) * scheme.coupling.d[qi].T
            if np.any(L):
                jumps.append(L)
        ng = len(ground)
        for e in excited:
            b = scheme.loss[e]
            if b <= 0:
                continue
            if shelf:
                L = np.zeros((n, n), dtype=complex)
                L[n - 1, e] = np.sqrt(Gamma * b)
                jumps.append(L)
            else:
                for g in ground:
                    L = np.zeros((n, n), dtype=complex)
                    L[g, e] = np.sqrt(Gamma * b / ng)
                    jumps.append(L)
        # transit-type relaxation: ground coherences decay at gamma0,
        # populations relax to uniform at gamma0
        sources = list(ground) + ([n - 1] if shelf else [])
        for g in ground:
            for s in sources:
                L = np.zeros((n, n), dtype=complex)
                L[g, s] = np.sqrt(drive.gamma0 / ng)
                jumps.append(L)

    labels = tuple(lv.label for lv in scheme.levels) + (("shelf",) if shelf else ())
    gen = Generator(
        H=H,
        jumps=tuple(jumps),
        ground=ground,
        excited=excited,
        pump_raising=P_up,
        vacuum_raising=V_up,
        labels=labels,
        closed=closed,
    )
    M = superoperator(gen)
    return DriftSystem(generator=gen, M=M, b=np.zeros(n * n, dtype=complex))


def steady_state(system: DriftSystem, *, tol: float = 1e-9) -> DriftSystem:
    """Solve ``M x + b = 0`` with unit trace and return a system carrying rho_ss."""
    n = system.n
    M = system.M
    trace_row = np.eye(n).reshape(-1)
    A = M.copy()
    rhs = -system.b.copy()
    r = int(system.generator.ground[0]) * (n + 1)
    A[r, :] = trace_row
    rhs[r] = 1.0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            lu = linalg.lu_factor(A, check_finite=False)
            x = linalg.lu_solve(lu, rhs, check_finite=False)
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
        raise SteadyStateError(f"steady-state solve failed: {exc}; cond={np.linalg.cond(A):.3g}") from exc
    if not np.all(np.isfinite(x)):
        raise SteadyStateError(f"steady-state solve singular; cond={np.linalg.cond(A):.3g}")
    resid = np.linalg.norm(M @ x + system.b)
    if resid > tol:
        raise SteadyStateError(
            f"steady state not unique or ill-conditioned: residual {resid:.3g}, cond={np.linalg.cond(A):.3g}"
        )
    rho = x.reshape(n, n)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    return replace(system, rho_ss=rho)


def apply_adjoint(system: DriftSystem, op: np.ndarray) -> np.ndarray:
    """Heisenberg generator on an operator, as an n x n matrix.

    Uses the drift matrix: coefficients of ``op`` in the ``s_(i,j) = |j><i|``
    basis are ``op.T`` flattened, and they transform with ``M.T``.
    """
    n = system.n
    coeff = np.asarray(op, dtype=complex).T.reshape(-1)
    return (system.M.T @ coeff).reshape(n, n).T


def evolve(system: DriftSystem, rho0: np.ndarray, t: float) -> np.ndarray:
    """Propagate a density matrix for time ``t`` with the drift matrix."""
    n = system.n
    return (linalg.expm(system.M * t) @ np.asarray(rho0, dtype=complex).reshape(-1)).reshape(n, n)


def solve_drive(scheme: LevelScheme, drive: DriveConfig, geometry: PolarizationGeometry, **kw) -> DriftSystem:
    """Build the generator and solve its steady state."""
    return steady_state(build_generator(scheme, drive, geometry, **kw))
