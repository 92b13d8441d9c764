"""
Linearized Heisenberg-Langevin noise engine.

Collective atomic fluctuations obey ``d dS/dt = M dS + F + (field terms)``
with Langevin forces whose diffusion matrix follows from the generalized
Einstein relation.  A thin slice of medium maps the sideband vector
``A(w) = (a(w), a^dagger(w))`` of the vacuum polarization mode as

    dA = kappa * J(w) A dz + i sqrt(kappa) K(w) dF,     kappa = 2 C,

where ``J`` collects the linear response of the vacuum-mode polarization to
the field and ``K dF`` its intrinsic atomic noise.  The output covariance is
obtained either by integrating this over the unit-length medium
("propagated", the default) or by a single first-order step ("lumped").
The propagated form preserves ``[a_out, a_out^dagger] = 1`` exactly; the
lumped one only to first order in C.

Normalization: vacuum quadrature noise is 1 (0 dB).
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .dynamics import DriftSystem

ASSEMBLY_MODES = ("propagated", "lumped")
_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


class NoiseError(RuntimeError):
    """Raised when the fluctuation system is singular at a requested frequency."""


@dataclass(frozen=True)
class DiffusionMatrix:
    """Langevin force correlations per atom: <F_a(t) F_b(t')> = 2 D_ab delta(t - t')."""

    D: np.ndarray

    @property
    def noise_matrix(self) -> np.ndarray:
        """``N[a, b] = 2 D[a, conj(b)]``, the covariance of F(w) with F(w)^dagger."""
        n2 = self.D.shape[0]
        n = int(round(np.sqrt(n2)))
        perm = np.arange(n2).reshape(n, n).T.reshape(-1)
        return 2.0 * self.D[:, perm]


@dataclass(frozen=True)
class MediumResponse:
    """Per-atom slice response of the vacuum mode at each sideband frequency.

    ``J`` and ``Q`` have shape (len(deltas), 2, 2, 2): the third axis picks
    +delta (0) or -delta (1).
    """

    deltas: np.ndarray
    J: np.ndarray
    Q: np.ndarray
    mean_polarization: complex = 0.0

    def __post_init__(self):
        for arr in (self.deltas, self.J, self.Q):
            arr.setflags(write=False)

    def scaled(self, w: float) -> "MediumResponse":
        return MediumResponse(self.deltas, self.J * w, self.Q * w, self.mean_polarization * w)


@dataclass(frozen=True)
class SidebandCorrelation:
    """Output vacuum-mode correlations on a grid of noise frequencies.

    C_N is the sideband-averaged normally ordered spectrum (vacuum 0); C_A the
    anomalous correlation; ``commutator`` the sideband-averaged spectrum of
    [a_out, a_out^dagger] (exactly 1 for a consistent model).
    """

    deltas: np.ndarray
    C_N: np.ndarray
    C_A: np.ndarray
    commutator: np.ndarray
    commutator_error: np.ndarray

    def physicality_margin(self) -> np.ndarray:
        return self.C_N * (self.C_N + 1) - np.abs(self.C_A) ** 2


@dataclass(frozen=True)
class QuadratureSpectrum:
    deltas: np.ndarray
    S_min: np.ndarray
    S_max: np.ndarray
    theta_min: np.ndarray

    @property
    def S_min_dB(self) -> np.ndarray:
        return 10.0 * np.log10(self.S_min)

    @property
    def S_max_dB(self) -> np.ndarray:
        return 10.0 * np.log10(self.S_max)


# ---------------------------------------------------------------------------
# Diffusion
# ---------------------------------------------------------------------------


def product_expectations(rho: np.ndarray) -> np.ndarray:
    """``Q[a, b] = <s_a s_b>`` for the basis operators ``s_(i,j) = |j><i|``.

    s_(i,j) s_(k,l) = delta_il s_(k,j), whose mean is rho[k, j].
    """
    n = rho.shape[0]
    return np.einsum("il,kj->ijkl", np.eye(n), rho).reshape(n * n, n * n)


def diffusion_matrix(system: DriftSystem, rho: Optional[np.ndarray] = None, *, tol: float = 1e-8) -> DiffusionMatrix:
    """Generalized Einstein relation.

    2 D_ab = <L^dagger(s_a s_b)> - <(M s)_a s_b> - <s_a (M s)_b>

    Raises
    ------
    ValueError
        If ``rho`` is not stationary under the generator (the relation
        would not describe delta-correlated forces).
    """
    if rho is None:
        rho = system.rho_ss
    if rho is None:
        raise ValueError("no density matrix supplied and system has no steady state")
    n = system.n
    x = np.asarray(rho, dtype=complex).reshape(-1)
    drift = system.M @ x + system.b
    scale = max(1.0, np.abs(system.M).max())
    if np.linalg.norm(drift) > tol * scale:
        raise ValueError(f"density matrix is not stationary (|M x + b| = {np.linalg.norm(drift):.3g})")
    M = system.M
    Q = product_expectations(rho)
    # first term: s_a s_b is again a basis operator, whose mean moves as M x + b
    first = product_expectations(drift.reshape(n, n))
    two_D = first - M @ Q - Q @ M.T
    return DiffusionMatrix(0.5 * two_D)


# ---------------------------------------------------------------------------
# Slice response
# ---------------------------------------------------------------------------


def _vacuum_vectors(system: DriftSystem):
    rho = system.rho_ss
    Vd = system.generator.vacuum_raising  # V^dagger
    V = Vd.conj().T
    v = V.T.reshape(-1)
    G = (rho @ Vd - Vd @ rho).reshape(-1)
    Hh = (rho @ V - V @ rho).reshape(-1)
    return v, G, Hh, complex(np.trace(V @ rho))


def _deflated(system: DriftSystem) -> np.ndarray:
    # remove the conserved-trace zero mode; fluctuations have no trace component
    n = system.n
    t = np.eye(n).reshape(-1)
    return system.M - np.outer(system.x_ss, t)


def medium_response(
    system: DriftSystem,
    deltas: Sequence[float],
    diffusion: Optional[DiffusionMatrix] = None,
    *,
    cond_limit: float = 1e13,
) -> MediumResponse:
    """Per-atom response J(+-delta) and intrinsic noise Q(+-delta) of the vacuum mode."""
    if diffusion is None:
        diffusion = diffusion_matrix(system)
    deltas = np.asarray(deltas, dtype=float)
    n = system.n
    n2 = n * n
    perm = np.arange(n2).reshape(n, n).T.reshape(-1)
    v, G, Hh, mean_pol = _vacuum_vectors(system)
    Md = _deflated(system)
    NF = diffusion.noise_matrix
    eye = np.eye(n2)

    J = np.empty((len(deltas), 2, 2, 2), dtype=complex)
    Q = np.empty((len(deltas), 2, 2, 2), dtype=complex)
    for k, d in enumerate(deltas):
        ys = {}
        for sgn in (1, -1):
            w = sgn * d
            if w in ys:
                continue
            A = (-1j * w) * eye - Md
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", linalg.LinAlgWarning)
                    lu = linalg.lu_factor(A.T, check_finite=False)
            except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
                raise NoiseError(f"fluctuation matrix singular at delta={w:g}: {exc}") from exc
            piv = np.abs(np.diag(lu[0]))
            if piv.min() <= piv.max() / cond_limit:
                raise NoiseError(
                    f"fluctuation matrix (i delta - M) singular at delta={w:g} "
                    f"(pivot ratio {piv.min() / piv.max():.3g}); an undamped mode sits at this frequency"
                )
            ys[w] = linalg.lu_solve(lu, v, check_finite=False)
        for s, sgn in enumerate((1, -1)):
            yp = ys[sgn * d]
            ym = ys[-sgn * d]
            J[k, s] = [
                [yp @ G, yp @ Hh],
                [np.conj(ym @ Hh), np.conj(ym @ G)],
            ]
            K = np.vstack([yp, -np.conj(ym[perm])])
            Q[k, s] = K @ NF @ K.conj().T
    return MediumResponse(deltas, J, Q, mean_pol)


# ---------------------------------------------------------------------------
# Output assembly
# ---------------------------------------------------------------------------

_SIGMA_IN = np.diag([1.0, 0.0]).astype(complex)


def _propagate(J: np.ndarray, Q: np.ndarray, kappa: float) -> np.ndarray:
    # Sigma(1) = E Sigma_in E^dag + int_0^1 e^{As} B e^{A^dag s} ds.  The noise
    # integral comes from a Van Loan block exponential over a short slice
    # h = 2^-k (one exponential over the whole medium cancels catastrophically
    # when the medium absorbs strongly), then doubles: X(2h) = X(h) + E X(h) E^dag.
    A = kappa * J
    B = kappa * Q
    norm = np.abs(A).sum(axis=0).max()
    k = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    h = 2.0 ** -k
    big = np.zeros((4, 4), dtype=complex)
    big[:2, :2] = A * h
    big[:2, 2:] = B * h
    big[2:, 2:] = -A.conj().T * h
    F = linalg.expm(big)
    E = F[:2, :2]
    X = F[:2, 2:] @ E.conj().T
    for _ in range(k):
        X = X + E @ X @ E.conj().T
        E = E @ E
    return E @ _SIGMA_IN @ E.conj().T + X


def _lumped(J: np.ndarray, Q: np.ndarray, kappa: float) -> np.ndarray:
    T = np.eye(2) + kappa * J
    return T @ _SIGMA_IN @ T.conj().T + kappa * Q


def output_covariance(response: MediumResponse, C: float, mode: str = "propagated") -> np.ndarray:
    """Output spectral covariance Sigma(+-delta), shape (len(deltas), 2, 2, 2)."""
    if mode not in ASSEMBLY_MODES:
        raise ValueError(f"assembly mode must be one of {ASSEMBLY_MODES}")
    step = _propagate if mode == "propagated" else _lumped
    kappa = 2.0 * C
    out = np.empty_like(response.J)
    for k in range(len(response.deltas)):
        for s in range(2):
            out[k, s] = step(response.J[k, s], response.Q[k, s], kappa)
    return out


def correlations_from_covariance(deltas: np.ndarray, sigma: np.ndarray) -> SidebandCorrelation:
    sp, sm = sigma[:, 0], sigma[:, 1]
    C_N = 0.5 * (sp[:, 1, 1] + sm[:, 1, 1]).real
    C_A = 0.5 * (sp[:, 0, 1] + sm[:, 0, 1])
    comm_p = (sp[:, 0, 0] - sm[:, 1, 1]).real
    comm_m = (sm[:, 0, 0] - sp[:, 1, 1]).real
    comm = 0.5 * (comm_p + comm_m)
    err = np.maximum(np.abs(comm_p - 1.0), np.abs(comm_m - 1.0))
    return SidebandCorrelation(np.asarray(deltas, float), C_N, C_A, comm, err)


def assemble(response: MediumResponse, C: float, mode: str = "propagated") -> SidebandCorrelation:
    """Output correlations of the vacuum mode for a medium of cooperativity C."""
    return correlations_from_covariance(response.deltas, output_covariance(response, C, mode))


def sideband_correlations(
    system: DriftSystem,
    diffusion: Optional[DiffusionMatrix],
    C: float,
    deltas: Sequence[float],
    mode: str = "propagated",
) -> SidebandCorrelation:
    """Frequency-domain fluctuation solve plus input-output assembly."""
    return assemble(medium_response(system, deltas, diffusion), C, mode)


# ---------------------------------------------------------------------------
# Quadratures
# ---------------------------------------------------------------------------


def quadrature_noise(corr: SidebandCorrelation, theta) -> np.ndarray:
    """S_theta on the (delta, theta) grid; vacuum level 1."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phase = np.exp(-2j * theta)[None, :]
    return (corr.commutator[:, None] + 2 * corr.C_N[:, None] + 2 * (corr.C_A[:, None] * phase).real)


def quadrature_spectrum(corr: SidebandCorrelation) -> QuadratureSpectrum:
    """Analytic quadrature extrema.

    theta_min (mod pi) is the local-oscillator phase of the least noisy
    quadrature, with X_theta = a e^{-i theta} + a^dagger e^{i theta}.
    """
    base = corr.commutator + 2 * corr.C_N
    amp = 2 * np.abs(corr.C_A)
    theta_min = np.mod(0.5 * (np.angle(corr.C_A) + np.pi), np.pi)
    return QuadratureSpectrum(corr.deltas, base - amp, base + amp, theta_min)
