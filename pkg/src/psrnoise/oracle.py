"""
Time-domain cross-check of the noise engine.

Two-time correlations are obtained from the quantum regression theorem by
integrating the master equation (matrix form, built from the Hamiltonian and
jump operators) with an adaptive Runge-Kutta scheme.  Fourier integrals are
carried along as extra ODE components so the step control covers them too.
The medium is then propagated by integrating the sideband covariance ODE
directly.  None of this touches the resolvent, the Einstein relation or the
matrix-exponential assembly used by :mod:`psrnoise.noisespec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import DriftSystem
from .noisespec import ASSEMBLY_MODES, SidebandCorrelation, correlations_from_covariance


class OracleError(RuntimeError):
    """Raised when correlations have not decayed at the integration horizon."""


@dataclass(frozen=True)
class RegressionResult:
    deltas: np.ndarray
    C_N: np.ndarray
    C_A: np.ndarray
    commutator: np.ndarray
    horizon: float
    rtol: float
    n_steps: int
    tail: float  # largest |correlation(T)| / |correlation(0)|
    J: np.ndarray = field(repr=False, default=None)
    Q: np.ndarray = field(repr=False, default=None)

    def as_correlation(self) -> SidebandCorrelation:
        return SidebandCorrelation(
            self.deltas, self.C_N, self.C_A, self.commutator, np.abs(self.commutator - 1.0)
        )


def slowest_rate(system: DriftSystem) -> float:
    """Smallest nonzero decay rate of the drift matrix."""
    re = -np.linalg.eigvals(system.M).real
    re = re[re > 1e-9]
    return float(re.min())


def _stacked_rhs(gen, k):
    H = gen.H
    Ls = [L for L in gen.jumps]
    Lds = [L.conj().T for L in Ls]
    LdL = sum((Ld @ L for Ld, L in zip(Lds, Ls)), np.zeros_like(H))
    Heff = H - 0.5j * LdL
    Heff_d = Heff.conj().T

    def rhs(X):
        out = -1j * (Heff @ X - X @ Heff_d)
        for L, Ld in zip(Ls, Lds):
            out += L @ X @ Ld
        return out

    return rhs


def regression_spectrum(
    system: DriftSystem,
    deltas: Sequence[float],
    C: float,
    *,
    mode: str = "propagated",
    rtol: float = 1e-10,
    atol: float = 1e-13,
    horizon_factor: float = 14.0,
    decay_tol: float = 1e-6,
) -> RegressionResult:
    """Output (C_N, C_A) from quantum-regression two-time correlations."""
    if mode not in ASSEMBLY_MODES:
        raise ValueError(f"assembly mode must be one of {ASSEMBLY_MODES}")
    if system.rho_ss is None:
        raise ValueError("system has no steady state")
    gen = system.generator
    n = gen.n
    rho = system.rho_ss
    Vd = gen.vacuum_raising
    V = Vd.conj().T
    mV = np.trace(V @ rho)
    mVd = np.trace(Vd @ rho)

    deltas = np.asarray(deltas, dtype=float)
    omegas = np.concatenate([deltas, -deltas])
    nw = len(omegas)

    # initial operators, evolved with the Schrodinger-picture generator
    X0 = np.stack([rho @ Vd, Vd @ rho, rho @ V, V @ rho])
    obs = np.stack([V, Vd])  # observables traced against each evolved operator
    # connected parts: each trace function tends to Tr(X0) <observable>
    means = np.outer(np.trace(X0, axis1=1, axis2=2), [mV, mVd])

    T = horizon_factor / slowest_rate(system)
    step = _stacked_rhs(gen, 4)
    nX = 4 * n * n

    def f(t, y):
        X = y[:nX].reshape(4, n, n)
        dX = np.stack([step(x) for x in X])
        corr = np.einsum("oij,kji->ko", obs, X).reshape(-1)  # 8 trace functions
        corr = corr - means.reshape(-1)
        phase = np.exp(1j * omegas * t)
        dI = np.outer(corr, phase).reshape(-1)
        return np.concatenate([dX.reshape(-1), dI])

    y0 = np.concatenate([X0.reshape(-1), np.zeros(8 * nw, dtype=complex)])
    sol = solve_ivp(f, (0.0, T), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise OracleError(f"time integration failed: {sol.message}")
    yT = sol.y[:, -1]
    XT = yT[:nX].reshape(4, n, n)
    c0 = np.abs(np.einsum("oij,kji->ko", obs, X0) - means)
    cT = np.abs(np.einsum("oij,kji->ko", obs, XT) - means)
    tail = float((cT / np.maximum(c0.max(), 1e-300)).max())
    if tail > decay_tol:
        raise OracleError(
            f"correlations not decayed at horizon T={T:.4g}: relative tail {tail:.3g} > {decay_tol:g}"
        )
    I = yT[nX:].reshape(4, 2, nw)  # [operator, observable, omega]

    def ft(op, ob, w_index):
        return I[op, ob, w_index]

    # index of +delta and -delta in omegas
    ip = np.arange(len(deltas))
    im = ip + len(deltas)

    def yG(idx):  # int e^{iwt} Tr[V e^{Lt}(rho V^dag - V^dag rho)]
        return ft(0, 0, idx) - ft(1, 0, idx)

    def yH(idx):  # int e^{iwt} Tr[V e^{Lt}(rho V - V rho)]
        return ft(2, 0, idx) - ft(3, 0, idx)

    def S_VVd(idx, jdx):  # jdx: index of -omega
        return ft(1, 0, idx) + ft(2, 1, jdx)

    def S_VdV(idx, jdx):
        return ft(3, 1, idx) + ft(0, 0, jdx)

    def S_VV(idx, jdx):
        return ft(3, 0, idx) + ft(2, 0, jdx)

    J = np.empty((len(deltas), 2, 2, 2), dtype=complex)
    Q = np.empty_like(J)
    for s, (a, b) in enumerate(((ip, im), (im, ip))):
        J[:, s, 0, 0] = yG(a)
        J[:, s, 0, 1] = yH(a)
        J[:, s, 1, 0] = np.conj(yH(b))
        J[:, s, 1, 1] = np.conj(yG(b))
        Q[:, s, 0, 0] = S_VVd(a, b)
        Q[:, s, 0, 1] = -S_VV(a, b)
        Q[:, s, 1, 0] = np.conj(Q[:, s, 0, 1])
        Q[:, s, 1, 1] = S_VdV(a, b)

    sigma = np.empty_like(J)
    kappa = 2.0 * C
    for k in range(len(deltas)):
        for s in range(2):
            sigma[k, s] = _assemble(J[k, s], Q[k, s], kappa, mode)
    corr = correlations_from_covariance(deltas, sigma)
    return RegressionResult(
        deltas=deltas,
        C_N=corr.C_N,
        C_A=corr.C_A,
        commutator=corr.commutator,
        horizon=T,
        rtol=rtol,
        n_steps=len(sol.t),
        tail=tail,
        J=J,
        Q=Q,
    )


def _assemble(J, Q, kappa, mode):
    sig0 = np.diag([1.0, 0.0]).astype(complex)
    if mode == "lumped":
        T = np.eye(2) + kappa * J
        return T @ sig0 @ T.conj().T + kappa * Q
    A = kappa * J
    B = kappa * Q

    def f(z, y):
        S = y.reshape(2, 2)
        return (A @ S + S @ A.conj().T + B).reshape(-1)

    sol = solve_ivp(f, (0.0, 1.0), sig0.reshape(-1), method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1].reshape(2, 2)


@dataclass(frozen=True)
class DeviationReport:
    deltas: np.ndarray
    dev_CN: np.ndarray
    dev_CA_abs: np.ndarray
    dev_CA_arg: np.ndarray
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return float(max(self.dev_CN.max(), self.dev_CA_abs.max(), self.dev_CA_arg.max()))

    @property
    def rms_deviation(self) -> float:
        allv = np.concatenate([self.dev_CN, self.dev_CA_abs, self.dev_CA_arg])
        return float(np.sqrt(np.mean(allv**2)))

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    @property
    def offending(self) -> np.ndarray:
        worst = np.maximum(np.maximum(self.dev_CN, self.dev_CA_abs), self.dev_CA_arg)
        return self.deltas[worst > self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status}: max deviation {self.max_deviation:.3e} (rms {self.rms_deviation:.3e}, tol {self.tolerance:g})"
        if not self.passed:
            line += "; offending delta: " + ", ".join(f"{d:g}" for d in self.offending)
        return line


def _rel(a, b):
    scale = np.maximum(np.abs(b), 1e-300)
    return np.abs(a - b) / scale


def compare_report(reference, candidate, tolerance: float = 1e-3) -> DeviationReport:
    """Per-delta relative deviations of C_N and |C_A| and the absolute arg(C_A) difference (rad)."""
    if reference.deltas.shape != candidate.deltas.shape or not np.allclose(
        reference.deltas, candidate.deltas, rtol=0, atol=1e-12
    ):
        raise ValueError("noise-frequency grids differ")
    dCN = _rel(candidate.C_N, reference.C_N)
    dCA = _rel(np.abs(candidate.C_A), np.abs(reference.C_A))
    darg = np.abs(np.mod(np.angle(candidate.C_A) - np.angle(reference.C_A) + np.pi, 2 * np.pi) - np.pi)
    darg = np.where(np.abs(reference.C_A) > 0, darg, 0.0)
    return DeviationReport(np.asarray(reference.deltas), dCN, dCA, darg, tolerance)
