import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st

from psrnoise.angular import build_scheme, geometry_for
from psrnoise.dynamics import DriveConfig, build_generator, solve_drive
from psrnoise.noisespec import (
    DiffusionMatrix,
    NoiseError,
    assemble,
    diffusion_matrix,
    medium_response,
    output_covariance,
    quadrature_noise,
    quadrature_spectrum,
    sideband_correlations,
)

# Toy at Omega_f = 1, Delta = 0, splitting 50, gamma0 = 0.01, C = 10, from the
# time-domain regression oracle (rtol 1e-12).
TOY_DELTAS = [0.05, 0.5, 1.5]
TOY_CN = [0.18491278806215478, 0.00269318155054559, 0.00035688115021653]
TOY_CA = [
    5.2140497179363667e-03 - 0.09928208381319262j,
    7.6163324562667064e-06 + 0.0020928416241779j,
    2.0769668213420066e-05 + 0.00294725738373977j,
]


def test_toy_matches_frozen_oracle(toy):
    s, geo = toy
    sys_ = solve_drive(s, DriveConfig(Omega_f=1.0, detuning=0.0, gamma0=0.01, C=10), geo)
    c = sideband_correlations(sys_, None, 10.0, TOY_DELTAS)
    np.testing.assert_allclose(c.C_N, TOY_CN, rtol=1e-5)
    np.testing.assert_allclose(c.C_A, TOY_CA, rtol=1e-5)


def test_two_level_ground_state_diffusion(two_level):
    # undriven: only the (sigma, sigma^dagger) pair fluctuates, 2D = 2 g rho_gg, g = (Gamma + gamma0)/2
    s, geo = two_level
    gamma0 = 0.01
    sys_ = solve_drive(s, DriveConfig(Omega_f=0.0, gamma0=gamma0), geo)
    D = diffusion_matrix(sys_).D
    lower, raise_ = 1 * 2 + 0, 0 * 2 + 1  # s_(1,0) = |g><e|, s_(0,1) = |e><g|
    expected = np.zeros((4, 4), complex)
    expected[lower, raise_] = 0.5 * (1.0 + gamma0)
    np.testing.assert_allclose(D, expected, atol=1e-14)


def test_closed_undriven_system_has_no_noise(two_level):
    s, geo = two_level
    sys_ = build_generator(s, DriveConfig(Omega_f=0.0), geo, closed=True)
    rho = np.diag([1.0, 0.0]).astype(complex)
    np.testing.assert_allclose(diffusion_matrix(sys_, rho).D, 0.0, atol=1e-15)


def test_diffusion_requires_stationary_state(two_level):
    s, geo = two_level
    sys_ = solve_drive(s, DriveConfig(Omega_f=1.0), geo)
    with pytest.raises(ValueError, match="stationary"):
        diffusion_matrix(sys_, np.diag([0.0, 1.0]).astype(complex))


@pytest.mark.parametrize("preset", ["rb87-d1-Fg1", "rb87-d1-Fg2", "four-level-toy"])
def test_noise_matrix_is_positive(preset):
    s = build_scheme(preset)
    sys_ = solve_drive(s, DriveConfig(Omega_f=12.0, detuning=7.0, gamma0=0.01), geometry_for(s))
    N = diffusion_matrix(sys_).noise_matrix
    np.testing.assert_allclose(N, N.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (N + N.conj().T)).min() > -1e-10


def test_shot_noise_at_zero_cooperativity(fg2):
    s, geo = fg2
    sys_ = solve_drive(s, DriveConfig(Omega_f=30.0, detuning=3.0, gamma0=0.01, C=0.0), geo)
    deltas = np.linspace(0.0, 3.0, 7)
    c = sideband_correlations(sys_, None, 0.0, deltas)
    S = quadrature_noise(c, np.linspace(0, np.pi, 11))
    np.testing.assert_allclose(S, 1.0, atol=1e-12)
    np.testing.assert_allclose(c.C_N, 0.0, atol=1e-15)


@given(
    Omega=st.floats(0.1, 40.0),
    Delta=st.floats(-80.0, 80.0),
    gamma0=st.floats(1e-3, 0.3),
    C=st.floats(0.0, 300.0),
    delta=st.floats(0.01, 3.0),
)
def test_toy_physicality(toy, Omega, Delta, gamma0, C, delta):
    s, geo = toy
    sys_ = solve_drive(s, DriveConfig(Omega_f=Omega, detuning=Delta, gamma0=gamma0), geo)
    c = sideband_correlations(sys_, None, C, [delta])
    q = quadrature_spectrum(c)
    assert abs(c.commutator[0] - 1.0) < 1e-8
    assert q.S_min[0] * q.S_max[0] >= 1.0 - 1e-8
    assert c.physicality_margin()[0] >= -1e-8


@given(theta=st.floats(0, np.pi), delta=st.floats(0.01, 2.0))
def test_quadrature_noise_periodic_and_bounded(fg1, theta, delta):
    s, geo = fg1
    sys_ = solve_drive(s, DriveConfig(Omega_f=10.0, detuning=5.0, gamma0=0.01), geo)
    c = sideband_correlations(sys_, None, 100.0, [delta])
    q = quadrature_spectrum(c)
    a, b = quadrature_noise(c, [theta, theta + np.pi])[0]
    assert a == pytest.approx(b, rel=1e-12)
    assert q.S_min[0] - 1e-12 <= a <= q.S_max[0] + 1e-12


def test_theta_min_is_the_minimum(fg1):
    s, geo = fg1
    sys_ = solve_drive(s, DriveConfig(Omega_f=10.0, detuning=5.0, gamma0=0.01), geo)
    c = sideband_correlations(sys_, None, 100.0, [0.2, 1.0])
    q = quadrature_spectrum(c)
    np.testing.assert_allclose(quadrature_noise(c, q.theta_min).diagonal(), q.S_min, rtol=1e-12)
    assert np.all((q.theta_min >= 0) & (q.theta_min < np.pi))
    np.testing.assert_allclose(q.S_min_dB, 10 * np.log10(q.S_min))


@given(st.floats(-np.pi, np.pi))
def test_pump_axis_rotation_invariance(phi):
    s = build_scheme("rb87-d1-Fg2")
    drive = DriveConfig(Omega_f=8.0, detuning=-4.0, gamma0=0.02)
    ref = quadrature_spectrum(sideband_correlations(solve_drive(s, drive, geometry_for(s, 0.0)), None, 50.0, [0.3]))
    rot = quadrature_spectrum(sideband_correlations(solve_drive(s, drive, geometry_for(s, phi)), None, 50.0, [0.3]))
    np.testing.assert_allclose([rot.S_min[0], rot.S_max[0]], [ref.S_min[0], ref.S_max[0]], rtol=1e-8)


def test_lumped_agrees_at_small_cooperativity(fg1):
    s, geo = fg1
    sys_ = solve_drive(s, DriveConfig(Omega_f=10.0, detuning=5.0, gamma0=0.01), geo)
    r = medium_response(sys_, [0.2])
    for C in (1e-3, 1e-2):
        a = assemble(r, C, "propagated")
        b = assemble(r, C, "lumped")
        # difference is second order in C
        assert abs(a.C_N[0] - b.C_N[0]) < 50 * C**2
        assert abs(a.C_A[0] - b.C_A[0]) < 50 * C**2
    with pytest.raises(ValueError):
        output_covariance(r, 1.0, "exact")


def test_undamped_mode_is_an_error(two_level):
    # without dissipation the Rabi oscillation at Omega is an undamped pole
    s, geo = two_level
    sys_ = build_generator(s, DriveConfig(Omega_f=1.0, detuning=0.0), geo, closed=True)
    sys_ = replace(sys_, rho_ss=np.eye(2, dtype=complex) / 2)
    with pytest.raises(NoiseError, match="singular"):
        medium_response(sys_, [1.0], DiffusionMatrix(np.zeros((4, 4), complex)))


def test_response_shapes_and_sideband_symmetry(toy):
    s, geo = toy
    sys_ = solve_drive(s, DriveConfig(Omega_f=1.0, gamma0=0.01), geo)
    r = medium_response(sys_, [0.1, 0.4])
    assert r.J.shape == (2, 2, 2, 2) and r.Q.shape == (2, 2, 2, 2)
    # Q is a covariance: Hermitian and positive at each sideband
    for k in range(2):
        for sgn in range(2):
            Q = r.Q[k, sgn]
            np.testing.assert_allclose(Q, Q.conj().T, atol=1e-12)
            assert np.linalg.eigvalsh(Q).min() > -1e-12
