import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from dnprobe.errors import BranchError, CoverageError, ModelClassError
from dnprobe.fields import CoefficientSet, bump, bump_gradient, gauge_transform
from dnprobe.go import build_probe, ray_exponent
from dnprobe.grid import build_grid
from dnprobe.presets import (
    model_pair_gauge,
    model_pair_solenoidal,
    preset_bump,
    preset_bump_vortex,
    preset_gradient_of_bump,
    preset_zero,
    random_gauge,
)
from dnprobe.recover import (
    assemble_curl_fourier,
    canonical_direction,
    frequency_window,
    lightray_to_ray,
    pairing_to_ray,
    quasilinear_slice_recover,
    ray_to_lightray,
    recover_curl,
    recover_zero_order,
    slice_lattice,
    zero_order_combination,
)


def test_zero_transform():
    assert ray_to_lightray(0.0) == 0.0
    assert lightray_to_ray(0.0) == 0.0


def test_constant_chord_round_trip():
    c, L = 0.7, 1.0
    chord = integrate.quad(lambda s: c, 0.0, L)[0]
    G = lightray_to_ray(chord)
    assert G == pytest.approx(2 * (1 - np.exp(-c * L / 2)), abs=1e-15)
    assert abs(ray_to_lightray(G) - c * L) <= 1e-12


@given(st.floats(-20.0, 20.0))
def test_round_trip_real(X):
    assert abs(ray_to_lightray(lightray_to_ray(X)) - X) <= 1e-12 * max(1.0, abs(X))


@given(st.floats(-5.0, 5.0), st.floats(-3.0, 3.0))
def test_round_trip_complex(a, b):
    X = complex(a, b)
    assert abs(ray_to_lightray(lightray_to_ray(X)) - X) <= 1e-12 * max(1.0, abs(X))


def test_branch_guard():
    with pytest.raises(BranchError):
        ray_to_lightray(np.array([0.5, 2.0]))


@pytest.mark.parametrize("omega", [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)])
def test_gradient_full_line_vanishes(omega):
    g = build_grid(63, 63, 4)
    X, Y = g.mesh()
    gx, gy = bump_gradient(X, Y, (0.5, 0.5), 0.4)
    A = np.broadcast_to(np.stack([gx, gy])[:, None], (2,) + g.shape).copy()
    I = ray_exponent(A, g, 8.0, omega, mollified=False, spacing=g.h)
    # full lines: values at the upstream edge
    edge = {(1.0, 0.0): I[:, 0, :], (0.0, 1.0): I[:, :, 0], (-1.0, 0.0): I[:, -1, :]}[omega]
    assert np.max(np.abs(edge)) <= 1e-8


def test_canonical_direction():
    w = canonical_direction((3.0, 4.0))
    assert np.allclose(w, canonical_direction((-3.0, -4.0)))
    assert abs(w @ np.array([3.0, 4.0])) < 1e-15 and np.hypot(*w) == pytest.approx(1.0)
    with pytest.raises(CoverageError):
        canonical_direction((0.0, 0.0))


def test_zero_frequency_as_hard_data():
    g = build_grid(15, 15, 8)
    xi = np.array([[0.0, 0.0]])
    with pytest.raises(CoverageError) as exc:
        assemble_curl_fourier({}, {}, g, xi, np.array([0.0]), fill_zero=False)
    assert exc.value.missing == [(0.0, 0.0, 0.0)]


def test_missing_slice():
    g = build_grid(15, 15, 8)
    lat = slice_lattice(g, (1.0, 0.0))
    xi = np.array([[2 * np.pi, 0.0]])
    with pytest.raises(CoverageError, match="no slice"):
        assemble_curl_fourier({(1.0, 0.0): np.zeros((lat.y.size, g.nt + 1))}, {(1.0, 0.0): lat}, g, xi, np.array([0.0]))


def test_frequency_window_size():
    g = build_grid(15, 15, 8, Lx=2.0)
    xi, tau = frequency_window(g, 2, 3)
    assert xi.shape == (25, 2) and tau.size == 7
    assert xi[:, 0].max() == pytest.approx(2 * np.pi * 2 / 2.0)


@pytest.fixture(scope="module")
def vortex_report():
    g = build_grid(31, 31, 32)
    return recover_curl(preset_bump_vortex(g), preset_zero(g), [16, 32, 64], K=4, M=4)


def test_curl_recovery_small_grid(vortex_report):
    r = vortex_report
    assert r.rel_error <= 0.1
    assert r.rel_error == pytest.approx(0.04626, abs=5e-4)
    errs = [r.error_by_rho[k] for k in sorted(r.error_by_rho)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert r.filled.sum() == 1


def test_curl_hermitian(vortex_report):
    assert vortex_report.hermitian_deviation <= 1e-8


def test_curl_free_field_small(vortex_report):
    g = build_grid(31, 31, 16)
    r = recover_curl(preset_gradient_of_bump(g), preset_zero(g), [16, 32, 64], K=4, M=4)
    scale = np.max(np.abs(vortex_report.truth))
    # measured 0.79 %; the direct channel pairs the raw field with mollified amplitudes
    assert np.max(np.abs(r.recovered)) <= 0.01 * scale


@pytest.mark.xfail(strict=True, reason="finite-rho mismatch between raw field and mollified amplitudes (~1e-4)")
def test_curl_free_low_frequencies_machine_small(vortex_report):
    g = build_grid(31, 31, 16)
    r = recover_curl(preset_gradient_of_bump(g), preset_zero(g), [16, 32, 64], K=4, M=4)
    k = np.max(np.abs(r.xi), axis=1) / (2 * np.pi)
    scale = np.max(np.abs(vortex_report.truth))
    assert np.max(np.abs(r.recovered[k <= 1])) <= 1e-6 * scale


def _bump_difference(n):
    g = build_grid(n, n, n + 1)
    T, X, Y = g.mesh3()
    b = bump(X, Y, (0.5, 0.5), 0.4)
    A = np.stack([b, 0 * b])
    return g, CoefficientSet(g, A, np.zeros_like(A), np.zeros(g.shape)), preset_zero(g)


def test_pairing_channels_equal_coefficients():
    g, c1, _ = _bump_difference(31)
    rp = pairing_to_ray(c1, c1, build_probe(g, 8.0, (1.0, 0.0), (0.0, 0.0), 0.0, c1.A, c1.A))
    assert abs(rp.pairing) <= 1e-8 and abs(rp.direct) <= 1e-8


def test_direct_channel_second_quadrature():
    g, c1, c2 = _bump_difference(31)
    rp = pairing_to_ray(c1, c2, build_probe(g, 8.0, (1.0, 0.0), (0.0, 0.0), 0.0, c1.A, c2.A))
    assert abs(rp.direct - rp.direct_check) <= 1e-10
    assert rp.direct.real == pytest.approx(0.01895, abs=1e-4)


@pytest.mark.slow
def test_pairing_gap_shrinks_with_rho():
    g, c1, c2 = _bump_difference(127)
    gaps = []
    for rho in (8.0, 16.0, 32.0, 64.0):
        rp = pairing_to_ray(c1, c2, build_probe(g, rho, (1.0, 0.0), (0.0, 0.0), 0.0, c1.A, c2.A))
        gaps.append(abs(rp.pairing - rp.direct))
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.4 * gaps[0]


@pytest.fixture(scope="module")
def zgrid():
    return build_grid(31, 31, 32)


def test_zero_order_equal(zgrid):
    c = preset_bump(zgrid)
    r = recover_zero_order(c, c, K=2, M=2)
    assert np.max(np.abs(r.recovered)) <= 1e-12 and np.max(np.abs(r.direct)) <= 1e-12


def test_zero_order_bump(zgrid):
    r = recover_zero_order(preset_zero(zgrid), preset_bump(zgrid), K=4, M=4)
    assert r.rel_difference <= 0.1
    q = -preset_bump(zgrid).q
    from dnprobe.recover import fourier_samples

    assert np.allclose(r.direct, fourier_samples(q, zgrid, r.xi, r.tau), atol=1e-14)


def test_zero_order_gauge_pair_exact_gauge(zgrid):
    c1 = preset_bump_vortex(zgrid)
    phi = random_gauge(zgrid, np.random.default_rng(11))
    c2 = gauge_transform(c1, phi)
    assert np.max(np.abs(zero_order_combination(c1, c2, phi))) <= 1e-12
    r = recover_zero_order(c1, c2, phi=phi, K=2, M=2)
    assert np.max(np.abs(r.direct)) <= 1e-12 and np.max(np.abs(r.recovered)) <= 1e-12


def _rebuilt_gauge_residual(n):
    g = build_grid(n, n, n + 1)
    c1 = preset_bump_vortex(g)
    c2 = gauge_transform(c1, random_gauge(g, np.random.default_rng(11)))
    scale = np.max(np.abs(recover_zero_order(preset_zero(g), preset_bump(g), K=2, M=2).direct))
    return np.max(np.abs(recover_zero_order(c1, c2, K=2, M=2).recovered)) / scale


def test_zero_order_rebuilt_gauge_converges():
    # frozen: 0.480 at 31, 0.122 at 63
    coarse, fine = _rebuilt_gauge_residual(31), _rebuilt_gauge_residual(63)
    assert coarse == pytest.approx(0.480, abs=0.01)
    assert fine <= 0.3 * coarse


def test_quasilinear_equal_models():
    g = build_grid(31, 31, 8)
    m, _ = model_pair_solenoidal()
    r = quasilinear_slice_recover(m, m, [(0.0, (0.5, 0.25))], g, K=4)
    assert r.rel_error == 0.0 and not r.gauge_class


def test_quasilinear_solenoidal_pair():
    g = build_grid(63, 63, 8)
    m1, m2 = model_pair_solenoidal()
    r = quasilinear_slice_recover(m1, m2, [(0.0, (0.5, 0.25))], g)
    assert all(r.hypotheses.values())
    assert r.rel_error <= 0.1


def test_quasilinear_gauge_pair_flagged():
    g = build_grid(31, 31, 8)
    m1, m2, phi0 = model_pair_gauge()
    r = quasilinear_slice_recover(m1, m2, [(0.0, (0.5, 0.25))], g, K=4)
    assert r.gauge_class and not r.hypotheses["u_affine"]
    # frozen difference dF1/dv - dF2/dv = -2 grad phi0, so the gauge-class potential is phi0
    X, Y = g.mesh()
    truth = phi0(np.stack([X, Y]))
    assert np.max(np.abs(r.gauge_phi - truth)) <= 0.05 * np.max(np.abs(truth))
    with pytest.raises(ModelClassError) as exc:
        quasilinear_slice_recover(m1, m2, [(0.0, (0.5, 0.25))], g, K=4, strict=True)
    assert exc.value.condition == "u_affine"
