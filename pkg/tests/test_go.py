import numpy as np
import pytest

from dnprobe.errors import AuditError, NormalizationError, OverflowGuardError, ParameterError
from dnprobe.go import (
    OVERFLOW_LOG,
    amplitude_b1,
    amplitude_b2,
    build_probe,
    cap_factor,
    check_probe_direction,
    go_boundary_data,
    padded_mollified,
    phase,
    ray_exponent,
    remainder_decay_audit,
    transport_residual,
)
from dnprobe.grid import build_grid
from dnprobe.presets import preset_bump_vortex, preset_vortex


@pytest.fixture(scope="module")
def g():
    return build_grid(15, 15, 16)


def test_b1_without_convection(g):
    z = np.zeros((2,) + g.shape)
    b1 = amplitude_b1(g, 8.0, (0.0, 1.0), (2.0, 0.0), 1.5, z)
    T, X, Y = g.mesh3()
    expect = np.exp(-1j * (1.5 * T + 2.0 * X)) * (1 - np.exp(-2.0 * T))
    assert np.max(np.abs(b1 - expect)) < 1e-14


def test_b2_without_convection(g):
    b2 = amplitude_b2(g, 27.0, (1.0, 0.0), np.zeros((2,) + g.shape))
    T = g.mesh3()[0]
    assert np.max(np.abs(b2 - (1 - np.exp(-3.0 * (g.T - T))))) < 1e-14


def test_caps_vanish_exactly(g):
    c = preset_vortex(g)
    p = build_probe(g, 8.0, (1.0, 0.0), (0.0, 3.0), 2.0, c.A, c.A)
    assert not np.any(p.b1[0]) and not np.any(p.b2[-1])
    assert cap_factor(g, 8.0)[0].item() == 0.0


def test_probe_direction_checks():
    with pytest.raises(ParameterError, match="orthogonal"):
        check_probe_direction((1.0, 0.0), (1.0, 1.0))
    with pytest.raises(NormalizationError):
        check_probe_direction((1.0, 1.0), (1.0, -1.0))


@pytest.mark.parametrize("n", [31, 63])
def test_constant_field_ray_exponent(n):
    g = build_grid(n, n, 4)
    A = np.stack([np.full(g.shape, 0.7), np.zeros(g.shape)])
    I = ray_exponent(A, g, 16.0, (1.0, 0.0), mollified=False)
    X, _ = g.mesh()
    assert np.max(np.abs(I - 0.7 * (1 - X)[None])) <= 0.3 * g.hx


def test_ray_exponent_vanishes_downstream_of_support(g):
    c = preset_vortex(g, radius=0.2)
    I = ray_exponent(c.A, g, 8.0, (1.0, 0.0), mollified=False)
    X, _ = g.mesh()
    assert np.all(I[:, X > 0.75] == 0.0)


def _mollified_on_grid(A, g, rho):
    Ap, (px, py) = padded_mollified(A, g, rho)
    return Ap[:, :, px:px + g.nx + 2, py:py + g.ny + 2]


def test_transport_residual_second_order():
    res = []
    for n in (31, 63):
        g = build_grid(n, n, 32)
        c = preset_bump_vortex(g)
        b1 = amplitude_b1(g, 16.0, (1.0, 0.0), (0.0, 3.0), 2.0, c.A)
        res.append(transport_residual(b1, _mollified_on_grid(c.A, g, 16.0), (1.0, 0.0), g))
    assert res[0] < 5e-5
    assert res[1] <= 0.3 * res[0]


def test_transport_residual_b2_sign():
    g = build_grid(31, 31, 16)
    c = preset_bump_vortex(g)
    b2 = amplitude_b2(g, 16.0, (0.0, 1.0), c.A)
    Am = _mollified_on_grid(c.A, g, 16.0)
    assert transport_residual(b2, Am, (0.0, 1.0), g, sign=-1) < 1e-4
    assert transport_residual(b2, Am, (0.0, 1.0), g, sign=1) > 1e-2


def test_product_identity_equal_fields():
    g = build_grid(15, 15, 16)
    c = preset_vortex(g)
    p = build_probe(g, 8.0, (1.0, 0.0), (0.0, 3.0), 2.0, c.A, c.A)
    expect = phase(g, (0.0, 3.0), 2.0) * cap_factor(g, 8.0, True) * cap_factor(g, 8.0, False)
    assert np.max(np.abs(p.b1 * p.b2 - expect)) < 1e-13


def test_overflow_guard():
    g = build_grid(15, 15, 16)
    z = np.zeros((2,) + g.shape)
    d = go_boundary_data(build_probe(g, 30.0, (1.0, 0.0), (0.0, 0.0), 0.0, z, z))
    assert d.normalization_log == pytest.approx(930.0)
    assert d.normalization_log > OVERFLOW_LOG
    with pytest.raises(OverflowGuardError):
        d.materialize(g)
    small = go_boundary_data(build_probe(g, 4.0, (1.0, 0.0), (0.0, 0.0), 0.0, z, z))
    gp, gm = small.materialize(g)
    assert np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))


def test_remainder_audit_argument_checks():
    g = build_grid(15, 15, 16)
    c = preset_vortex(g)
    with pytest.raises(AuditError):
        remainder_decay_audit(c, [8.0, 16.0])
    with pytest.raises(AuditError):
        remainder_decay_audit(c, [8.0, 4.0, 16.0])
    with pytest.raises(ParameterError, match="refine"):
        remainder_decay_audit(c, [4.0, 8.0, 16.0])


def test_remainder_audit_decays():
    g = build_grid(63, 63, 32)
    a = remainder_decay_audit(preset_vortex(g), [8.0, 16.0, 32.0])
    assert a.passed
    l2 = [r["norm_l2"] for r in a.rows]
    assert l2[0] == pytest.approx(0.021702, rel=1e-3)
    assert l2[2] < 0.5 * l2[0]
