import csv

import numpy as np
import pytest

from dnprobe.dnmap import (
    PAIRING_COLUMNS,
    DNPairingSample,
    dn_apply,
    dn_form,
    dn_pairing_difference,
    dn_restrict,
    nonlinear_dn,
    write_pairings_csv,
)
from dnprobe.errors import DataError
from dnprobe.fields import gauge_transform
from dnprobe.forward import solve_adjoint, solve_forward
from dnprobe.grid import build_grid
from dnprobe.presets import (
    affine_datum,
    lateral_bump_datum,
    model_potential,
    model_zero,
    preset_bump,
    preset_constant,
    preset_vortex,
    random_boundary_datum,
    random_gauge,
)


def _data(g, seed):
    r = np.random.default_rng(seed)
    return random_boundary_datum(g, r), random_boundary_datum(g, r, vanish_at="end")


def test_equal_coefficients_vanish():
    g = build_grid(11, 11, 16)
    c = preset_vortex(g)
    for seed in range(10):
        gp, gm = _data(g, seed)
        assert abs(dn_pairing_difference(c, c, gp, gm).value) <= 1e-10


def test_quadrature_paths_agree():
    g = build_grid(15, 15, 16)
    gp, gm = _data(g, 3)
    s = dn_pairing_difference(preset_bump(g), preset_constant(g, ax=1.0), gp, gm)
    assert s.quadrature_residual <= 1e-12 * max(1.0, abs(s.value))
    assert set(s.terms) == {"convection", "divergence", "potential"}


def _gauge_dev(n, nt):
    g = build_grid(n, n, nt)
    r = np.random.default_rng(5)
    c1 = preset_vortex(g)
    c2 = gauge_transform(c1, random_gauge(g, r))
    gp, gm = random_boundary_datum(g, r), random_boundary_datum(g, r, vanish_at="end")
    s = dn_pairing_difference(c1, c2, gp, gm)
    return abs(s.value) / s.scale


def test_gauge_invariance_under_refinement():
    coarse, fine = _gauge_dev(15, 32), _gauge_dev(31, 64)
    # frozen: 2.04e-3 and 6.73e-4
    assert coarse == pytest.approx(2.043e-3, rel=1e-2)
    assert fine <= 0.5 * coarse


def _repr_gap(n, nt):
    g = build_grid(n, n, nt)
    gp, gm = _data(g, 5)
    c1, c2 = preset_bump(g), preset_constant(g, ax=1.0)
    w = solve_adjoint(c2, gm).values
    lhs = dn_apply(c1, gp, w) - dn_apply(c2, gp, w)
    return abs(lhs - dn_pairing_difference(c1, c2, gp, gm).value)


def test_representation_formula_converges():
    coarse, fine = _repr_gap(15, 32), _repr_gap(31, 64)
    assert fine <= 0.5 * coarse
    assert fine < 2e-3


def test_dn_form_rejects_live_top_cap():
    g = build_grid(5, 5, 4)
    with pytest.raises(DataError):
        dn_form(preset_bump(g), np.zeros(g.shape), np.ones(g.shape))


def test_restrict_full_boundary_matches_pairing():
    g = build_grid(11, 11, 16)
    gp, gm = _data(g, 8)
    c1, c2 = preset_bump(g), preset_vortex(g)
    full = ("left", "right", "bottom", "top")
    a = dn_restrict(c1, c2, gp, gm, full, full).value
    b = dn_pairing_difference(c1, c2, gp, gm).value
    assert a == b


def test_restrict_support_checked():
    g = build_grid(11, 11, 16)
    gp, gm = _data(g, 8)
    with pytest.raises(DataError, match="forward datum"):
        dn_restrict(preset_bump(g), preset_vortex(g), gp, gm, ("left",), ("left", "right", "bottom", "top"))
    with pytest.raises(DataError, match="unknown boundary edge"):
        dn_restrict(preset_bump(g), preset_vortex(g), gp, gm, ("north",), ("left",))


def test_restrict_equal_coefficients():
    g = build_grid(11, 11, 16)
    gp, gm = _data(g, 9)
    gp[:, 1:-1, :] = 0.0  # keep the x edges only
    gm[:, :, 1:-1] = 0.0
    gm[:, 0, :] = gm[:, -1, :] = 0.0
    c = preset_bump(g)
    s = dn_restrict(c, c, gp, gm, ("left", "right"), ("bottom", "top"))
    assert abs(s.value) <= 1e-10


def test_affine_flux_is_normal_component():
    g = build_grid(11, 11, 8)
    v = (0.3, -0.7)
    flux = nonlinear_dn(model_zero(), affine_datum(g, v), g)
    normals = {"left": (-1, 0), "right": (1, 0), "bottom": (0, -1), "top": (0, 1)}
    for e, nu in normals.items():
        assert np.max(np.abs(flux[e][1:] - (v[0] * nu[0] + v[1] * nu[1]))) < 1e-10


def test_linear_flux_matches_forward():
    g = build_grid(11, 11, 8)
    G = lateral_bump_datum(g)
    a = nonlinear_dn(model_potential(1.0), G, g)
    b = solve_forward(preset_constant(g, ax=0.0, q=1.0), G).flux_trace
    for e in a:
        assert np.max(np.abs(a[e] - b[e])) < 1e-9


def test_pairings_csv(tmp_path):
    s = DNPairingSample(1 + 2j, "p0", 0.0, probe={"rho": 8.0, "omega": (1.0, 0.0), "xi": (0.0, 3.0), "tau": 1.0})
    path = tmp_path / "pairings.csv"
    write_pairings_csv(path, [s])
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == PAIRING_COLUMNS
    assert rows[1][0] == "p0" and float(rows[1][-1]) == 2.0
