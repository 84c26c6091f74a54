"""Dirichlet-to-Neumann data synthesis and coefficient recovery for
convection-diffusion equations on a space-time cylinder."""

from .errors import *  # noqa: F401,F403
from .grid import SpaceTimeGrid, build_grid, partition_boundary
from .fields import (
    CoefficientSet,
    GaugeFunction,
    curl_2form,
    gauge_potential,
    gauge_potential_from_curl_free,
    gauge_transform,
    mollifier_norm_audit,
    mollify,
)
from .forward import (
    QuasiLinearModel,
    Solution,
    frechet_check,
    solve_adjoint,
    solve_forward,
    solve_linearized,
    solve_quasilinear,
)
from .dnmap import dn_apply, dn_pairing_difference, dn_restrict, nonlinear_dn
from .go import GOProbe, build_probe, go_boundary_data, remainder_decay_audit
from .recover import (
    assemble_curl_fourier,
    pairing_to_ray,
    quasilinear_slice_recover,
    ray_to_lightray,
    recover_curl,
    recover_zero_order,
)
from .carleman import WeightParams, conjugated_apply, estimate_audit, rho_threshold, threshold_decade
from .presets import coefficient_preset, model_preset

__version__ = "0.1.0"
