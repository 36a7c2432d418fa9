import math
from dataclasses import replace

import numpy as np
import pytest

from carleman_lab.fields import Jet2, make_fn, make_grid
from carleman_lab.weights import PsiDerivatives, WeightFamily, WeightParams, eval_VN, eval_frame
from carleman_lab.identities import (
    CutoffSpec,
    RegionSpec,
    StatisticsError,
    SupportError,
    assemble,
    conjugation_residual,
    identity_residual,
    identity_vn_values,
    inequality_gap,
    qv_check,
)
from carleman_lab import solver as S

from conftest import draw_uniform


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------


def test_cutoff_flat_outside_band():
    cut = CutoffSpec(c2=0.5, eps=0.3)
    assert cut.chi(0.4) == 0.0 and cut.chi_d1(0.4) == 0.0 and cut.chi_d2(0.4) == 0.0
    assert cut.chi(0.9) == 1.0 and cut.chi_d1(0.9) == 0.0 and cut.chi_d2(0.9) == 0.0
    mid = cut.chi(0.65)
    assert 0.0 < mid < 1.0


def test_cutoff_c2_matching_and_derivative_maxima():
    cut = CutoffSpec(c2=0.5, eps=0.2)
    s = np.linspace(0.5, 0.7, 2001)
    d1 = cut.chi_d1(s)
    d2 = cut.chi_d2(s)
    m1, m2 = cut.derivative_maxima
    assert np.max(np.abs(d1)) <= m1 * (1 + 1e-9)
    assert np.max(np.abs(d2)) <= m2 * (1 + 1e-9)
    # C^2 at both seams: derivatives decay to zero at the ends
    assert abs(cut.chi_d1(0.5 + 1e-9)) < 1e-6
    assert abs(cut.chi_d2(0.7 - 1e-7)) < 1e-2 * m2


def test_cutoff_validation():
    with pytest.raises(Exception):
        CutoffSpec(c2=1.5, eps=0.1)
    with pytest.raises(Exception):
        CutoffSpec(c2=0.5, eps=0.0)


# ---------------------------------------------------------------------------
# pointwise identity
# ---------------------------------------------------------------------------


def test_identity_zero_w_is_exactly_zero(family, params):
    wz = make_fn("quadratic", 1, c0=0.0, ct=0.0, qtt=0.0, cx1=0.0, qx1=0.0)
    rep = identity_residual(wz, family, params, 0.3, [0.4])
    assert rep.residual == 0.0 and rep.lhs == 0.0 and rep.rhs == 0.0


def test_identity_constant_w_at_flat_weight_point():
    # with grad ell = ell_t = 0 at the point, only the weight bookkeeping acts
    rho = make_fn("quadratic", 1, c0=0.0, ct=0.0, qtt=0.5, cx1=0.0, qx1=0.5)
    params = WeightParams(lam=2.0, gamma=1.0, mu=0.0, t0=0.0, x0=(0.0,))
    fam = WeightFamily(rho, 0.3)
    w1 = make_fn("quadratic", 1, c0=1.0, ct=0.0, qtt=0.0, cx1=0.0, qx1=0.0)
    fr = eval_frame(rho, 0.0, [0.0], params, 0.3)
    assert abs(fr.ell_jet.grad_t) < 1e-14 and abs(fr.ell_jet.grad_x[0]) < 1e-14
    rep = identity_residual(w1, fam, params, 0.0, [0.0])
    assert rep.relative_residual <= 1e-9


def test_identity_200_random_cases(family, params, w_smooth):
    u = draw_uniform(23, 200 * 6).reshape(200, 6)
    worst = 0.0
    for row in u:
        pp = WeightParams(
            lam=1.0 + 15.0 * row[0],
            gamma=1.0 + 3.0 * row[1],
            mu=row[2],
            t0=0.4 * (row[3] - 0.5),
            x0=(0.4 * (row[4] - 0.5),),
        )
        w = w_smooth.with_params(amp=0.5 + row[5])
        rep = identity_residual(w, family, pp, 0.6 * (row[0] - 0.5), [0.6 * (row[1] - 0.5)])
        worst = max(worst, rep.relative_residual)
    assert worst <= 1e-8


def test_identity_both_sides_nontrivial(family, params, w_smooth):
    rep = identity_residual(w_smooth, family, params, 0.37, [0.51])
    assert abs(rep.lhs) > 1.0
    assert rep.relative_residual <= 1e-12


def test_quadratic_term_regrouping(family, params, w_smooth):
    # the four derivative terms regroup exactly into the characteristic square
    # plus the structure-matrix form plus the mu terms
    out = assemble(family, params, 0.37, [0.51], w_smooth)
    lhs = float(out["e_terms"])
    rhs = float(out["qf_char"] + out["qf_mat"] + out["mu_terms"])
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_identity_in_two_dimensions():
    rho = make_fn("trig_product", 2, amp=0.1, wt=1.2, wx1=0.8, wx2=0.6, pt=0.1, px1=0.3, px2=0.15)
    w = make_fn("exp_quadratic", 2, amp=1.1, att=-0.3, bt=0.1, ax1=-0.2, ax2=-0.25, bx1=0.1, bx2=-0.05)
    fam = WeightFamily(rho, 0.7)
    params = WeightParams(lam=2.0, gamma=1.3, mu=0.2, t0=0.0, x0=(0.1, -0.2))
    rep = identity_residual(w, fam, params, 0.3, [0.4, 0.25])
    assert rep.relative_residual <= 1e-12


# ---------------------------------------------------------------------------
# flux vector and time density
# ---------------------------------------------------------------------------


def test_eval_vn_zero_for_zero_v(family, params):
    fr = family.frame(0.3, [0.4], params)
    v = Jet2.make(0.0, 0.0, [0.0], 0.0, [0.0], [[0.0]])
    psi_d = PsiDerivatives(value=fr.Psi, grad_t=0.3, grad_x=np.array([0.2]))
    V, N = eval_VN(v, fr, psi_d, a=1.0)
    assert np.all(V == 0.0) and N == 0.0


def test_eval_vn_zero_weight_factors():
    # grad ell = ell_t = 0 and Psi = 0 kill every flux term
    rho = make_fn("quadratic", 1, c0=0.0, ct=0.0, qtt=0.5, cx1=0.0, qx1=0.5)
    params = WeightParams(lam=2.0, gamma=1.0, mu=0.0, t0=0.0, x0=(0.0,))
    fr = WeightFamily(rho, 0.0).frame(0.0, [0.0], params)
    v = Jet2.make(1.2, 0.7, [0.4], 0.1, [0.2], [[0.3]])
    psi_d = PsiDerivatives(value=0.0, grad_t=0.0, grad_x=np.array([0.0]))
    V, _ = eval_VN(v, fr, psi_d, a=0.0)
    assert np.allclose(V, 0.0, atol=1e-14)


def test_vn_time_derivative_consistent_with_assembly(family, params, w_smooth):
    # finite difference of the pointwise time density against the assembled dt_N
    h = 1e-5
    _, n_plus = identity_vn_values(w_smooth, family, params, 0.37 + h, [0.51])
    _, n_minus = identity_vn_values(w_smooth, family, params, 0.37 - h, [0.51])
    out = assemble(family, params, 0.37, [0.51], w_smooth)
    fd = (n_plus - n_minus) / (2 * h)
    assert abs(fd - float(out["dt_N"])) <= 1e-6 * max(1.0, abs(fd))


def test_vn_divergence_consistent_with_assembly(family, params, w_smooth):
    h = 1e-5
    v_plus, _ = identity_vn_values(w_smooth, family, params, 0.37, [0.51 + h])
    v_minus, _ = identity_vn_values(w_smooth, family, params, 0.37, [0.51 - h])
    out = assemble(family, params, 0.37, [0.51], w_smooth)
    fd = (v_plus[0] - v_minus[0]) / (2 * h)
    assert abs(fd - float(out["div_V"])) <= 1e-6 * max(1.0, abs(fd))


# ---------------------------------------------------------------------------
# conjugation and cutoff identities
# ---------------------------------------------------------------------------


def _transition_setup():
    rho = make_fn("trig_product", 1, amp=0.08, wt=1.1, wx1=0.9, pt=0.2, px1=0.4)
    fam = WeightFamily(rho, 0.4)
    cutoff = CutoffSpec(c2=0.5, eps=0.3)
    return rho, fam, cutoff


def test_conjugation_chi_one_region(w_smooth):
    rho, fam, cutoff = _transition_setup()
    params = WeightParams(lam=2.0, gamma=1.5, mu=0.0, t0=0.0, x0=(0.0,))
    # phi = psi ~ 1 > c2 + eps: chi is identically one there
    conj, cut = conjugation_residual(w_smooth, fam, params, cutoff, 0.1, [0.1])
    assert cut.residual == 0.0
    assert conj.relative_residual <= 1e-12


def test_cutoff_chi_zero_region(w_smooth):
    rho, fam, cutoff = _transition_setup()
    # mu large pushes phi below c2: chi and all its derivatives vanish
    params = WeightParams(lam=2.0, gamma=1.5, mu=3.0, t0=0.0, x0=(0.0,))
    out = assemble(fam, params, 0.5, [0.45], w_smooth, cutoff=cutoff)
    assert float(out["quant"]["phi"]) < cutoff.c2
    assert float(out["w"]["v"]) == 0.0 and float(out["w"]["tt"]) == 0.0


def test_conjugation_and_cutoff_random_transition_points(w_smooth):
    rho, fam, cutoff = _transition_setup()
    u = draw_uniform(29, 100 * 4).reshape(100, 4)
    worst = 0.0
    found = 0
    for row in u:
        t, x = 0.5 * (row[0] - 0.5), 0.5 * (row[1] - 0.5)
        psi = float(fam.quantities(t, [x], WeightParams(lam=1.0, gamma=1.5, mu=0.0, t0=0.0, x0=(0.0,)))["phi"])
        q = t**2 + x**2
        target = cutoff.c2 + (0.2 + 0.6 * row[2]) * cutoff.eps
        if q < 1e-8 or psi <= target:
            continue
        params = WeightParams(lam=1.0 + 3.0 * row[3], gamma=1.5, mu=(psi - target) / q, t0=0.0, x0=(0.0,))
        conj, cut = conjugation_residual(w_smooth, fam, params, cutoff, t, [x])
        worst = max(worst, conj.relative_residual, cut.relative_residual)
        found += 1
    assert found >= 50
    assert worst <= 1e-8


# ---------------------------------------------------------------------------
# quadratic variation bookkeeping
# ---------------------------------------------------------------------------


def _qv_grid():
    return make_grid([(-1.0, 1.0)], dx=0.05, dt=2e-4, t_max=0.02)


def test_qv_zero_noise_is_exact_zero():
    grid = _qv_grid()
    u0 = make_fn("space_bump4", 1, amp=1.0, cx1=0.0, rx1=0.3)
    rep = qv_check(grid, S.Coefficients(), u0, None, paths=100, seed=1)
    assert rep.empirical == 0.0 and rep.predicted == 0.0 and rep.passed


def test_qv_matches_compensator():
    grid = _qv_grid()
    u0 = make_fn("standing_wave", 1)
    rep = qv_check(grid, S.Coefficients(b1=0.2, b2=1.0), u0, None, paths=100, seed=2)
    assert rep.relative_error <= 0.05


def test_qv_frozen_coefficient_oracle():
    # b1 = 0, b2 = 1 over a short horizon: QV is close to int u0^2 dt
    grid = make_grid([(-1.0, 1.0)], dx=0.05, dt=1e-4, t_max=0.01)
    u0 = make_fn("standing_wave", 1)
    rep = qv_check(grid, S.Coefficients(b2=1.0), u0, None, paths=120, seed=3)
    mesh = grid.meshgrid()
    u0_sq = np.asarray(u0.d(np.zeros(grid.shape), list(mesh), (0, 0)), dtype=float) ** 2
    frozen = float(np.sum(u0_sq)) * grid.cell_volume * grid.t_max
    assert abs(rep.empirical - frozen) <= 0.10 * frozen


def test_qv_standard_error_halves_with_doubled_paths():
    grid = make_grid([(-1.0, 1.0)], dx=0.1, dt=5e-4, t_max=0.05)
    u0 = make_fn("standing_wave", 1)
    co = S.Coefficients(b1=0.5, b2=0.5)
    rep1 = qv_check(grid, co, u0, None, paths=100, seed=4)
    rep2 = qv_check(grid, co, u0, None, paths=400, seed=4)
    ratio = rep1.standard_error / rep2.standard_error
    assert 1.2 <= ratio / math.sqrt(2.0) * math.sqrt(2.0) <= 2.8  # se(100)/se(400) ~ 2
    # and the documented halved-paths factor band
    rep_half = qv_check(grid, co, u0, None, paths=200, seed=4)
    assert 1.2 <= rep1.standard_error / rep_half.standard_error <= 1.8


def test_qv_weighted_by_theta():
    grid = _qv_grid()
    rho = make_fn("char_linear", 1)
    fam = WeightFamily(rho)
    params = WeightParams(lam=0.5, gamma=1.0, mu=0.0, t0=0.0, x0=(0.0,))
    u0 = make_fn("standing_wave", 1)
    rep = qv_check(grid, S.Coefficients(b1=0.2, b2=1.0), u0, None, paths=100, seed=5, family=fam, params=params)
    assert rep.relative_error <= 0.05
    assert rep.predicted > 0.0


def test_qv_requires_enough_paths():
    grid = _qv_grid()
    u0 = make_fn("standing_wave", 1)
    with pytest.raises(StatisticsError):
        qv_check(grid, S.Coefficients(b1=0.2), u0, None, paths=10, seed=1)


# ---------------------------------------------------------------------------
# inequality scans
# ---------------------------------------------------------------------------


def _t42_setup(lambdas=(8.0, 16.0, 32.0, 64.0)):
    rho = make_fn("char_linear", 1)
    fam = WeightFamily(rho, 0.0)
    u_fn = make_fn("bump4", 1, amp=1.0, tc=0.0, rt=0.024, cx1=0.06, rx1=0.024)
    params = WeightParams(lam=8.0, gamma=2.0, mu=0.01, t0=0.0, x0=(0.0,))
    region = RegionSpec(t_lo=-0.08, t_hi=0.08, nt=81, x_lo=(-0.02,), x_hi=(0.15,), nx=87)
    cutoff = CutoffSpec(c2=0.65, eps=0.1)
    return fam, u_fn, params, list(lambdas), region, cutoff


def test_gap_zero_for_zero_field():
    fam, _, params, lambdas, region, cutoff = _t42_setup()
    zero = make_fn("bump4", 1, amp=0.0, tc=0.0, rt=0.024, cx1=0.06, rx1=0.024)
    scan = inequality_gap("T4.2", zero, fam, params, lambdas, region, cutoff=cutoff)
    assert all(r.gap_scaled == 0.0 for r in scan.rows)


def test_gap_t42_nonnegative_and_monotone():
    fam, u_fn, params, lambdas, region, cutoff = _t42_setup()
    scan = inequality_gap("T4.2", u_fn, fam, params, lambdas, region, cutoff=cutoff, c0=1.0, c1=1.0, b1=1.0)
    gaps = [r.gap for r in scan.rows]
    assert all(g >= 0.0 for g in gaps)
    assert all(b >= a for a, b in zip(gaps, gaps[1:]))
    assert scan.margins["vt_margin"] > 0.0
    assert scan.margins["v_margin"] > 0.0
    assert scan.margins["structure_min_eig"] >= 0.0


def test_gap_quadratic_homogeneity_exact():
    fam, u_fn, params, lambdas, region, cutoff = _t42_setup(lambdas=(8.0,))
    scan = inequality_gap("T4.2", u_fn, fam, params, lambdas, region, cutoff=cutoff)
    expect, actual = scan.homogeneity_pair
    assert abs(actual - expect) <= 1e-10 * abs(expect)


def test_gap_t32_remainder_is_subcubic():
    fam, u_fn, params, _, region, cutoff = _t42_setup()
    fam = WeightFamily(make_fn("char_linear", 1), 0.3)
    scan = inequality_gap("T3.2", u_fn, fam, replace(params, mu=0.2), [8.0, 16.0, 32.0, 64.0], region, cutoff=cutoff)
    # the remainder is O(lam^2): dividing by lam^3 must vanish as lam grows
    ratios = [abs(r.gap_scaled) / r.lam**3 for r in scan.rows]
    assert ratios[-1] <= 0.5 * ratios[0]
    # the exact identity backs every row
    for r in scan.rows:
        lhs, rhs = r.components["identity_lhs"], r.components["identity_rhs"]
        assert abs(lhs - rhs) <= 1e-7 * max(1.0, abs(lhs), abs(rhs))


def test_gap_t51_runs_and_reports_margins():
    rho = make_fn("quadratic", 1, c0=0.0, ct=1.0, qtt=3.0, cx1=-1.0, qx1=1.0)
    fam = WeightFamily(rho, 1.5)
    u_fn = make_fn("bump4", 1, amp=1.0, tc=0.0, rt=0.02, cx1=0.08, rx1=0.02)
    params = WeightParams(lam=8.0, gamma=1.0, mu=0.05, t0=0.0, x0=(0.0,))
    region = RegionSpec(t_lo=-0.06, t_hi=0.06, nt=61, x_lo=(0.0,), x_hi=(0.16,), nx=81)
    scan = inequality_gap("T5.1", u_fn, fam, params, [8.0, 16.0], region, c1=0.5, b1=0.5)
    assert len(scan.rows) == 2
    assert all(np.isfinite(r.gap_scaled) for r in scan.rows)


def test_gap_t62_cone_preset_positive():
    alpha = 0.9
    rho = make_fn("cone_level", 1, a=alpha, t0=0.0, cx1=0.0)
    fam = WeightFamily(rho, 2.0)
    u_fn = make_fn("bump4", 1, amp=1.0, tc=3.2, rt=0.15, cx1=0.0, rx1=0.15)
    params = WeightParams(lam=8.0, gamma=1.0, mu=0.0, t0=0.0, x0=(0.0,))
    region = RegionSpec(t_lo=2.9, t_hi=3.5, nt=61, x_lo=(-0.35,), x_hi=(0.35,), nx=71)
    scan = inequality_gap("T6.2", u_fn, fam, params, [8.0, 16.0], region, c1=4.0, b1=4.0)
    assert all(r.gap_scaled > 0.0 for r in scan.rows)


def test_gap_t62_rejects_nonzero_mu():
    fam, u_fn, params, lambdas, region, cutoff = _t42_setup()
    with pytest.raises(Exception, match="mu"):
        inequality_gap("T6.2", u_fn, fam, params, lambdas, region)


def test_gap_support_error_when_bump_touches_boundary():
    fam, _, params, lambdas, _, cutoff = _t42_setup()
    u_fn = make_fn("bump4", 1, amp=1.0, tc=0.0, rt=0.5, cx1=0.06, rx1=0.5)
    region = RegionSpec(t_lo=-0.08, t_hi=0.08, nt=41, x_lo=(-0.02,), x_hi=(0.15,), nx=41)
    with pytest.raises(SupportError):
        inequality_gap("T4.2", u_fn, fam, params, lambdas, region, cutoff=cutoff)


def test_gap_monte_carlo_mode_close_to_surrogate():
    fam, u_fn, params, _, region, cutoff = _t42_setup()
    det = inequality_gap("T4.2", u_fn, fam, params, [8.0], region, cutoff=cutoff)
    mc = inequality_gap("T4.2", u_fn, fam, params, [8.0], region, cutoff=cutoff, paths=160, seed=9)
    d, m = det.rows[0].components["qv"], mc.rows[0].components["qv"]
    assert abs(m - d) <= 0.25 * abs(d)
    assert mc.rows[0].gap_scaled >= 0.0
