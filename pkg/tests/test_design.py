import math

import numpy as np
import pytest

from promkit import (
    DesignSpec,
    InfeasibleDesignError,
    SnrMatrix,
    ValidationError,
    admissible_ratios,
    base_venc,
    design_three_point,
    vencs_from_moments,
)

SNR_5_10_5 = SnrMatrix.from_per_encoding([5.0, 10.0, 5.0], 1)


def small_spec(**overrides):
    kwargs = dict(p_max=5, q_max=4, snr=SNR_5_10_5, eps=(0.01, 0.01),
                  omega_eps=50.0, gamma_m_tau=math.pi / 2)
    kwargs.update(overrides)
    return DesignSpec(**kwargs)


@pytest.mark.parametrize("p,q,expect", [
    (5, 3, [15, 6, 10]),
    (7, 5, [35, 10, 14]),
    (6, 5, [30, 5, 6]),
    (11, 9, [99, 18, 22]),
])
def test_base_venc_oracle(p, q, expect):
    assert base_venc(p, q).tolist() == expect


def test_base_venc_rejects_bad_ratios():
    for p, q in ((4, 2), (5, 5), (3, 1), (8, 4)):
        with pytest.raises(ValidationError):
            base_venc(p, q)


def test_admissible_ratios():
    ratios = admissible_ratios(10, 10)
    assert len(ratios) == 15
    assert ratios[0] == (3, 2)
    assert (5, 3) in ratios and (6, 5) in ratios and (8, 7) in ratios
    assert (4, 2) not in ratios  # not coprime
    assert (6, 3) not in ratios  # ratio 2 aliases midpoints
    for p, q in ratios:
        assert math.gcd(p, q) == 1
        assert q < p < 2 * q


def test_spec_validation():
    with pytest.raises(ValidationError):
        small_spec(p_max=2)
    with pytest.raises(ValidationError):
        small_spec(q_max=1)
    with pytest.raises(ValidationError):
        small_spec(eps=(0.0, 0.01))
    with pytest.raises(ValidationError):
        small_spec(eps=(0.01, 1.0))
    with pytest.raises(ValidationError):
        small_spec(omega_eps=0.0)
    with pytest.raises(ValidationError):
        small_spec(gamma_m_tau=-1.0)
    with pytest.raises(ValidationError):
        small_spec(trials_override=0)


def test_design_result_consistency():
    res = design_three_point(small_spec(), seed=11)
    assert (res.p, res.q) == (5, 4)
    assert np.allclose(res.venc.venc, res.c * base_venc(res.p, res.q))
    assert np.allclose(vencs_from_moments(res.moments).venc, res.venc.venc)
    assert res.trials == 10000  # ceil(100 / eps1)
    selected = [r for r in res.candidates if r.status == "selected"]
    assert len(selected) == 1
    sel = selected[0]
    assert (sel.p, sel.q) == (res.p, res.q)
    assert res.predicted_rmse == pytest.approx(res.c * sel.sigma_base)
    assert res.unwrap_error_prob == sel.error_count / sel.trials_run
    assert sel.error_count < 0.01 * res.trials
    assert [(r.p, r.q) for r in res.candidates] == [(3, 2), (4, 3), (5, 3),
                                                    (5, 4)]
    for rep in res.candidates:
        if rep.status == "pruned":
            assert rep.objective > res.predicted_rmse
            assert rep.trials_run == 0


def test_design_deterministic():
    a = design_three_point(small_spec(), seed=11)
    b = design_three_point(small_spec(), seed=11)
    assert (a.p, a.q, a.c) == (b.p, b.q, b.c)
    assert np.array_equal(a.venc.venc, b.venc.venc)
    assert [(r.status, r.trials_run, r.error_count) for r in a.candidates] \
        == [(r.status, r.trials_run, r.error_count) for r in b.candidates]


def test_design_scale_linearity():
    a = design_three_point(small_spec(), seed=11)
    b = design_three_point(small_spec(omega_eps=100.0), seed=11)
    assert (b.p, b.q) == (a.p, a.q)
    assert b.c == pytest.approx(2.0 * a.c, rel=1e-12)
    assert np.allclose(b.venc.venc, 2.0 * a.venc.venc, rtol=1e-12)
    assert b.predicted_rmse == pytest.approx(2.0 * a.predicted_rmse,
                                             rel=1e-12)


def test_design_moment_cap_branch():
    tau = math.pi / 4000
    res = design_three_point(small_spec(omega_eps=0.001, gamma_m_tau=tau),
                             seed=11)
    cap = math.pi / (2.0 * tau * res.q * (res.p - res.q))
    assert res.c == cap
    assert res.moments.gamma_m1.max() == pytest.approx(tau, rel=1e-12)


def test_design_infeasible_margin():
    # at this SNR the aliasing margin swallows every unambiguous range
    spec = DesignSpec(p_max=4, q_max=3,
                      snr=SnrMatrix.from_per_encoding([0.2, 0.4, 0.2], 1),
                      eps=(0.5, 1e-9), omega_eps=10.0, gamma_m_tau=math.pi)
    with pytest.raises(InfeasibleDesignError) as err:
        design_three_point(spec, seed=1)
    reports = err.value.diagnostics
    assert [(r.p, r.q) for r in reports] == [(3, 2), (4, 3)]
    assert all(r.status == "infeasible" for r in reports)


def test_design_infeasible_error_budget():
    # noisy enough that every candidate blows the unwrapping budget
    spec = DesignSpec(p_max=4, q_max=3,
                      snr=SnrMatrix.from_per_encoding([1.0, 2.0, 1.0], 1),
                      eps=(0.001, 0.01), omega_eps=10.0,
                      gamma_m_tau=math.pi)
    with pytest.raises(InfeasibleDesignError) as err:
        design_three_point(spec, seed=1)
    reports = err.value.diagnostics
    assert all(r.status == "rejected_screen" for r in reports)
    for rep in reports:
        assert rep.error_count >= 0.001 * rep.trials_run


def test_design_trials_cap_and_override():
    with pytest.raises(ValidationError):
        design_three_point(small_spec(eps=(1e-10, 0.01)), seed=1)
    res = design_three_point(
        small_spec(eps=(1e-10, 0.01),
                   snr=SnrMatrix.from_per_encoding([20.0, 40.0, 20.0], 1),
                   trials_override=1000),
        seed=1)
    assert res.trials == 1000
    assert res.unwrap_error_prob == 0.0
