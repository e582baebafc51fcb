import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hgmdp.mechanisms import DomainError, PrivacyParams, RedistributionVector, calibrate_extended, calibrate_hgm, make_spec
from hgmdp.privacy_audit import (
    AuditReport,
    audit_mechanism,
    condition_crossover,
    empirical_margin,
    hockey_stick_delta,
    monte_carlo_audit,
    privacy_loss_exceedance,
)

# 1e7-sample Monte-Carlo estimate of Pr(|1 + 2 lam| / 2 > 0.5), lam ~ N(0, 1)
MC_EXCEEDANCE_1_1_HALF = 0.6587993


def test_exceedance_vanishes_for_huge_noise():
    assert privacy_loss_exceedance(1e6, 1, 1) < 1e-12


def test_exceedance_at_extended_calibration():
    sigma = calibrate_extended(PrivacyParams(1, 1e-5), 1)
    assert privacy_loss_exceedance(sigma, 1, 1) <= 1e-5


def test_exceedance_matches_monte_carlo_oracle():
    assert privacy_loss_exceedance(1, 1, 0.5) == pytest.approx(MC_EXCEEDANCE_1_1_HALF, abs=5 * math.sqrt(0.25 / 1e7))


@pytest.mark.parametrize("args", [(0, 1, 1), (1, 0, 1), (1, 1, 0), (-1, 1, 1)])
def test_exceedance_domain(args):
    with pytest.raises(DomainError):
        privacy_loss_exceedance(*args)


@given(st.floats(0.1, 50), st.floats(1.01, 4), st.floats(0.05, 10))
def test_exceedance_decreasing_in_sigma(sigma, f, eps):
    assert privacy_loss_exceedance(sigma * f, 1, eps) <= privacy_loss_exceedance(sigma, 1, eps)


def test_hockey_stick_below_exceedance():
    for sigma in (0.5, 1, 3):
        assert 0 <= hockey_stick_delta(sigma, 1, 1) <= privacy_loss_exceedance(sigma, 1, 1)


def test_condition_crossover():
    assert condition_crossover(1e-5)
    assert condition_crossover(0.48)
    assert condition_crossover(0.4839414)
    assert not condition_crossover(0.4839415)
    assert not condition_crossover(0.9)


def test_uniform_axis_audit_passes():
    spec = make_spec("extended", PrivacyParams(1, 1e-2), 1, k=3)
    rep = monte_carlo_audit(spec, 1, [1, 0, 0], 1_000_000, 0)
    assert rep.empirical_exceedance <= 1e-2 + empirical_margin(1e-2, 1_000_000)
    assert rep.passed
    assert abs(rep.empirical_exceedance - rep.analytic_exceedance) < 4 * math.sqrt(rep.analytic_exceedance / 1e6)


def test_zero_shift_audit():
    spec = make_spec("extended", PrivacyParams(1, 1e-2), 1, k=2)
    rep = monte_carlo_audit(spec, 1, [0, 0], 10_000, 0)
    assert rep.empirical_exceedance == 0 and rep.analytic_exceedance == 0 and rep.passed


def test_heterogeneous_low_noise_component_audit():
    r = RedistributionVector([0.9, 0.1])
    spec = calibrate_hgm(PrivacyParams(1, 1e-2), 1, r)
    rep = monte_carlo_audit(spec, 1, [0, 1], 1_000_000, 1)
    # one-dimensional reduction: the same number as the homogeneous mechanism at this sigma
    assert rep.analytic_exceedance == pytest.approx(privacy_loss_exceedance(spec.sigma, 1, 1), rel=1e-12)
    assert rep.passed


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 0.95))
def test_hgm_worst_case_matches_uniform(a, b, w):
    if abs(a) + abs(b) < 1e-3:
        return
    het = calibrate_hgm(PrivacyParams(2, 1e-3), 1, RedistributionVector([w, 1 - w]))
    hom = make_spec("extended", PrivacyParams(2, 1e-3), 1, k=2)
    r1 = monte_carlo_audit(het, 2, [a, b], 10_000, 0)
    r2 = monte_carlo_audit(hom, 2, [1, 0], 10_000, 0)
    assert r1.analytic_exceedance == pytest.approx(r2.analytic_exceedance, rel=1e-9)


def test_parallel_audit_is_deterministic():
    spec = make_spec("extended", PrivacyParams(0.5, 1e-2), 1, k=1)
    a = monte_carlo_audit(spec, 0.5, [1], 200_000, 5, workers=4)
    b = monte_carlo_audit(spec, 0.5, [1], 200_000, 5, workers=4)
    assert a == b


def test_audit_requires_enough_samples():
    spec = make_spec("extended", PrivacyParams(1, 1e-2), 1)
    with pytest.raises(ValueError):
        monte_carlo_audit(spec, 1, [1], 9_999, 0)


def test_report_csv_row():
    rep = audit_mechanism("extended", 1, 1e-2, samples=10_000)
    row = rep.csv_row().split(",")
    assert len(row) == len(AuditReport.CSV_HEADER.split(","))
    assert row[0] == "extended" and row[6] in ("0", "1")


def test_passed_definition():
    rep = audit_mechanism("analytic", 1, 1e-2, samples=10_000)
    expect = rep.analytic_exceedance <= rep.delta and rep.empirical_exceedance <= rep.delta + empirical_margin(
        rep.delta, rep.samples
    )
    assert rep.passed == expect
