import numpy as np
from scipy import stats

from hgmdp.rng import STREAMS, make_rng, named_streams, spawn, standard_normal


def test_named_streams_are_reproducible_and_distinct():
    a, b = named_streams(5), named_streams(5)
    assert tuple(a) == STREAMS
    draws = {k: a[k].integers(0, 2**62) for k in STREAMS}
    assert draws == {k: b[k].integers(0, 2**62) for k in STREAMS}
    assert len(set(draws.values())) == len(STREAMS)


def test_spawn_children_independent_of_draw_count():
    s1 = spawn(9, 3)
    s1[0].integers(0, 10, 1000)
    s2 = spawn(9, 3)
    assert s1[1].integers(0, 2**62) == s2[1].integers(0, 2**62)


def test_make_rng_passthrough():
    g = np.random.default_rng(1)
    assert make_rng(g) is g
    assert make_rng(np.random.SeedSequence(4)).integers(0, 2**62) == make_rng(4).integers(0, 2**62)


def test_standard_normal_is_finite_and_gaussian():
    z = standard_normal(make_rng(0), 200_000)
    assert np.isfinite(z).all()
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_standard_normal_extreme_uniforms_stay_finite():
    from scipy.special import ndtri

    lo, hi = 0.5 / 2**52, (2**52 - 0.5) / 2**52
    assert np.isfinite(ndtri(lo)) and np.isfinite(ndtri(hi)) and hi < 1.0
