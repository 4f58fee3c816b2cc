import numpy as np

from triplewell.rng import INCREMENT, MASK, MULTIPLIER, Lcg64


def test_first_draws_follow_recurrence():
    g = Lcg64(42)
    state = 42
    for _ in range(5):
        state = (MULTIPLIER * state + INCREMENT) & MASK
        assert g.next_u64() == state


def test_uniform_range_and_reproducibility():
    a = Lcg64(7).random(1000)
    b = Lcg64(7).random(1000)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0
    assert abs(a.mean() - 0.5) < 0.05


def test_normal_consumes_two_uniforms():
    g = Lcg64(3)
    z = g.normal()
    h = Lcg64(3)
    u1, u2 = h.random(), h.random()
    assert z == np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
    assert g.state == h.state


def test_normal_moments():
    z = Lcg64(11).normal(20000)
    assert abs(z.mean()) < 0.03
    assert abs(z.std() - 1.0) < 0.03


def test_spawn_streams_differ():
    g = Lcg64(5)
    assert g.spawn(0).random() != g.spawn(1).random()
