import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import kink, random_box, random_network
from probhull.bounds import (
    Status,
    Verdict,
    classify,
    classify_many,
    crown_bounds,
    ibp_bounds,
    ibp_margin_bounds,
    linear_bounds,
    margin_bounds_many,
    relax_relu,
    relax_tanh,
)
from probhull.errors import ConfigError
from probhull.gauss import BoxRegion, sample_uniform
from probhull.model import Layer, Network, SafetySpec, margins


def identity_net(m):
    return Network((Layer(np.eye(m), np.zeros(m), "identity"),))


def random_spec(net, rng):
    k = int(rng.integers(1, 4))
    return SafetySpec(rng.normal(size=(k, net.output_dim)), rng.normal(size=k) * 0.3)


# -- IBP ---------------------------------------------------------------------------


def test_ibp_identity_returns_box():
    box = BoxRegion(np.zeros(3), np.ones(3))
    ib = ibp_bounds(identity_net(3), box)
    np.testing.assert_array_equal(ib.lower, box.lower)
    np.testing.assert_array_equal(ib.upper, box.upper)


def test_ibp_relu_hidden_intervals():
    net = Network((Layer([[1.0], [-1.0]], [0.0, 0.0], "relu"), Layer(np.eye(2), np.zeros(2), "identity")))
    ib = ibp_bounds(net, BoxRegion([-1.0], [1.0]))
    np.testing.assert_array_equal(ib.lower, [0.0, 0.0])
    np.testing.assert_array_equal(ib.upper, [1.0, 1.0])


def test_ibp_tanh_is_monotone_image():
    net = Network((Layer([[2.0, -1.0]], [0.5], "tanh"), Layer([[1.0]], [0.0], "identity")))
    box = BoxRegion([-1.0, 0.0], [1.0, 2.0])
    ib = ibp_bounds(net, box)
    assert ib.pre_lower[0][0] == pytest.approx(-3.5) and ib.pre_upper[0][0] == pytest.approx(2.5)
    assert ib.lower[0] == pytest.approx(math.tanh(-3.5)) and ib.upper[0] == pytest.approx(math.tanh(2.5))


def test_bounds_dimension_mismatch():
    with pytest.raises(ConfigError):
        ibp_bounds(identity_net(2), BoxRegion([0.0], [1.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_ibp_monotone_under_shrinking(seed, f_lo, f_hi):
    net, rng = random_network(seed, "relu" if seed % 2 else "tanh")
    spec = random_spec(net, rng)
    outer = random_box(rng, net.input_dim)
    lo = outer.lower + 0.5 * f_lo * outer.widths
    hi = outer.upper - 0.5 * f_hi * outer.widths
    inner = BoxRegion(lo, np.maximum(lo, hi))
    lo_outer, hi_outer = ibp_margin_bounds(net, spec, outer)
    lo_inner, hi_inner = ibp_margin_bounds(net, spec, inner)
    assert np.all(lo_inner >= lo_outer - 1e-9)
    assert np.all(hi_inner <= hi_outer + 1e-9)


# -- ReLU relaxation ------------------------------------------------------------------


def test_relax_relu_unstable_symmetric():
    lower, upper = relax_relu(-1.0, 1.0)
    assert float(upper.slope) == 0.5 and float(upper.intercept) == 0.5
    assert float(lower.slope) == 0.0 and float(lower.intercept) == 0.0


def test_relax_relu_active_and_inactive():
    lower, upper = relax_relu(0.3, 2.0)
    assert (float(lower.slope), float(lower.intercept), float(upper.slope), float(upper.intercept)) == (1, 0, 1, 0)
    lower, upper = relax_relu(-2.0, -0.1)
    assert (float(lower.slope), float(lower.intercept), float(upper.slope), float(upper.intercept)) == (0, 0, 0, 0)


def test_relax_relu_adaptive_lower_slope():
    assert float(relax_relu(-1.0, 3.0)[0].slope) == 1.0
    assert float(relax_relu(-3.0, 1.0)[0].slope) == 0.0


def test_relax_relu_rejects_inverted():
    with pytest.raises(ConfigError):
        relax_relu(1.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(0, 50))
def test_relax_relu_sound(l, width):
    u = l + width
    lower, upper = relax_relu(l, u)
    z = np.linspace(l, u, 201)
    y = np.maximum(z, 0)
    assert np.all(lower(z) <= y + 1e-9)
    assert np.all(upper(z) >= y - 1e-9)


# -- tanh relaxation -----------------------------------------------------------------


def test_relax_tanh_point_interval_at_zero():
    lower, upper = relax_tanh(0.0, 0.0)
    for line in (lower, upper):
        assert float(line.slope) == pytest.approx(1.0) and float(line.intercept) == pytest.approx(0.0)


def test_relax_tanh_convex_chord():
    _, upper = relax_tanh(-3.0, -1.0)
    assert float(upper.slope) == pytest.approx(0.1167302988654828, abs=1e-12)


def test_relax_tanh_symmetric_interval_sound_at_samples():
    lower, upper = relax_tanh(-1.0, 1.0)
    z = np.random.default_rng(0).uniform(-1.0, 1.0, 1000)
    assert np.all(np.tanh(z) - upper(z) <= 1e-12)
    assert np.all(lower(z) - np.tanh(z) <= 1e-12)


def test_relax_tanh_rejects_inverted():
    with pytest.raises(ConfigError):
        relax_tanh(0.5, -0.5)


@settings(max_examples=300, deadline=None)
@given(st.floats(-15, 15), st.floats(0, 20))
def test_relax_tanh_sound_dense(l, width):
    u = l + width
    lower, upper = relax_tanh(l, u)
    z = np.linspace(l, u, 2001)
    t = np.tanh(z)
    assert np.all(lower(z) <= t + 1e-9)
    assert np.all(upper(z) >= t - 1e-9)


def test_relax_tanh_vectorized_matches_scalar():
    rng = np.random.default_rng(4)
    l = rng.uniform(-4, 4, 50)
    u = l + rng.uniform(0, 5, 50)
    lower, upper = relax_tanh(l, u)
    for i in range(50):
        lo_i, up_i = relax_tanh(l[i], u[i])
        assert float(lo_i.slope) == pytest.approx(lower.slope[i], abs=1e-12)
        assert float(up_i.intercept) == pytest.approx(upper.intercept[i], abs=1e-12)


# -- CROWN and classify --------------------------------------------------------------


def test_crown_identity_safe():
    net, spec = identity_net(2), SafetySpec(np.eye(2), np.zeros(2))
    v = crown_bounds(net, spec, BoxRegion([1.0, 1.0], [2.0, 2.0]))
    assert v.status is Status.SAFE
    np.testing.assert_allclose(v.lower, [1.0, 1.0])


def test_crown_identity_unsafe():
    net, spec = identity_net(2), SafetySpec(np.eye(2), np.zeros(2))
    v = crown_bounds(net, spec, BoxRegion([-2.0, -2.0], [-1.0, -1.0]))
    assert v.status is Status.UNSAFE
    np.testing.assert_allclose(v.upper, [-1.0, -1.0])


def test_crown_straddling_box_brackets_grid_minimum():
    net, spec = kink()
    box = BoxRegion([-1.0, -0.5], [1.0, 1.5])
    v = crown_bounds(net, spec, box)
    assert v.status is Status.UNKNOWN
    xs = np.linspace(box.lower[0], box.upper[0], 100)
    ys = np.linspace(box.lower[1], box.upper[1], 100)
    grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    m = margins(net, spec, grid)[:, 0]
    assert v.lower[0] <= m.min() <= v.upper[0]
    assert v.lower[0] <= m.max() <= v.upper[0]


def test_linear_bounds_hold_pointwise():
    rng = np.random.default_rng(12)
    for seed in range(30):
        net, _ = random_network(seed, "tanh" if seed % 3 == 0 else "relu")
        spec = random_spec(net, rng)
        box = random_box(rng, net.input_dim)
        lb = linear_bounds(net, spec, box)
        x = sample_uniform(box, 500, rng)
        m = margins(net, spec, x)
        assert np.all(x @ lb.lower_coeffs.T + lb.lower_const <= m + 1e-9)
        assert np.all(x @ lb.upper_coeffs.T + lb.upper_const >= m - 1e-9)


@pytest.mark.parametrize("intermediate", ["ibp", "crown"])
def test_soundness_and_dominance_random(intermediate):
    rng = np.random.default_rng(99)
    for seed in range(60):
        net, _ = random_network(seed + 500, "relu" if seed % 2 else "tanh")
        spec = random_spec(net, rng)
        box = random_box(rng, net.input_dim)
        v = classify(net, spec, box, intermediate)
        m = margins(net, spec, sample_uniform(box, 1000, rng))
        assert np.all(m >= v.lower - 1e-9) and np.all(m <= v.upper + 1e-9)
        ibp_lo, ibp_hi = ibp_margin_bounds(net, spec, box)
        assert np.all(v.lower >= ibp_lo - 1e-9) and np.all(v.upper <= ibp_hi + 1e-9)


def test_crown_intermediate_is_at_least_as_tight():
    rng = np.random.default_rng(5)
    for seed in range(30):
        net, _ = random_network(seed + 900, "relu")
        spec = random_spec(net, rng)
        box = random_box(rng, net.input_dim)
        a = classify(net, spec, box, "ibp")
        b = classify(net, spec, box, "crown")
        assert np.all(b.upper - b.lower <= a.upper - a.lower + 1e-9)


def test_unknown_intermediate_mode():
    net, spec = kink()
    with pytest.raises(ConfigError):
        classify(net, spec, BoxRegion([0.0, 0.0], [1.0, 1.0]), "alpha")


def test_classify_many_matches_single():
    net, spec = kink()
    rng = np.random.default_rng(1)
    boxes = [random_box(rng, 2) for _ in range(20)]
    many = classify_many(net, spec, boxes)
    for box, v in zip(boxes, many):
        single = classify(net, spec, box)
        assert single.status == v.status
        np.testing.assert_allclose(single.lower, v.lower, atol=1e-12)
    assert classify_many(net, spec, []) == []


def test_classify_never_safe_with_violating_sample():
    rng = np.random.default_rng(8)
    for seed in range(40):
        net, _ = random_network(seed, "relu")
        spec = random_spec(net, rng)
        box = random_box(rng, net.input_dim, scale=0.5)
        m = margins(net, spec, sample_uniform(box, 300, rng))
        v = classify(net, spec, box)
        if v.status is Status.SAFE:
            assert np.all(m >= 0)
        if v.status is Status.UNSAFE:
            assert np.all(np.any(m < 0, axis=1))


def test_classify_grid_tricolor_pattern():
    net, spec = kink()
    edges = np.linspace(-3, 3, 17)
    statuses = {}
    for i in range(16):
        for j in range(16):
            box = BoxRegion([edges[i], edges[j]], [edges[i + 1], edges[j + 1]])
            statuses[i, j] = classify(net, spec, box).status
    counts = {s: sum(v is s for v in statuses.values()) for s in Status}
    assert all(counts[s] > 0 for s in Status)
    # the boundary runs left to right: high rows safe, low rows unsafe
    assert statuses[0, 15] is Status.SAFE and statuses[15, 15] is Status.SAFE
    assert statuses[0, 0] is Status.UNSAFE and statuses[15, 0] is Status.UNSAFE
    # unknown cells only where the column changes from unsafe to safe
    for i in range(16):
        column = [statuses[i, j] for j in range(16)]
        unknown = [j for j, s in enumerate(column) if s is Status.UNKNOWN]
        assert 1 <= len(unknown) <= 3
        assert all(s is Status.UNSAFE for s in column[: unknown[0]])
        assert all(s is Status.SAFE for s in column[unknown[-1] + 1 :])


def test_verdict_trichotomy():
    assert Verdict.from_bounds([0.1, 1.0], [1.0, 2.0]).status is Status.SAFE
    assert Verdict.from_bounds([-1.0, 1.0], [-0.5, 2.0]).status is Status.UNSAFE
    assert Verdict.from_bounds([-1.0, 1.0], [0.0, 2.0]).status is Status.UNKNOWN


def test_verdict_does_not_certify_rounding_noise():
    # a flat region whose margin is exactly zero, seen through rounding
    assert Verdict.from_bounds([-0.009], [-6.9e-18]).status is Status.UNKNOWN
    assert Verdict.from_bounds([1e-17, 1.0], [0.5, 2.0]).status is Status.UNKNOWN


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 5)), min_size=1, max_size=4))
def test_verdict_rules_exhaustive(rows):
    lower = np.array([r[0] for r in rows])
    upper = lower + np.array([r[1] for r in rows])
    status = Verdict.from_bounds(lower, upper).status
    if status is Status.SAFE:
        assert np.all(lower >= 0)
    if status is Status.UNSAFE:
        assert np.any(upper < 0) and not np.all(lower >= 0)
    # away from the zero band the rules are decisive
    if np.all(lower >= 1e-6):
        assert status is Status.SAFE
    elif np.any(upper <= -1e-6):
        assert status is Status.UNSAFE


def test_margin_bounds_many_shapes():
    net, spec = kink()
    boxes = [BoxRegion([0.0, 0.0], [1.0, 1.0]), BoxRegion([-1.0, -1.0], [0.0, 0.0])]
    out = margin_bounds_many(net, spec, boxes)
    assert all(a.shape == (2, 1) for a in out)
