"""Sound bounds on safety margins over input boxes.

``ibp_bounds`` propagates intervals layer by layer. ``crown_bounds``
back-substitutes per-neuron linear relaxations (pre-activation bounds
taken from IBP) from the margin rows down to the input and concretizes
the resulting affine functions over the box. ``classify`` turns the
bounds into a safe / unsafe / unknown verdict.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .gauss import BoxRegion
from .model import Network, SafetySpec

TANH_BISECT_MAX_ITER = 200
TANH_BISECT_TOL = 1e-9
CERT_SLACK = 1e-9


class Line(NamedTuple):
    slope: np.ndarray
    intercept: np.ndarray

    def __call__(self, z):
        return self.slope * z + self.intercept


class Status(str, enum.Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    """Per-constraint bounds ``LB_j <= (C f(x))_j - a_j <= UB_j`` over a box."""

    status: Status
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_bounds(cls, lower, upper) -> "Verdict":
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        # bounds are not outward-rounded, so a margin that is exactly zero on a
        # flat region can come back as -1e-17; keep a scaled slack either way
        slack = CERT_SLACK * (1.0 + np.abs(lower) + np.abs(upper))
        if np.all(lower >= slack):
            status = Status.SAFE
        elif np.any(upper < -slack):
            # one violated row certifies the whole box; see docs/formats.md
            status = Status.UNSAFE
        else:
            status = Status.UNKNOWN
        return cls(status, lower, upper)


@dataclass(frozen=True)
class IntervalBounds:
    """Per-layer pre-activation intervals plus the output interval."""

    pre_lower: list
    pre_upper: list
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class LinearBounds:
    """Affine functions of ``x`` bounding a vector-valued quantity on a box."""

    lower_coeffs: np.ndarray
    lower_const: np.ndarray
    upper_coeffs: np.ndarray
    upper_const: np.ndarray

    def concretize(self, box: BoxRegion):
        lo = _affine_min(self.lower_coeffs, self.lower_const, box)
        hi = -_affine_min(-self.upper_coeffs, -self.upper_const, box)
        return lo, hi


def _affine_min(coeffs, const, box: BoxRegion):
    return np.maximum(coeffs, 0) @ box.lower + np.minimum(coeffs, 0) @ box.upper + const


def _check(net: Network, box: BoxRegion):
    if box.dim != net.input_dim:
        raise ConfigError(f"box has d={box.dim}, network expects {net.input_dim}")


def _stack_boxes(net: Network, boxes):
    for box in boxes:
        _check(net, box)
    return np.stack([b.lower for b in boxes]), np.stack([b.upper for b in boxes])


def _affine_interval(weight, bias, lo, hi):
    # lo, hi: (..., n_in) -> (..., n_out)
    w_pos = np.maximum(weight, 0)
    w_neg = np.minimum(weight, 0)
    return lo @ w_pos.T + hi @ w_neg.T + bias, hi @ w_pos.T + lo @ w_neg.T + bias


def _activation_interval(name, lo, hi):
    if name == "relu":
        return np.maximum(lo, 0), np.maximum(hi, 0)
    if name == "tanh":
        return np.tanh(lo), np.tanh(hi)
    return lo, hi


def _ibp(net: Network, lo, hi) -> IntervalBounds:
    pre_lower, pre_upper = [], []
    for layer in net.layers:
        lo, hi = _affine_interval(layer.weight, layer.bias, lo, hi)
        pre_lower.append(lo)
        pre_upper.append(hi)
        lo, hi = _activation_interval(layer.activation, lo, hi)
    return IntervalBounds(pre_lower, pre_upper, lo, hi)


def ibp_bounds(net: Network, r: BoxRegion) -> IntervalBounds:
    """Interval bound propagation of ``net`` over ``r``."""
    _check(net, r)
    return _ibp(net.folded(), r.lower, r.upper)


def ibp_margin_bounds(net: Network, spec: SafetySpec, r: BoxRegion):
    """Margin bounds obtained by pushing the IBP output box through ``C``."""
    spec.check(net)
    ib = ibp_bounds(net, r)
    return _affine_interval(spec.C, -spec.a, ib.lower, ib.upper)


def _check_interval(l, u):
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if np.any(l > u):
        raise ConfigError("relaxation needs lower <= upper")
    return l, u


def relax_relu(l, u):
    """Linear lower/upper bounds of ReLU on ``[l, u]``.

    Unstable neurons get the chord as upper line and slope 0 or 1 as lower
    line, whichever is closer to the chord (ties toward 0).
    """
    l, u = _check_interval(l, u)
    active = l >= 0
    inactive = (u <= 0) & ~active
    unstable = ~(active | inactive)
    width = np.where(unstable, u - l, 1.0)
    up_slope = np.where(active, 1.0, np.where(unstable, u / width, 0.0))
    up_icpt = np.where(unstable, -l * u / width, 0.0)
    lo_slope = np.where(active, 1.0, np.where(unstable & (-l < u), 1.0, 0.0))
    lo_icpt = np.zeros_like(lo_slope)
    return Line(lo_slope, lo_icpt), Line(up_slope, up_icpt)


def _dtanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _tangent_through(anchor):
    """Slope of a line through ``(anchor, tanh(anchor))``, ``anchor < 0``,
    touching tanh at some ``t >= 0`` and lying above it on ``[anchor, inf)``.

    The returned slope is taken at the lower end of the bisection bracket,
    so it never undershoots the exact tangent slope. ``ok`` is False where
    bisection could not bracket a root.
    """
    t_anchor = np.tanh(anchor)

    def gap(t):
        return np.tanh(t) - t_anchor - _dtanh(t) * (t - anchor)

    lo = np.zeros_like(anchor)
    hi = np.full_like(anchor, 20.0)
    ok = (gap(hi) > 0) & np.isfinite(anchor)
    for _ in range(TANH_BISECT_MAX_ITER):
        if np.all(hi - lo <= TANH_BISECT_TOL):
            break
        mid = 0.5 * (lo + hi)
        pos = gap(mid) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    else:
        ok &= hi - lo <= TANH_BISECT_TOL
    return _dtanh(lo), ok


def relax_tanh(l, u):
    """Linear lower/upper bounds of tanh on ``[l, u]``.

    Convex part (``u <= 0``): chord above, midpoint tangent below. Concave
    part (``l >= 0``): the mirror image. Mixed sign: lines anchored at the
    interval ends and tangent on the far side of the origin.
    """
    l, u = _check_interval(l, u)
    l, u = np.broadcast_arrays(l, u)
    tl, tu = np.tanh(l), np.tanh(u)
    mid = 0.5 * (l + u)
    tan_slope = _dtanh(mid)
    tan_icpt = np.tanh(mid) - tan_slope * mid
    point = l == u
    width = np.where(point, 1.0, u - l)
    chord_slope = np.where(point, _dtanh(l), (tu - tl) / width)
    chord_icpt = tl - chord_slope * l

    convex = (u <= 0) & ~point
    concave = (l >= 0) & ~point & ~convex
    mixed = ~(point | convex | concave)

    up_slope = np.where(convex, chord_slope, tan_slope)
    up_icpt = np.where(convex, chord_icpt, tan_icpt)
    lo_slope = np.where(concave, chord_slope, tan_slope)
    lo_icpt = np.where(concave, chord_icpt, tan_icpt)
    # degenerate interval: tangent at the point for both lines
    up_slope = np.where(point, chord_slope, up_slope)
    up_icpt = np.where(point, chord_icpt, up_icpt)
    lo_slope = np.where(point, chord_slope, lo_slope)
    lo_icpt = np.where(point, chord_icpt, lo_icpt)

    if np.any(mixed):
        anchor_l = np.where(mixed, l, -1.0)
        anchor_u = np.where(mixed, -u, -1.0)
        s_up, ok_up = _tangent_through(anchor_l)
        s_lo, ok_lo = _tangent_through(anchor_u)
        up_slope = np.where(mixed, np.where(ok_up, s_up, 0.0), up_slope)
        up_icpt = np.where(mixed, np.where(ok_up, tl - s_up * l, 1.0), up_icpt)
        lo_slope = np.where(mixed, np.where(ok_lo, s_lo, 0.0), lo_slope)
        lo_icpt = np.where(mixed, np.where(ok_lo, tu - s_lo * u, -1.0), lo_icpt)
    return Line(lo_slope, lo_icpt), Line(up_slope, up_icpt)


def _relaxation(name, l, u):
    if name == "relu":
        return relax_relu(l, u)
    if name == "tanh":
        return relax_tanh(l, u)
    one = np.ones_like(l)
    zero = np.zeros_like(l)
    return Line(one, zero), Line(one, zero)


def _backward(layers, pre_lower, pre_upper, rows, const):
    """Push ``rows @ z_k + const`` (``z_k`` the pre-activation of the last of
    ``layers``) down to the input. ``rows`` is ``(batch, m, n_k)``."""
    last = layers[-1]
    lam_lo = rows @ last.weight
    lam_up = lam_lo.copy()
    c_lo = const + rows @ last.bias
    c_up = c_lo.copy()
    for i in range(len(layers) - 2, -1, -1):
        layer = layers[i]
        lower, upper = _relaxation(layer.activation, pre_lower[i], pre_upper[i])
        ls, li = lower.slope[:, None, :], lower.intercept[:, :, None]
        us, ui = upper.slope[:, None, :], upper.intercept[:, :, None]
        # lower bound: positive coefficients take the lower line
        pos, neg = np.maximum(lam_lo, 0), np.minimum(lam_lo, 0)
        c_lo = c_lo + (pos @ li + neg @ ui)[..., 0]
        lam_lo = pos * ls + neg * us
        pos, neg = np.maximum(lam_up, 0), np.minimum(lam_up, 0)
        c_up = c_up + (pos @ ui + neg @ li)[..., 0]
        lam_up = pos * us + neg * ls
        c_lo = c_lo + lam_lo @ layer.bias
        c_up = c_up + lam_up @ layer.bias
        lam_lo = lam_lo @ layer.weight
        lam_up = lam_up @ layer.weight
    return lam_lo, c_lo, lam_up, c_up


def _back_substitute(net: Network, spec: SafetySpec, ib: IntervalBounds):
    """Batched back-substitution; every array carries a leading box axis."""
    batch = ib.lower.shape[0]
    rows = np.broadcast_to(spec.C, (batch,) + spec.C.shape)
    const = np.broadcast_to(-spec.a, (batch, spec.num_constraints))
    return _backward(net.layers, ib.pre_lower, ib.pre_upper, rows, const)


def _crown_intervals(net: Network, lo, hi) -> IntervalBounds:
    """Pre-activation intervals where each layer is bounded by back-substitution
    over the already tightened earlier layers, intersected with IBP."""
    pre_lower, pre_upper = [], []
    a_lo, a_hi = lo, hi
    for i, layer in enumerate(net.layers):
        z_lo, z_hi = _affine_interval(layer.weight, layer.bias, a_lo, a_hi)
        if i > 0:
            eye = np.broadcast_to(np.eye(layer.out_dim), (lo.shape[0], layer.out_dim, layer.out_dim))
            zero = np.zeros((lo.shape[0], layer.out_dim))
            lam_lo, c_lo, lam_up, c_up = _backward(net.layers[: i + 1], pre_lower, pre_upper, eye, zero)
            z_lo = np.maximum(z_lo, _concretize(lam_lo, c_lo, lo, hi, 1.0))
            z_hi = np.minimum(z_hi, _concretize(lam_up, c_up, lo, hi, -1.0))
            # on near-point boxes the two bounds can cross by rounding
            z_lo, z_hi = np.minimum(z_lo, z_hi), np.maximum(z_lo, z_hi)
        pre_lower.append(z_lo)
        pre_upper.append(z_hi)
        a_lo, a_hi = _activation_interval(layer.activation, z_lo, z_hi)
    return IntervalBounds(pre_lower, pre_upper, a_lo, a_hi)


def _concretize(coeffs, const, lo, hi, sign):
    # sign=+1: minimum of coeffs.x + const over the boxes; sign=-1: maximum
    c = sign * coeffs
    pos, neg = np.maximum(c, 0), np.minimum(c, 0)
    return sign * ((pos @ lo[..., None])[..., 0] + (neg @ hi[..., None])[..., 0] + sign * const)


INTERMEDIATE_MODES = ("ibp", "crown")


def _intervals(net: Network, lo, hi, intermediate: str) -> IntervalBounds:
    if intermediate == "ibp":
        return _ibp(net, lo, hi)
    if intermediate == "crown":
        return _crown_intervals(net, lo, hi)
    raise ConfigError(f"intermediate must be one of {INTERMEDIATE_MODES}, got {intermediate!r}")


def linear_bounds(net: Network, spec: SafetySpec, r: BoxRegion, intermediate: str = "ibp") -> LinearBounds:
    """Affine lower/upper bounds of the margins ``C f(x) - a`` valid on ``r``."""
    spec.check(net)
    _check(net, r)
    net = net.folded()
    ib = _intervals(net, r.lower[None], r.upper[None], intermediate)
    lam_lo, c_lo, lam_up, c_up = _back_substitute(net, spec, ib)
    return LinearBounds(lam_lo[0], c_lo[0], lam_up[0], c_up[0])


def margin_bounds_many(net: Network, spec: SafetySpec, boxes, intermediate: str = "ibp"):
    """``(crown_lower, crown_upper, ibp_lower, ibp_upper)`` for a list of boxes,
    each array shaped ``(len(boxes), k)``.

    With ``intermediate="crown"`` the neuron intervals feeding the
    relaxations are themselves back-substituted (costlier, tighter); the
    IBP pair is always plain interval propagation.
    """
    spec.check(net)
    lo, hi = _stack_boxes(net, boxes)
    net = net.folded()
    ib = _ibp(net, lo, hi)
    ibp_lo, ibp_hi = _affine_interval(spec.C, -spec.a, ib.lower, ib.upper)
    if intermediate != "ibp":
        ib = _intervals(net, lo, hi, intermediate)
    lam_lo, c_lo, lam_up, c_up = _back_substitute(net, spec, ib)
    crown_lo = _concretize(lam_lo, c_lo, lo, hi, 1.0)
    crown_hi = _concretize(lam_up, c_up, lo, hi, -1.0)
    if intermediate != "ibp":
        out_lo, out_hi = _affine_interval(spec.C, -spec.a, ib.lower, ib.upper)
        crown_lo, crown_hi = np.maximum(crown_lo, out_lo), np.minimum(crown_hi, out_hi)
    return crown_lo, crown_hi, ibp_lo, ibp_hi


def crown_bounds(net: Network, spec: SafetySpec, r: BoxRegion, intermediate: str = "ibp") -> Verdict:
    """Verdict from back-substituted linear bounds.

    The adaptive ReLU slope and the tanh tangent lines can leave the IBP
    range of a neuron, so pure back-substitution is occasionally looser
    than IBP on wide boxes. Each row keeps the tighter of the two (both are
    sound); ``linear_bounds(...).concretize(r)`` gives the raw result.
    """
    return classify_many(net, spec, [r], intermediate)[0]


def classify_many(net: Network, spec: SafetySpec, boxes, intermediate: str = "ibp") -> list:
    """``classify`` over several boxes in one vectorized pass."""
    if not boxes:
        return []
    crown_lo, crown_hi, ibp_lo, ibp_hi = margin_bounds_many(net, spec, boxes, intermediate)
    lower = np.maximum(crown_lo, ibp_lo)
    upper = np.minimum(crown_hi, ibp_hi)
    return [Verdict.from_bounds(lower[i], upper[i]) for i in range(len(boxes))]


def classify(net: Network, spec: SafetySpec, r: BoxRegion, intermediate: str = "ibp") -> Verdict:
    """Safe / unsafe / unknown verdict for the box ``r``.

    Safe needs every row's lower bound >= 0; unsafe is certified by a single
    row whose upper bound is < 0.
    """
    return crown_bounds(net, spec, r, intermediate)
