"""Shared fixtures and generators for the test-suite."""

import json
import math
from pathlib import Path

import numpy as np

from probhull.engine import EngineConfig
from probhull.gauss import BoxRegion, GaussianInput
from probhull.model import Layer, Network, SafetySpec, load_network
from probhull.subdivide import TreeConfig

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# independent oracle values, computed with scipy.integrate.quad / bisection
# before the package code existed
P_STD_NORMAL_PM1 = 0.682689492137086
K_TAIL_1E5 = 4.417173413467319
K_TAIL_HALF = 0.6744897501960817


def fixture_net(name):
    return load_network(FIXTURES / name)


def fixture_spec(name):
    doc = json.loads((FIXTURES / name).read_text())
    return SafetySpec(doc["C"], doc["a"])


def halfspace():
    return fixture_net("halfspace.json"), fixture_spec("halfspace_spec.json")


def kink():
    return fixture_net("kink.json"), fixture_spec("scalar_spec.json")


# tree settings for the 2-D fixtures (see kink_config.json)
FIXTURE_TREE = TreeConfig(max_depth=3)


def random_box(rng, d, scale=2.0):
    c = rng.normal(size=d) * scale
    w = rng.uniform(0.01, scale, size=d)
    return BoxRegion(c - w, c + w)


def random_network(seed, activation, d=None, max_neurons=16):
    """Small random MLP: 2-3 hidden layers with at most ``max_neurons`` hidden
    units in total, 1-2 outputs."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5)) if d is None else d
    n_hidden = int(rng.integers(2, 4))
    widths = [int(rng.integers(2, max_neurons // n_hidden + 1)) for _ in range(n_hidden)]
    m = int(rng.integers(1, 3))
    dims = [d] + widths + [m]
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(size=(dims[i + 1], dims[i])) * np.sqrt(2.0 / dims[i])
        b = rng.normal(size=dims[i + 1]) * 0.1
        layers.append(Layer(w, b, activation if i < len(dims) - 2 else "identity"))
    return Network(tuple(layers)), rng


def suite_case(index):
    """Case ``index`` of the 30-network soundness suite: 20 ReLU, 10 tanh,
    input dimension cycling 2, 3, 4. The spec threshold sits near a margin
    quantile so both verdicts occur."""
    activation = "relu" if index < 20 else "tanh"
    d = 2 + index % 3
    net, rng = random_network(1000 + index, activation, d)
    m = net.output_dim
    C = rng.normal(size=(m, m)) if m > 1 else np.ones((1, 1))
    g = GaussianInput(rng.normal(size=d) * 0.3, rng.uniform(0.5, 1.5, size=d), 1000 + index)
    y = net.forward(g.mean + g.std * rng.standard_normal((2000, d))) @ C.T
    a = np.array([_off_atom(y[:, j], 0.3 if m == 1 else 0.15) for j in range(m)])
    return net, SafetySpec(C, a), g


def _off_atom(values, q):
    """Quantile of ``values`` moved to the midpoint of the neighbouring
    distinct values, so the threshold never sits on a flat output region."""
    distinct = np.unique(values)
    i = int(np.clip(np.searchsorted(distinct, np.quantile(values, q)), 1, len(distinct) - 1))
    return 0.5 * (distinct[i - 1] + distinct[i])


SUITE_SIZE = 30


def suite_config(**overrides):
    base = dict(epsilon=0.02, termination="sum", tail_mass=1e-5, wall_clock_cap=120.0, intermediate="crown")
    base.update(overrides)
    return EngineConfig(**base)


def leaves_tile(root, leaves, rel=1e-12):
    total = math.fsum(b.volume for b in leaves)
    if abs(total - root.volume) > rel * root.volume:
        return False
    # sweep over the first axis: overlapping intervals there must be separated elsewhere
    order = sorted(range(len(leaves)), key=lambda i: leaves[i].lower[0])
    active = []
    for i in order:
        box = leaves[i]
        active = [j for j in active if leaves[j].upper[0] > box.lower[0]]
        for j in active:
            other = leaves[j]
            overlap = np.minimum(box.upper, other.upper) - np.maximum(box.lower, other.lower)
            if np.all(overlap > 0):
                return False
        active.append(i)
    return all(np.all(b.lower >= root.lower) and np.all(b.upper <= root.upper) for b in leaves)


# criterion number -> one-line verdict, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok
