"""Feedforward networks, affine safety specs, file formats and whitening."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ParseError
from .gauss import BoxRegion, GaussianInput

ACTIVATIONS = ("relu", "tanh", "identity")


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ConfigError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.bias, dtype=np.float64))
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ConfigError(f"layer weight {w.shape} and bias {b.shape} do not compose")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Normalization:
    """NNet-style scaling: the network sees ``(x - input_mean) / input_range``
    and its raw output is ``y * output_range + output_mean``."""

    input_mean: np.ndarray
    input_range: np.ndarray
    output_mean: float = 0.0
    output_range: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "input_mean", np.asarray(self.input_mean, dtype=np.float64))
        object.__setattr__(self, "input_range", np.asarray(self.input_range, dtype=np.float64))
        if np.any(self.input_range == 0) or self.output_range == 0:
            raise ConfigError("normalization ranges must be nonzero")


@dataclass(frozen=True)
class Network:
    """Layered affine+activation model ``f: R^d -> R^m``.

    The last layer is always affine (identity activation). When
    ``normalization`` is set, ``forward`` takes raw inputs and returns raw
    outputs; ``folded()`` absorbs the scaling into the first/last layers.
    """

    layers: tuple
    normalization: Normalization | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ConfigError("network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ConfigError(
                    f"layer {i} expects {layers[i].in_dim} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].out_dim}"
                )
        if layers[-1].activation != "identity":
            raise ConfigError("final layer activation must be identity")
        for i, layer in enumerate(layers):
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ConfigError(f"layer {i} has non-finite weights")
        if self.normalization is not None and self.normalization.input_mean.size != layers[0].in_dim:
            raise ConfigError("normalization does not match network input dimension")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)

    def forward(self, x) -> np.ndarray:
        """Evaluate on one point ``(d,)`` or a batch ``(n, d)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ConfigError(f"input has length {x.shape[-1]}, network expects {self.input_dim}")
        h = x
        norm = self.normalization
        if norm is not None:
            h = (h - norm.input_mean) / norm.input_range
        for layer in self.layers:
            h = apply_activation(layer.activation, h @ layer.weight.T + layer.bias)
        if norm is not None:
            h = h * norm.output_range + norm.output_mean
        return h

    __call__ = forward

    def folded(self) -> "Network":
        """Equivalent network without a separate normalization step."""
        norm = self.normalization
        if norm is None:
            return self
        layers = list(self.layers)
        first = layers[0]
        w = first.weight / norm.input_range
        layers[0] = Layer(w, first.bias - w @ norm.input_mean, first.activation)
        last = layers[-1]
        layers[-1] = Layer(
            last.weight * norm.output_range, last.bias * norm.output_range + norm.output_mean, last.activation
        )
        return Network(tuple(layers))

    def without_normalization(self) -> "Network":
        return replace(self, normalization=None)


@dataclass(frozen=True)
class SafetySpec:
    """Conjunction of affine output constraints ``C @ y >= a``."""

    C: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if C.ndim != 2 or a.ndim != 1 or C.shape[0] != a.shape[0] or C.shape[0] < 1:
            raise ConfigError(f"spec C {C.shape} and a {a.shape} are inconsistent")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "a", a)

    @property
    def num_constraints(self) -> int:
        return self.C.shape[0]

    def check(self, net: Network):
        if self.C.shape[1] != net.output_dim:
            raise ConfigError(
                f"spec has {self.C.shape[1]} output columns, network has {net.output_dim} outputs"
            )

    def to_dict(self) -> dict:
        return {"C": self.C.tolist(), "a": self.a.tolist()}


def forward(net: Network, x) -> np.ndarray:
    return net.forward(x)


def margins(net: Network, spec: SafetySpec, x) -> np.ndarray:
    """Signed constraint margins ``C f(x) - a``; a point is safe iff all are >= 0."""
    spec.check(net)
    return net.forward(x) @ spec.C.T - spec.a


def is_safe_point(net: Network, spec: SafetySpec, x) -> np.ndarray:
    return np.all(margins(net, spec, x) >= 0, axis=-1)


# -- NNet -------------------------------------------------------------------


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0
        while self.pos < len(self.lines) and (
            self.lines[self.pos].lstrip().startswith("//") or not self.lines[self.pos].strip()
        ):
            self.pos += 1

    def numbers(self, section: str, count: int | None = None) -> list[float]:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file while reading {section}", f"line {self.pos + 1}")
        lineno = self.pos + 1
        tokens = [t.strip() for t in self.lines[self.pos].split(",")]
        tokens = [t for t in tokens if t]
        self.pos += 1
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            bad = next(t for t in tokens if not _is_float(t))
            raise ParseError(f"non-numeric token {bad!r} in {section}", f"line {lineno}") from None
        if count is not None and len(values) < count:
            raise ParseError(f"{section} needs {count} values, found {len(values)}", f"line {lineno}")
        return values[:count] if count is not None else values

    def integers(self, section: str, count: int) -> list[int]:
        lineno = self.pos + 1
        values = self.numbers(section, count)
        if any(v != int(v) for v in values):
            raise ParseError(f"{section} must be integers", f"line {lineno}")
        return [int(v) for v in values]


def _is_float(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def parse_nnet(text: str):
    """Parse NNet text into ``(network, declared_input_box, normalization)``.

    Hidden layers are ReLU, the output layer affine. The returned network
    carries the normalization so it evaluates in raw input coordinates.
    """
    reader = _LineReader(text)
    num_layers, in_size, out_size, _ = reader.integers("header counts", 4)
    if num_layers < 1:
        raise ParseError("network must have at least one layer", "line 1 of header")
    sizes = reader.integers("layer sizes", num_layers + 1)
    if sizes[0] != in_size or sizes[-1] != out_size:
        raise ParseError(
            f"layer sizes {sizes} disagree with declared input/output sizes {in_size}/{out_size}",
            f"line {reader.pos}",
        )
    reader.numbers("symmetric flag")
    mins = reader.numbers("input minimums", in_size)
    maxes = reader.numbers("input maximums", in_size)
    means = reader.numbers("means", in_size + 1)
    ranges = reader.numbers("ranges", in_size + 1)

    layers = []
    for i in range(num_layers):
        rows = [reader.numbers(f"weights of layer {i + 1}", sizes[i]) for _ in range(sizes[i + 1])]
        bias = [reader.numbers(f"biases of layer {i + 1}", 1)[0] for _ in range(sizes[i + 1])]
        activation = "identity" if i == num_layers - 1 else "relu"
        layers.append(Layer(np.array(rows), np.array(bias), activation))

    norm = Normalization(np.array(means[:in_size]), np.array(ranges[:in_size]), means[in_size], ranges[in_size])
    try:
        box = BoxRegion(np.array(mins), np.array(maxes))
    except ConfigError as exc:
        raise ParseError(str(exc), "input bounds") from None
    return Network(tuple(layers), norm), box, norm


def serialize_nnet(net: Network, input_box: BoxRegion | None = None) -> str:
    """NNet text for ``net``; floats use shortest round-trip repr."""
    for layer in net.layers[:-1]:
        if layer.activation != "relu":
            raise ConfigError("NNet format only stores ReLU hidden layers")
    norm = net.normalization or Normalization(
        np.zeros(net.input_dim), np.ones(net.input_dim), 0.0, 1.0
    )
    if input_box is None:
        input_box = BoxRegion(np.full(net.input_dim, -np.finfo(float).max), np.full(net.input_dim, np.finfo(float).max))

    def row(values):
        return ",".join(repr(float(v)) for v in values) + ","

    sizes = net.dims
    out = [
        "// Neural network file written by probhull",
        f"{len(net.layers)},{net.input_dim},{net.output_dim},{max(sizes)},",
        ",".join(str(s) for s in sizes) + ",",
        "0,",
        row(input_box.lower),
        row(input_box.upper),
        row(list(norm.input_mean) + [norm.output_mean]),
        row(list(norm.input_range) + [norm.output_range]),
    ]
    for layer in net.layers:
        out.extend(row(r) for r in layer.weight)
        out.extend(row([b]) for b in layer.bias)
    return "\n".join(out) + "\n"


# -- JSON -------------------------------------------------------------------


def _as_matrix(value, path: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(f"expected a numeric {ndim}-D array", path) from None
    if arr.ndim != ndim:
        raise ParseError(f"expected a numeric {ndim}-D array, got {arr.ndim}-D", path)
    return arr


def parse_json_network(text) -> Network:
    """Build a network from the JSON schema documented in docs/formats.md.

    A trailing non-identity activation is kept by appending an identity
    output layer, so the result always ends affine.
    """
    try:
        doc = json.loads(text) if isinstance(text, (str, bytes)) else text
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", "$")
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ParseError("'layers' must be a non-empty array", "$.layers")

    layers = []
    for i, entry in enumerate(raw_layers):
        path = f"$.layers[{i}]"
        if not isinstance(entry, dict):
            raise ParseError("layer must be an object", path)
        for key in ("weights", "bias"):
            if key not in entry:
                raise ParseError(f"missing field {key!r}", path)
        w = _as_matrix(entry["weights"], f"{path}.weights", 2)
        b = _as_matrix(entry["bias"], f"{path}.bias", 1)
        act = entry.get("activation", "identity")
        if act not in ACTIVATIONS:
            raise ParseError(f"unknown activation {act!r}", f"{path}.activation")
        if w.shape[0] != b.shape[0]:
            raise ParseError(f"weights have {w.shape[0]} rows but bias has {b.shape[0]} entries", path)
        if layers and w.shape[1] != layers[-1].out_dim:
            raise ParseError(
                f"weights have {w.shape[1]} columns, previous layer outputs {layers[-1].out_dim}",
                f"{path}.weights",
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ParseError("non-finite weight or bias", path)
        layers.append(Layer(w, b, act))
    if layers[-1].activation != "identity":
        m = layers[-1].out_dim
        layers.append(Layer(np.eye(m), np.zeros(m), "identity"))

    norm = None
    if "normalization" in doc:
        spec = doc["normalization"]
        path = "$.normalization"
        if not isinstance(spec, dict):
            raise ParseError("must be an object", path)
        try:
            norm = Normalization(
                _as_matrix(spec["input_mean"], f"{path}.input_mean", 1),
                _as_matrix(spec["input_range"], f"{path}.input_range", 1),
                float(spec.get("output_mean", 0.0)),
                float(spec.get("output_range", 1.0)),
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", path) from None
    try:
        return Network(tuple(layers), norm)
    except ConfigError as exc:
        raise ParseError(str(exc), "$") from None


def network_to_json(net: Network) -> dict:
    doc = {
        "layers": [
            {"weights": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
            for l in net.layers
        ]
    }
    if net.normalization is not None:
        n = net.normalization
        doc["normalization"] = {
            "input_mean": n.input_mean.tolist(),
            "input_range": n.input_range.tolist(),
            "output_mean": n.output_mean,
            "output_range": n.output_range,
        }
    return doc


def load_network(path, fmt: str | None = None) -> Network:
    """Read a network file; ``fmt`` is ``"nnet"`` or ``"json"`` (default: by suffix)."""
    path = str(path)
    if fmt is None:
        fmt = "nnet" if path.endswith(".nnet") else "json"
    with open(path) as fh:
        text = fh.read()
    if fmt == "nnet":
        return parse_nnet(text)[0]
    if fmt == "json":
        return parse_json_network(text)
    raise ConfigError(f"unknown network format {fmt!r}")


# -- whitening --------------------------------------------------------------


@dataclass(frozen=True)
class Whitening:
    """Affine map ``x = mean + transform @ z`` taking ``z ~ N(0, I)`` to ``x``."""

    mean: np.ndarray
    transform: np.ndarray = field(repr=False)

    def to_input(self, z) -> np.ndarray:
        return np.asarray(z) @ self.transform.T + self.mean


def whitening_map(mean, cov, tol: float = 1e-12) -> Whitening:
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape != (mean.size, mean.size):
        raise ConfigError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
        raise ConfigError("covariance must be symmetric")
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        # keep the axes: eigh would reorder a diagonal matrix by eigenvalue
        eigvals, eigvecs = np.diag(cov).copy(), np.eye(mean.size)
    else:
        eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if eigvals.min() <= tol:
        raise ConfigError(f"covariance is not positive definite (min eigenvalue {eigvals.min():.3g})")
    return Whitening(mean, eigvecs * np.sqrt(eigvals))


def whiten(mean, cov, net: Network, seed: int = 0):
    """Fold a full-covariance Gaussian into the first layer.

    Returns ``(GaussianInput.standard(d), whitened_net)`` where
    ``whitened_net(z) == net(mean + V sqrt(L) z)`` for ``cov = V L V^T``.
    """
    wmap = whitening_map(mean, cov)
    if wmap.mean.size != net.input_dim:
        raise ConfigError(f"Gaussian has d={wmap.mean.size}, network expects {net.input_dim}")
    base = net.folded()
    first = base.layers[0]
    new_first = Layer(first.weight @ wmap.transform, first.bias + first.weight @ wmap.mean, first.activation)
    whitened = Network((new_first,) + base.layers[1:])
    return GaussianInput.standard(net.input_dim, seed), whitened


# -- ACAS Xu property 2 -----------------------------------------------------

# raw-unit input box: rho, theta, psi, v_own, v_int
ACAS_P2_LOWER = np.array([55947.691, -math.pi, -math.pi, 1145.0, 0.0])
ACAS_P2_UPPER = np.array([60760.0, math.pi, math.pi, 1200.0, 60.0])


def acas_p2_violation_spec() -> SafetySpec:
    """Conjunction describing the P2 *violation* set: output 0 (COC) is minimal.

    The P2 safe set (COC not minimal) is a disjunction, so callers verify
    this conjunction and report the complementary interval.
    """
    C = np.zeros((4, 5))
    C[:, 0] = -1.0
    C[np.arange(4), np.arange(1, 5)] = 1.0
    return SafetySpec(C, np.zeros(4))


def acas_p2_gaussian(seed: int = 0) -> GaussianInput:
    """Box-centre mean and quarter-range std over the P2 input box (raw units)."""
    return GaussianInput(
        0.5 * (ACAS_P2_LOWER + ACAS_P2_UPPER), 0.25 * (ACAS_P2_UPPER - ACAS_P2_LOWER), seed
    )
