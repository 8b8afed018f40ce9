"""Dense scalar-output ReLU networks with exact activation-pattern bookkeeping.

All arithmetic is float64. Hidden activations are ReLU with a strict
sign convention: a unit is active iff its pre-activation is > 0, so a
pre-activation of exactly zero counts as inactive. The head is either
identity (regression) or sigmoid (binary classification). Gradients are
computed in closed form from the stored pre-activations; there is no
autodiff graph.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

HEAD_ACTIVATIONS = ("identity", "sigmoid")


class ShapeError(ValueError):
    """Raised when layer shapes do not chain, with the offending layer index."""


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_slope(z):
    """Derivative of the logistic function; equals 0.25 at z = 0."""
    s = sigmoid(z)
    return s * (1.0 - s)


# ===== Network container =====


@dataclass
class Network:
    """Weights, biases and activation names for a scalar-output MLP.

    ``weights[l]`` has shape (n_{l+1}, n_l) and ``biases[l]`` shape
    (n_{l+1},). Every layer but the last must use "relu"; the last uses
    "identity" or "sigmoid" and must have a single output row.
    """

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not self.weights:
            raise ShapeError("network needs at least one layer")
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ShapeError(
                "got %d weight, %d bias, %d activation entries"
                % (len(self.weights), len(self.biases), len(self.activations))
            )
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        self.activations = [str(a) for a in self.activations]
        prev = None
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2:
                raise ShapeError("layer %d: weight must be 2-d, got shape %s" % (l, (w.shape,)))
            if b.shape != (w.shape[0],):
                raise ShapeError(
                    "layer %d: bias shape %s does not match weight rows %d"
                    % (l, b.shape, w.shape[0])
                )
            if prev is not None and w.shape[1] != prev:
                raise ShapeError(
                    "layer %d: weight shape %s incompatible with previous layer output %d"
                    % (l, w.shape, prev)
                )
            prev = w.shape[0]
        for l, act in enumerate(self.activations[:-1]):
            if act != "relu":
                raise ShapeError("layer %d: hidden activation must be 'relu', got %r" % (l, act))
        if self.activations[-1] not in HEAD_ACTIVATIONS:
            raise ShapeError(
                "layer %d: head activation must be one of %s, got %r"
                % (len(self.activations) - 1, HEAD_ACTIVATIONS, self.activations[-1])
            )
        if self.weights[-1].shape[0] != 1:
            raise ShapeError(
                "layer %d: head must have a single output, got %d rows"
                % (len(self.weights) - 1, self.weights[-1].shape[0])
            )

    @property
    def depth(self):
        """Number of affine layers."""
        return len(self.weights)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def hidden_sizes(self):
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def head(self):
        return self.activations[-1]

    def copy(self):
        return Network(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def random_network(layer_sizes, head="identity", seed=0, scale=None):
    """Fresh network with uniform(-s, +s) entries, s = 1/sqrt(fan_in) by default.

    ``layer_sizes`` runs from input dim to the (scalar) output, e.g.
    [10, 16, 16, 1]. The init stream is independent of any training
    stream derived from the same seed.
    """
    sizes = [int(s) for s in layer_sizes]
    if sizes[-1] != 1:
        raise ShapeError("output size must be 1, got %d" % sizes[-1])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(1)[0]))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = scale if scale is not None else 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-s, s, size=fan_out))
    acts = ["relu"] * (len(sizes) - 2) + [head]
    return Network(weights, biases, acts)


# ===== Activation patterns =====


@dataclass(frozen=True)
class ActivationPattern:
    """Per-hidden-layer on/off masks for one input, strict > 0 convention."""

    layers: tuple
    _key: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        layers = tuple(np.asarray(l, dtype=bool) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        sizes = b",".join(str(l.size).encode() for l in layers)
        body = b"".join(np.packbits(l).tobytes() for l in layers)
        object.__setattr__(self, "_key", sizes + b":" + body)

    def key(self):
        """Hashable byte encoding; equal iff the patterns are equal."""
        return self._key

    def digest(self):
        """Short stable hex id, suitable for CSV keys and file names."""
        return hashlib.sha1(self._key).hexdigest()[:16]

    def flatten(self):
        """Single {0,1} vector: Kronecker product of the layer masks.

        Layer order is last hidden layer down to the first, so the
        fastest-varying index is the first hidden layer's unit index.
        The result has length prod(n_l) over hidden layers.
        """
        out = np.ones(1, dtype=np.float64)
        for mask in reversed(self.layers):
            out = np.kron(out, mask.astype(np.float64))
        return out

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return self._key == other._key

    def __hash__(self):
        return hash(self._key)


# ===== Forward and gradients =====


def forward(net, x):
    """Evaluate the network at ``x``; returns (scalar output, ActivationPattern)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ShapeError("input shape %s, expected (%d,)" % (x.shape, net.input_dim))
    h = x
    masks = []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = w @ h + b
        if act == "relu":
            on = z > 0
            masks.append(on)
            h = np.where(on, z, 0.0)
        elif act == "identity":
            h = z
        else:
            h = sigmoid(z)
    return float(h[0]), ActivationPattern(tuple(masks))


def forward_many(net, X):
    """Vectorized forward over rows of ``X``.

    Returns (outputs, masks) where outputs has shape (N,) and masks is
    a list with one (N, n_l) boolean array per hidden layer.
    """
    X = np.asarray(X, dtype=np.float64)
    h = X
    masks = []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        if act == "relu":
            on = z > 0
            masks.append(on)
            h = np.where(on, z, 0.0)
        elif act == "identity":
            h = z
        else:
            h = sigmoid(z)
    return h[:, 0], masks


def grad_input(net, x):
    """Exact gradient of the scalar output at ``x`` (zero on ReLU ties).

    Within the linear region containing x this is the constant row
    vector S_d W_d ... S_1 W_1; a sigmoid head contributes its slope at
    the pre-head value.
    """
    x = np.asarray(x, dtype=np.float64)
    h = x
    pres = []
    for w, b in zip(net.weights, net.biases):
        z = w @ h + b
        pres.append(z)
        h = np.maximum(z, 0.0)
    g = net.weights[-1][0].copy()
    if net.head == "sigmoid":
        g = g * sigmoid_slope(pres[-1][0])
    for l in range(net.depth - 2, -1, -1):
        g = (g * (pres[l] > 0)) @ net.weights[l]
    return g


def input_gradients(net, X):
    """Gradient of the output w.r.t. each row of ``X``; shape (N, input_dim)."""
    X = np.asarray(X, dtype=np.float64)
    h = X
    pres = []
    for w, b in zip(net.weights, net.biases):
        z = h @ w.T + b
        pres.append(z)
        h = np.maximum(z, 0.0)
    g = np.broadcast_to(net.weights[-1][0], (X.shape[0], net.weights[-1].shape[1])).copy()
    if net.head == "sigmoid":
        g = g * sigmoid_slope(pres[-1][:, 0])[:, None]
    for l in range(net.depth - 2, -1, -1):
        g = (g * (pres[l] > 0)) @ net.weights[l]
    return g


def local_linear_row(net, x):
    """Backward row vector through the hidden stack at ``x``.

    Returns (row, head_pre) where row = S_d W_d ... W_2 S_1 has length
    n_1. Its euclidean norm times the step size and loss slope is the
    exact first-layer bias update magnitude; a sigmoid head's slope at
    head_pre is already folded in.
    """
    x = np.asarray(x, dtype=np.float64)
    h = x
    pres = []
    for w, b in zip(net.weights, net.biases):
        z = w @ h + b
        pres.append(z)
        h = np.maximum(z, 0.0)
    if net.depth == 1:
        # Affine net: the first-layer bias is the head bias itself.
        g = np.ones(1, dtype=np.float64)
    else:
        g = net.weights[-1][0].copy()
        for l in range(net.depth - 2, 0, -1):
            g = (g * (pres[l] > 0)) @ net.weights[l]
        g = g * (pres[0] > 0)
    if net.head == "sigmoid":
        g = g * sigmoid_slope(pres[-1][0])
    return g, float(pres[-1][0])


@dataclass
class GradientReport:
    """Loss gradients from one backward pass.

    ``weight_grads``/``bias_grads`` mirror the network's parameter
    shapes; ``input_grad`` is the loss gradient w.r.t. the input point
    (not the output gradient, which ``grad_input`` provides).
    """

    output: float
    input_grad: np.ndarray
    weight_grads: list
    bias_grads: list

    @property
    def param_grads(self):
        return list(zip(self.weight_grads, self.bias_grads))


def epsilon(loss, yhat, y):
    """Magnitude of the loss derivative at the current prediction.

    For squared error (with the conventional 1/2 factor) this is
    |yhat - y|; for binary cross entropy it is 1/|1 - y - yhat|, which
    requires yhat strictly inside (0, 1).
    """
    yhat = float(yhat)
    y = float(y)
    if loss == "mse":
        return abs(yhat - y)
    if loss == "bce":
        if not 0.0 < yhat < 1.0:
            raise ValueError(
                "bce slope undefined at yhat=%r; prediction must lie strictly in (0, 1)" % yhat
            )
        return 1.0 / abs(1.0 - y - yhat)
    raise ValueError("unknown loss %r" % loss)


def loss_value(loss, yhat, y):
    """Pointwise loss: (yhat-y)^2/2 for mse, cross entropy for bce."""
    yhat = float(yhat)
    y = float(y)
    if loss == "mse":
        return 0.5 * (yhat - y) ** 2
    if loss == "bce":
        if not 0.0 < yhat < 1.0:
            raise ValueError("bce undefined at yhat=%r" % yhat)
        return -(y * np.log(yhat) + (1.0 - y) * np.log(1.0 - yhat))
    raise ValueError("unknown loss %r" % loss)


def grad_params(net, x, y, loss="mse"):
    """Backward pass for one sample; returns a GradientReport.

    With a sigmoid head and bce loss the head delta collapses to
    yhat - y, so saturation never produces a non-finite gradient; the
    reported slope magnitude is still checked through ``epsilon``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = float(y)
    hs = [x]
    pres = []
    h = x
    for w, b in zip(net.weights, net.biases):
        z = w @ h + b
        pres.append(z)
        h = np.maximum(z, 0.0)
        hs.append(h)
    head_pre = pres[-1][0]
    if net.head == "sigmoid":
        yhat = float(sigmoid(head_pre))
    else:
        yhat = float(head_pre)

    if loss == "mse":
        dl_dyhat = yhat - y
        if net.head == "sigmoid":
            delta = dl_dyhat * sigmoid_slope(head_pre)
        else:
            delta = dl_dyhat
    elif loss == "bce":
        if not 0.0 < yhat < 1.0:
            raise ValueError("bce gradient undefined at yhat=%r" % yhat)
        if net.head == "sigmoid":
            delta = yhat - y
        else:
            delta = (yhat - y) / (yhat * (1.0 - yhat))
    else:
        raise ValueError("unknown loss %r" % loss)

    delta_vec = np.array([delta], dtype=np.float64)
    weight_grads = [None] * net.depth
    bias_grads = [None] * net.depth
    for l in range(net.depth - 1, -1, -1):
        weight_grads[l] = np.outer(delta_vec, hs[l])
        bias_grads[l] = delta_vec.copy()
        back = delta_vec @ net.weights[l]
        if l > 0:
            delta_vec = back * (pres[l - 1] > 0)
    return GradientReport(yhat, back, weight_grads, bias_grads)


def singular_extremes(M):
    """(sigma_1, sigma_n) of a matrix with n columns.

    sigma_n is the n-th singular value in decreasing order; when the
    matrix has fewer rows than columns that value does not exist and
    0.0 is returned. Inputs with NaN or inf raise.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("expected a non-empty 2-d matrix, got shape %s" % (M.shape,))
    if not np.isfinite(M).all():
        raise ValueError("matrix contains non-finite entries")
    vals = np.linalg.svd(M, compute_uv=False)
    n = M.shape[1]
    sigma1 = float(vals[0])
    sigman = float(vals[n - 1]) if n <= vals.size else 0.0
    return sigma1, sigman


# ===== Serialization =====


def network_to_dict(net):
    return {
        "layers": [
            {"w": w.tolist(), "b": b.tolist(), "act": act}
            for w, b, act in zip(net.weights, net.biases, net.activations)
        ]
    }


def network_from_dict(obj):
    try:
        layers = obj["layers"]
        weights = [layer["w"] for layer in layers]
        biases = [layer["b"] for layer in layers]
        acts = [layer["act"] for layer in layers]
    except (KeyError, TypeError) as exc:
        raise ValueError("malformed network document: %s" % exc) from exc
    return Network(weights, biases, acts)


def save_network(net, path):
    """Write the network as JSON; floats round-trip bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh)
        fh.write("\n")


def load_network(path):
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))
