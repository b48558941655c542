"""Dense-tensor and reverse-mode differentiation core.

Everything is float64 and CPU-only: at this scale precision is cheaper than
debugging drift.  Tensors are plain C-contiguous numpy arrays; a small
GradientTape records elementary array operations and replays them backwards
to produce exact gradients for every parameter (or input) that participated
in the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

Tensor = np.ndarray

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


def tensor(data) -> Tensor:
    """Copy ``data`` into a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def check_finite(x: Tensor, context: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {context}")
    return x


# ---------------------------------------------------------------------------
# Seeded, splittable random streams
# ---------------------------------------------------------------------------

def seeded_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic random stream for ``seed``.

    Extra ``path`` integers derive statistically independent sub-streams, so
    individual components (model init, dropout, sampling, ...) can draw
    without perturbing each other.  The same (seed, path) always yields a
    bit-identical stream.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *path: int) -> int:
    """Stable 63-bit child seed for (seed, path); usable in provenance records."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------

class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("value", "parents", "vjps", "name")

    def __init__(self, value, parents=(), vjps=(), name=""):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.name = name


class GradientTape:
    """Records operations eagerly; ``gradients`` accumulates reverse-mode.

    A tape is single-use and single-threaded: build one forward pass, ask for
    gradients, discard.
    """

    def __init__(self):
        self.ops: list[Node] = []

    def _record(self, value, parents, vjps, name) -> Node:
        node = Node(value, parents, vjps, name)
        self.ops.append(node)
        return node

    def leaf(self, value: Tensor, name: str = "") -> Node:
        return self._record(np.asarray(value, dtype=np.float64), (), (), name or "leaf")

    # -- elementary ops ----------------------------------------------------

    def matmul_t(self, x: Node, w: Node, name: str = "matmul_t") -> Node:
        """x @ w.T for a [batch x in] input and [out x in] weight matrix."""
        if x.value.shape[-1] != w.value.shape[1]:
            raise DimensionError(
                f"{name}: input width {x.value.shape[-1]} != weight in-size {w.value.shape[1]}"
            )
        value = x.value @ w.value.T
        return self._record(
            value,
            (x, w),
            (lambda g: g @ w.value, lambda g: g.T @ x.value),
            name,
        )

    def add_bias(self, x: Node, b: Node, name: str = "add_bias") -> Node:
        if x.value.shape[-1] != b.value.shape[0]:
            raise DimensionError(
                f"{name}: width {x.value.shape[-1]} != bias size {b.value.shape[0]}"
            )
        return self._record(
            x.value + b.value,
            (x, b),
            (lambda g: g, lambda g: g.sum(axis=0)),
            name,
        )

    def add(self, a: Node, b: Node, name: str = "add") -> Node:
        return self._record(a.value + b.value, (a, b), (lambda g: g, lambda g: g), name)

    def sub(self, a: Node, b: Node, name: str = "sub") -> Node:
        return self._record(a.value - b.value, (a, b), (lambda g: g, lambda g: -g), name)

    def mul(self, a: Node, b: Node, name: str = "mul") -> Node:
        return self._record(
            a.value * b.value,
            (a, b),
            (lambda g: g * b.value, lambda g: g * a.value),
            name,
        )

    def scale(self, x: Node, c: float, name: str = "scale") -> Node:
        return self._record(x.value * c, (x,), (lambda g: g * c,), name)

    def concat(self, a: Node, b: Node, name: str = "concat") -> Node:
        """Column-wise concatenation of two [batch x *] arrays."""
        na = a.value.shape[1]
        value = np.concatenate([a.value, b.value], axis=1)
        return self._record(
            value,
            (a, b),
            (lambda g: g[:, :na], lambda g: g[:, na:]),
            name,
        )

    def activation(self, x: Node, kind: str, name: str = "") -> Node:
        name = name or kind
        if kind == "identity":
            return x
        if kind == "relu":
            value = np.maximum(x.value, 0.0)
            return self._record(value, (x,), (lambda g: g * (value > 0),), name)
        if kind == "tanh":
            value = np.tanh(x.value)
            return self._record(value, (x,), (lambda g: g * (1.0 - value * value),), name)
        if kind == "sigmoid":
            value = sigmoid(x.value)
            return self._record(value, (x,), (lambda g: g * value * (1.0 - value),), name)
        raise ConfigError(f"unknown activation {kind!r}")

    # -- losses (scalar-valued nodes) ---------------------------------------

    def mse_loss(self, pred: Node, target: Tensor, name: str = "mse") -> Node:
        if pred.value.shape != target.shape:
            raise DimensionError(f"{name}: prediction {pred.value.shape} vs target {target.shape}")
        diff = pred.value - target
        value = np.float64(np.mean(diff * diff))
        scale = 2.0 / diff.size
        return self._record(value, (pred,), (lambda g: g * scale * diff,), name)

    def softmax_ce_loss(self, logits: Node, target_rows: Tensor, name: str = "softmax_ce") -> Node:
        """Mean cross-entropy against probabilistic target rows."""
        if logits.value.shape != target_rows.shape:
            raise DimensionError(f"{name}: logits {logits.value.shape} vs targets {target_rows.shape}")
        probs, logp = _softmax_and_log(logits.value)
        batch = logits.value.shape[0]
        value = np.float64(-np.sum(target_rows * logp) / batch)
        grad = (probs - target_rows) / batch
        return self._record(value, (logits,), (lambda g: g * grad,), name)

    def bce_logits_loss(self, logits: Node, targets: Tensor, name: str = "bce") -> Node:
        """Mean binary cross-entropy on raw logits (numerically stable form)."""
        z = logits.value
        if z.shape != targets.shape:
            raise DimensionError(f"{name}: logits {z.shape} vs targets {targets.shape}")
        value = np.float64(np.mean(np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))))
        grad = (sigmoid(z) - targets) / z.size
        return self._record(value, (logits,), (lambda g: g * grad,), name)

    # -- reverse pass --------------------------------------------------------

    def gradients(self, target: Node, sources: list[Node]) -> list[Tensor]:
        """Exact reverse-mode gradients of a scalar ``target`` w.r.t. ``sources``."""
        order: list[Node] = []
        seen: set[int] = set()
        stack = [(target, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, Tensor] = {id(target): np.ones_like(target.value)}
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                pg = vjp(g)
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        return [grads.get(id(s), np.zeros_like(s.value)) for s in sources]

    def first_nonfinite(self) -> str | None:
        """Name of the earliest recorded op with a non-finite value, if any."""
        for node in self.ops:
            if not np.all(np.isfinite(node.value)):
                return node.name
        return None


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_and_log(logits: Tensor) -> tuple[Tensor, Tensor]:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    total = ex.sum(axis=-1, keepdims=True)
    return ex / total, shifted - np.log(total)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 2:
        raise DimensionError("softmax needs at least 2 classes")
    return _softmax_and_log(logits)[0]


def log_softmax(logits: Tensor) -> Tensor:
    return _softmax_and_log(np.asarray(logits, dtype=np.float64))[1]


# ---------------------------------------------------------------------------
# Dense layers
# ---------------------------------------------------------------------------

@dataclass
class DenseLayer:
    """Fully connected layer: activation(x @ W.T + b)."""

    weights: Tensor  # [out x in]
    bias: Tensor     # [out]
    activation: str = "identity"

    def __post_init__(self):
        self.weights = tensor(self.weights)
        self.bias = tensor(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weights must be [out x in], bias [out]")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"weight rows {self.weights.shape[0]} != bias size {self.bias.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]


def init_dense(rng: np.random.Generator, in_size: int, out_size: int,
               activation: str = "identity") -> DenseLayer:
    """Glorot-uniform weights, zero bias."""
    if in_size <= 0 or out_size <= 0:
        raise ConfigError(f"invalid layer size {in_size}x{out_size}")
    limit = np.sqrt(6.0 / (in_size + out_size))
    w = rng.uniform(-limit, limit, size=(out_size, in_size))
    return DenseLayer(w, np.zeros(out_size), activation)


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    """Row-wise activation(x @ W.T + b)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_size:
        raise DimensionError(f"input {x.shape} incompatible with layer in-size {layer.in_size}")
    z = x @ layer.weights.T + layer.bias
    return apply_activation(z, layer.activation)


def apply_activation(z: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_derivative(post: Tensor, kind: str) -> Tensor:
    """Derivative expressed through the post-activation value."""
    if kind == "identity":
        return np.ones_like(post)
    if kind == "relu":
        return (post > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "sigmoid":
        return post * (1.0 - post)
    raise ConfigError(f"unknown activation {kind!r}")


def forward_stack(layers: list[DenseLayer], x: Tensor) -> Tensor:
    for layer in layers:
        x = dense_forward(layer, x)
    return x


def stack_on_tape(tape: GradientTape, layers: list[DenseLayer], x: Node,
                  dropout_masks: list[Tensor | None] | None = None,
                  prefix: str = "layer") -> tuple[Node, list[tuple[Node, Node]]]:
    """Forward pass of a layer stack on the tape.

    Returns the output node and the (weight, bias) leaf nodes per layer, in
    layer order, so callers can ask for parameter gradients.  A dropout mask
    (already scaled by 1/keep) may be supplied per layer; it is applied to
    that layer's output.
    """
    params: list[tuple[Node, Node]] = []
    node = x
    for i, layer in enumerate(layers):
        w = tape.leaf(layer.weights, f"{prefix}{i}.w")
        b = tape.leaf(layer.bias, f"{prefix}{i}.b")
        params.append((w, b))
        node = tape.add_bias(tape.matmul_t(node, w, f"{prefix}{i}.matmul"), b, f"{prefix}{i}.bias")
        node = tape.activation(node, layer.activation, f"{prefix}{i}.{layer.activation}")
        if dropout_masks is not None and dropout_masks[i] is not None:
            mask = tape.leaf(dropout_masks[i], f"{prefix}{i}.mask")
            node = tape.mul(node, mask, f"{prefix}{i}.dropout")
    return node, params


LOSS_KINDS = ("mse", "soft-cross-entropy", "binary-cross-entropy")


def loss_and_gradients(layers: list[DenseLayer], inputs: Tensor, targets: Tensor,
                       loss_kind: str,
                       dropout_masks: list[Tensor | None] | None = None,
                       with_input_gradient: bool = False):
    """Loss of a layer stack on a batch plus exact parameter gradients.

    Returns (loss, [(dW, db) per layer]) or, with ``with_input_gradient``,
    (loss, grads, d_loss/d_inputs).  ``soft-cross-entropy`` accepts
    probabilistic target rows; ``binary-cross-entropy`` treats the stack
    output as raw logits.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {loss_kind!r}")
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    tape = GradientTape()
    x = tape.leaf(inputs, "input")
    out, params = stack_on_tape(tape, layers, x, dropout_masks)
    if loss_kind == "mse":
        loss = tape.mse_loss(out, targets)
    elif loss_kind == "soft-cross-entropy":
        loss = tape.softmax_ce_loss(out, targets)
    else:
        loss = tape.bce_logits_loss(out, targets)
    if not np.isfinite(loss.value):
        where = tape.first_nonfinite() or loss.name
        raise NumericError(f"non-finite loss; first non-finite op: {where}")
    sources = [n for pair in params for n in pair]
    if with_input_gradient:
        sources = sources + [x]
    flat = tape.gradients(loss, sources)
    grads = [(flat[2 * i], flat[2 * i + 1]) for i in range(len(layers))]
    if with_input_gradient:
        return float(loss.value), grads, flat[-1]
    return float(loss.value), grads


def stack_jacobian(layers: list[DenseLayer], z: Tensor) -> Tensor:
    """Exact Jacobian of a layer stack at input points ``z``.

    Forward accumulation with one column per input coordinate: for a
    [n x d] batch the result is [n x out x d].  Intended for small d
    (latent decoders), where this is the cheapest exact route.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, d = z.shape
    a = z
    jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    for layer in layers:
        pre = a @ layer.weights.T + layer.bias
        jac = np.einsum("oi,nid->nod", layer.weights, jac, optimize=True)
        a = apply_activation(pre, layer.activation)
        jac = activation_derivative(a, layer.activation)[:, :, None] * jac
    return jac


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam optimizer state; accumulator shapes mirror the parameter shapes."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[Tensor] = field(default_factory=list)
    v: list[Tensor] = field(default_factory=list)


def adam_update(state: AdamState, params: list[Tensor], grads: list[Tensor]) -> None:
    """One in-place Adam step with bias correction."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("parameter/gradient/state length mismatch")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def layer_params(layers: list[DenseLayer]) -> list[Tensor]:
    """Flat view of trainable arrays, layer order, weights before bias."""
    out: list[Tensor] = []
    for layer in layers:
        out.append(layer.weights)
        out.append(layer.bias)
    return out


def flatten_grads(grads: list[tuple[Tensor, Tensor]]) -> list[Tensor]:
    return [g for pair in grads for g in pair]
