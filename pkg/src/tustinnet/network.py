"""Small fully-connected networks with exact reverse-mode gradients.

The network computes f(z) = W_{M+1} (phi_M o ... o phi_1)(z) where each
hidden transformation is phi_m(z) = leaky_relu(W_m z + b_m). The output
layer is linear and carries no bias. Everything is plain float64 numpy;
gradients are assembled by hand so the rollout code can backpropagate
through time without an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass
class FeedforwardNet:
    """Weights of an M-hidden-layer perceptron with a bias-free linear head.

    ``weights[m]`` has shape (n_{m+1}, n_m); ``biases`` holds one vector per
    hidden layer only. ``frozen[m]`` marks the m-th parameter group (hidden
    layers first, output weight last) as excluded from optimizer updates;
    gradients for frozen groups are still computed.
    """

    layer_sizes: list
    weights: list
    biases: list
    activation_slope: float
    frozen: list = field(default_factory=list)

    def __post_init__(self):
        if not self.frozen:
            self.frozen = [False] * len(self.weights)

    @property
    def n_hidden(self) -> int:
        return len(self.biases)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "FeedforwardNet":
        return FeedforwardNet(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation_slope=self.activation_slope,
            frozen=list(self.frozen),
        )

    def validate(self):
        sizes = self.layer_sizes
        if len(sizes) < 3:
            raise ConfigError("need at least input, one hidden, and output layer")
        if len(self.weights) != len(sizes) - 1:
            raise DimensionError(
                f"{len(self.weights)} weight matrices for {len(sizes)} layers"
            )
        if len(self.biases) != len(sizes) - 2:
            raise DimensionError("output layer must not carry a bias")
        for m, w in enumerate(self.weights):
            if w.shape != (sizes[m + 1], sizes[m]):
                raise DimensionError(
                    f"weight {m} has shape {w.shape}, expected {(sizes[m + 1], sizes[m])}"
                )
            if not np.all(np.isfinite(w)):
                raise DimensionError(f"weight {m} has non-finite entries")
        for m, b in enumerate(self.biases):
            if b.shape != (sizes[m + 1],):
                raise DimensionError(
                    f"bias {m} has shape {b.shape}, expected {(sizes[m + 1],)}"
                )
        if not 0.0 < self.activation_slope < 1.0:
            raise ConfigError(
                f"activation slope must lie in (0, 1), got {self.activation_slope}"
            )
        if len(self.frozen) != len(self.weights):
            raise DimensionError("one frozen flag per parameter group required")


@dataclass
class GradientBundle:
    """Gradients matching a FeedforwardNet's parameter shapes.

    ``d_input`` is the gradient with respect to the network input. Entries
    for frozen groups are computed like any other; masking is the
    optimizer's job.
    """

    d_weights: list
    d_biases: list
    d_input: np.ndarray

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle(
            d_weights=[c * w for w in self.d_weights],
            d_biases=[c * b for b in self.d_biases],
            d_input=c * self.d_input,
        )

    def add_(self, other: "GradientBundle"):
        """In-place accumulation (d_input included)."""
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_biases, other.d_biases):
            a += b
        self.d_input += other.d_input
        return self


def zero_bundle(net: FeedforwardNet) -> GradientBundle:
    return GradientBundle(
        d_weights=[np.zeros_like(w) for w in net.weights],
        d_biases=[np.zeros_like(b) for b in net.biases],
        d_input=np.zeros(net.n_in),
    )


def init_net(layer_sizes, activation_slope: float = 0.01, seed: int = 0) -> FeedforwardNet:
    """Create a net with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights.

    Biases start at zero. Deterministic for a fixed seed.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 3:
        raise ConfigError(f"need >= 3 layer sizes, got {sizes}")
    if any(s < 1 for s in sizes):
        raise ConfigError(f"layer sizes must be >= 1, got {sizes}")
    if not 0.0 < activation_slope < 1.0:
        raise ConfigError(f"activation slope must lie in (0, 1), got {activation_slope}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for m in range(len(sizes) - 1):
        limit = 1.0 / np.sqrt(sizes[m])
        weights.append(rng.uniform(-limit, limit, size=(sizes[m + 1], sizes[m])))
        if m < len(sizes) - 2:
            biases.append(np.zeros(sizes[m + 1]))
    net = FeedforwardNet(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        activation_slope=float(activation_slope),
    )
    net.validate()
    return net


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    # subgradient at 0 takes the positive branch
    return np.where(x >= 0.0, 1.0, slope)


def forward_batch(net: FeedforwardNet, Z: np.ndarray, want_cache: bool = False):
    """Evaluate the net on a (B, n_in) batch; optionally return activations.

    The cache holds the pre-activations of every hidden layer plus the
    post-activation outputs, which is exactly what backward_batch needs.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != net.n_in:
        raise DimensionError(f"expected (B, {net.n_in}) input, got {Z.shape}")
    slope = net.activation_slope
    acts = [Z]
    pre = []
    a = Z
    for m in range(net.n_hidden):
        s = a @ net.weights[m].T + net.biases[m]
        a = _leaky(s, slope)
        pre.append(s)
        acts.append(a)
    out = a @ net.weights[-1].T
    if want_cache:
        return out, (acts, pre)
    return out


def backward_batch(net: FeedforwardNet, Z: np.ndarray, upstream: np.ndarray,
                   cache=None, strict: bool = False) -> GradientBundle:
    """Reverse-mode gradients of sum_b upstream_b . f(Z_b) for a batch.

    Weight and bias gradients are summed over the batch; ``d_input`` keeps
    the per-sample rows (B, n_in). With ``strict`` the batch reductions run
    through numpy's ordered pairwise sums instead of BLAS contractions, so
    results are bit-reproducible regardless of BLAS threading.
    """
    Z = np.asarray(Z, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (Z.shape[0], net.n_out):
        raise DimensionError(
            f"upstream shape {upstream.shape} does not match (B, {net.n_out})"
        )
    if cache is None:
        _, cache = forward_batch(net, Z, want_cache=True)
    acts, pre = cache
    slope = net.activation_slope

    def outer_sum(delta, act):
        if strict:
            return np.einsum("bi,bj->bij", delta, act).sum(axis=0)
        return delta.T @ act

    d_weights = [None] * len(net.weights)
    d_biases = [None] * len(net.biases)

    delta = upstream
    d_weights[-1] = outer_sum(delta, acts[-1])
    da = delta @ net.weights[-1]
    for m in range(net.n_hidden - 1, -1, -1):
        delta = da * _leaky_grad(pre[m], slope)
        d_weights[m] = outer_sum(delta, acts[m])
        d_biases[m] = delta.sum(axis=0)
        da = delta @ net.weights[m]
    return GradientBundle(d_weights=d_weights, d_biases=d_biases, d_input=da)


def forward(net: FeedforwardNet, z: np.ndarray) -> np.ndarray:
    """Evaluate the net on a single input vector of length n_in."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != net.n_in:
        raise DimensionError(f"expected input of length {net.n_in}, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise DimensionError("input entries must be finite")
    return forward_batch(net, z[None, :])[0]


def backward(net: FeedforwardNet, z: np.ndarray, upstream: np.ndarray) -> GradientBundle:
    """Gradients of upstream . f(z) w.r.t. every weight, bias, and z."""
    z = np.asarray(z, dtype=float).reshape(-1)
    upstream = np.asarray(upstream, dtype=float).reshape(-1)
    if z.size != net.n_in:
        raise DimensionError(f"expected input of length {net.n_in}, got {z.size}")
    if upstream.size != net.n_out:
        raise DimensionError(
            f"expected upstream of length {net.n_out}, got {upstream.size}"
        )
    bundle = backward_batch(net, z[None, :], upstream[None, :])
    bundle.d_input = bundle.d_input[0]
    return bundle
