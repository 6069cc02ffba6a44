"""The five-block CIFAR-10 CNN and its partition into client and server parts.

Block ``L_i`` is conv3x3 -> ReLU -> maxpool2x2. After the last block the
feature map is flattened in [C, H, W] order and passed through
dense -> ReLU -> dense. A split at depth ``k`` puts blocks ``L_1..L_k`` on
each end-system and everything else on the server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ValidationError
from .tensor import (
    DTYPE,
    ConvParams,
    DenseParams,
    as_tensor,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax_cross_entropy,
)

PAPER_FILTERS = (16, 32, 64, 128, 256)
PAPER_DENSE = (512, 10)
PAPER_INPUT = (3, 32, 32)
NUM_CLASSES = 10


@dataclass(frozen=True)
class ModelSpec:
    filters: tuple[int, ...] = PAPER_FILTERS
    dense_units: tuple[int, int] = PAPER_DENSE
    input_dims: tuple[int, int, int] = PAPER_INPUT

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        if not self.filters or min(self.filters) < 1:
            raise ValidationError(f"filters must be a non-empty list of positive ints, got {self.filters}")
        if len(self.dense_units) != 2 or min(self.dense_units) < 1:
            raise ValidationError(f"dense_units must be two positive ints, got {self.dense_units}")
        if self.dense_units[-1] != NUM_CLASSES:
            raise ValidationError(f"the output layer must have {NUM_CLASSES} units")
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ValidationError(f"input_dims must be [C, H, W], got {self.input_dims}")
        step = 2 ** len(self.filters)
        _, h, w = self.input_dims
        if h % step or w % step:
            raise ValidationError(
                f"input spatial dims {h}x{w} must be divisible by 2^{len(self.filters)}"
            )

    @classmethod
    def paper(cls) -> ModelSpec:
        return cls(PAPER_FILTERS, PAPER_DENSE, PAPER_INPUT)

    @property
    def is_paper(self) -> bool:
        return (self.filters, self.dense_units, self.input_dims) == (
            PAPER_FILTERS,
            PAPER_DENSE,
            PAPER_INPUT,
        )

    @property
    def n_blocks(self) -> int:
        return len(self.filters)

    def cut_shape(self, k: int) -> tuple[int, int, int]:
        """Per-sample shape of the tensor crossing a split after ``k`` blocks."""
        if not 0 <= k <= self.n_blocks:
            raise ValidationError(f"split must be in [0, {self.n_blocks}], got {k}")
        c, h, w = self.input_dims
        if k == 0:
            return (c, h, w)
        return (self.filters[k - 1], h >> k, w >> k)

    @property
    def flat_features(self) -> int:
        c, h, w = self.cut_shape(self.n_blocks)
        return c * h * w

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        in_ch = self.input_dims[0]
        for i, f in enumerate(self.filters, start=1):
            shapes[f"block{i}.weight"] = (f, in_ch, 3, 3)
            shapes[f"block{i}.bias"] = (f,)
            in_ch = f
        fan_in = self.flat_features
        for j, units in enumerate(self.dense_units, start=1):
            shapes[f"dense{j}.weight"] = (units, fan_in)
            shapes[f"dense{j}.bias"] = (units,)
            fan_in = units
        return shapes

    def param_count(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


@dataclass(frozen=True)
class SplitConfig:
    cut: int

    def validate(self, spec: ModelSpec) -> None:
        if not 0 <= self.cut <= spec.n_blocks:
            raise ValidationError(f"split must be in [0, {spec.n_blocks}], got {self.cut}")


def init_bound(fan_in: int) -> float:
    """He-uniform bound."""
    return math.sqrt(6.0 / fan_in)


@dataclass
class ModelParams:
    spec: ModelSpec
    tensors: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]

    def conv(self, block: int) -> ConvParams:
        return ConvParams(self.tensors[f"block{block}.weight"], self.tensors[f"block{block}.bias"])

    def dense(self, layer: int) -> DenseParams:
        return DenseParams(self.tensors[f"dense{layer}.weight"], self.tensors[f"dense{layer}.bias"])

    def inventory(self) -> dict[str, np.ndarray]:
        """Every parameter and momentum buffer under a stable name."""
        out = dict(self.tensors)
        out.update({f"{name}.velocity": v for name, v in self.velocity.items()})
        return out


def build_model(spec: ModelSpec, seed: int) -> ModelParams:
    """He-uniform weights from a seeded PCG64 stream, zero biases, zero velocity.

    The output layer starts at zero so the initial logits are uniform.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    output_weight = f"dense{len(spec.dense_units)}.weight"
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias") or name == output_weight:
            tensors[name] = np.zeros(shape, dtype=DTYPE)
        else:
            fan_in = math.prod(shape[1:])
            bound = init_bound(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
    velocity = {name: np.zeros_like(t) for name, t in tensors.items()}
    return ModelParams(spec, tensors, velocity)


@dataclass
class ForwardCache:
    """Everything a part needs to run its backward pass for one batch."""

    owner: int
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    blocks: list = field(default_factory=list)
    head: tuple | None = None
    consumed: bool = False


@dataclass
class ModelPart:
    """A contiguous slice of the layer chain: blocks ``[start, stop)`` plus maybe the head.

    Parameter arrays are shared with the :class:`ModelParams` the part was cut from.
    """

    spec: ModelSpec
    start: int
    stop: int
    has_head: bool
    tensors: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]

    @property
    def block_numbers(self) -> range:
        return range(self.start + 1, self.stop + 1)

    @property
    def is_empty(self) -> bool:
        return self.start == self.stop and not self.has_head

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.spec.cut_shape(self.start)

    def output_shape(self) -> tuple[int, ...]:
        if self.has_head:
            return (self.spec.dense_units[-1],)
        return self.spec.cut_shape(self.stop)

    def conv(self, block: int) -> ConvParams:
        return ConvParams(self.tensors[f"block{block}.weight"], self.tensors[f"block{block}.bias"])

    def dense(self, layer: int) -> DenseParams:
        return DenseParams(self.tensors[f"dense{layer}.weight"], self.tensors[f"dense{layer}.bias"])

    def forward(self, x):
        """Run the part on a batch; returns ``(output, cache)``."""
        x = as_tensor(x, 4, "part input")
        if x.shape[1:] != self.input_shape:
            raise ProtocolError(
                f"input {x.shape} does not match the expected per-sample shape {self.input_shape}"
            )
        cache = ForwardCache(owner=id(self), input_shape=x.shape, output_shape=())
        for b in self.block_numbers:
            z = conv2d_forward(x, self.conv(b))
            a = relu_forward(z)
            pooled, idx = maxpool2x2_forward(a)
            cache.blocks.append((b, x, z, idx))
            x = pooled
        if self.has_head:
            flat = x.reshape(x.shape[0], -1)
            h = dense_forward(flat, self.dense(1))
            r = relu_forward(h)
            logits = dense_forward(r, self.dense(2))
            cache.head = (x.shape, flat, h, r)
            x = logits
        cache.output_shape = x.shape
        return x, cache

    def backward(self, cache: ForwardCache, grad_out):
        """Backpropagate ``grad_out`` through the part; returns ``(grad_input, grads)``."""
        if cache.owner != id(self):
            raise ProtocolError("forward cache belongs to a different model part")
        if cache.consumed:
            raise ProtocolError("forward cache was already used for a backward pass")
        grad = as_tensor(grad_out, name="grad_out")
        if grad.shape != tuple(cache.output_shape):
            raise ProtocolError(
                f"gradient {grad.shape} does not match the forward output {tuple(cache.output_shape)}"
            )
        cache.consumed = True
        grads: dict[str, np.ndarray] = {}
        if self.has_head:
            pooled_shape, flat, h, r = cache.head
            g_r, grads["dense2.weight"], grads["dense2.bias"] = dense_backward(r, self.dense(2), grad)
            g_h = relu_backward(h, g_r)
            g_flat, grads["dense1.weight"], grads["dense1.bias"] = dense_backward(flat, self.dense(1), g_h)
            grad = g_flat.reshape(pooled_shape)
        for b, x, z, idx in reversed(cache.blocks):
            g_a = maxpool2x2_backward(grad, idx, z.shape)
            g_z = relu_backward(z, g_a)
            grad, grads[f"block{b}.weight"], grads[f"block{b}.bias"] = conv2d_backward(x, self.conv(b), g_z)
        return grad, {name: grads[name] for name in self.tensors}

    def apply_sgd(self, grads: dict[str, np.ndarray], lr: float, momentum: float) -> None:
        for name, p in self.tensors.items():
            sgd_step(p, grads[name], self.velocity[name], lr, momentum)

    def inventory(self) -> dict[str, np.ndarray]:
        out = dict(self.tensors)
        out.update({f"{name}.velocity": v for name, v in self.velocity.items()})
        return out


@dataclass
class Partition:
    client_part: ModelPart
    server_part: ModelPart
    split: SplitConfig


def _part(params: ModelParams, start: int, stop: int, head: bool) -> ModelPart:
    names = [f"block{b}.{kind}" for b in range(start + 1, stop + 1) for kind in ("weight", "bias")]
    if head:
        names += [f"dense{j}.{kind}" for j in (1, 2) for kind in ("weight", "bias")]
    return ModelPart(
        params.spec,
        start,
        stop,
        head,
        {n: params.tensors[n] for n in names},
        {n: params.velocity[n] for n in names},
    )


def full_part(params: ModelParams) -> ModelPart:
    """The whole network as one part (the unsplit pipeline)."""
    return _part(params, 0, params.spec.n_blocks, True)


def partition_model(params: ModelParams, split: SplitConfig | int) -> Partition:
    """Cut ``params`` after ``split.cut`` blocks. Both parts share the arrays of ``params``."""
    if isinstance(split, int):
        split = SplitConfig(split)
    split.validate(params.spec)
    k = split.cut
    return Partition(
        client_part=_part(params, 0, k, False),
        server_part=_part(params, k, params.spec.n_blocks, True),
        split=split,
    )


def client_forward(client_part: ModelPart, input_batch):
    """End-system side: blocks ``L_1..L_k``. With ``k = 0`` the batch passes through unchanged."""
    return client_part.forward(input_batch)


def server_forward_backward(server_part: ModelPart, smashed, labels):
    """Server side: remaining blocks, dense head and loss, then backward to the cut.

    Returns ``(loss, grad_at_cut, server_grads)``.
    """
    smashed = as_tensor(smashed, name="smashed activations")
    if smashed.ndim != 4 or smashed.shape[1:] != server_part.input_shape:
        raise ProtocolError(
            f"smashed activations {smashed.shape} do not match the server's cut shape "
            f"[N, {', '.join(map(str, server_part.input_shape))}]"
        )
    logits, cache = server_part.forward(smashed)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    grad_at_cut, grads = server_part.backward(cache, grad_logits)
    return loss, grad_at_cut, grads


def client_backward(client_part: ModelPart, cache: ForwardCache, grad_at_cut):
    _, grads = client_part.backward(cache, grad_at_cut)
    return grads


def predict(parts, images, batch_size: int = 256) -> np.ndarray:
    """Logits of ``images`` pushed through ``parts`` in order."""
    images = as_tensor(images, 4, "images")
    out = []
    for lo in range(0, images.shape[0], batch_size):
        x = images[lo:lo + batch_size]
        for part in parts:
            if not part.is_empty:
                x, _ = part.forward(x)
        out.append(x)
    return np.concatenate(out, axis=0)
