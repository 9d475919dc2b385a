"""The 50-layer 1-D pre-activation bottleneck residual network.

Topology: an initial wide-kernel conv, then four block layers that each
start with a stride-2 max pool and stack bottleneck residual blocks, then a
final batch norm + ReLU, global mean pool over time, and a dense layer onto
the five sleep stages.

A bottleneck block is three (batch norm, ReLU, conv) triplets: 1x1 down to
the block-layer width, 1x3 at that width, 1x1 back up by the expansion
factor. The skip branch is the raw block input when widths match, otherwise
a 1x1 projection applied to the output of the first ReLU. Projection convs
are not counted as weighted layers.

Forward/backward are written against the primitives in ``layers``; the
backward pass walks the cached contexts in exact reverse order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import DimensionError
from .layers import BatchNormState
from .optim import variance_scaling_init

BN_SUFFIXES = ("gamma", "beta", "running_mean", "running_var")


@dataclass
class ModelConfig:
    num_block_layers: int = 4
    blocks_per_layer: int = 4
    base_filters: int = 16
    bottleneck_expansion: int = 4
    initial_filters: int = 64
    initial_kernel: int = 16
    num_classes: int = 5
    input_channels: int = 5
    epoch_samples: int = 6000

    def validate(self) -> None:
        for name in (
            "num_block_layers", "blocks_per_layer", "base_filters",
            "bottleneck_expansion", "initial_filters", "initial_kernel",
            "num_classes", "input_channels", "epoch_samples",
        ):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be positive")
        if self.epoch_samples % (2**self.num_block_layers) != 0:
            raise DimensionError(
                f"epoch_samples {self.epoch_samples} not divisible by "
                f"2^{self.num_block_layers}"
            )

    @property
    def final_width(self) -> int:
        return self.bottleneck_expansion * self.num_block_layers * self.base_filters

    def block_plan(self) -> list[tuple[int, int, int, int, int, bool]]:
        """(layer, block, in_width, mid_width, out_width, has_projection)
        for every residual block, in forward order."""
        plan = []
        width = self.initial_filters
        for l in range(1, self.num_block_layers + 1):
            mid = l * self.base_filters
            out = self.bottleneck_expansion * mid
            for b in range(self.blocks_per_layer):
                plan.append((l, b, width, mid, out, width != out))
                width = out
        return plan


@dataclass
class Prediction:
    probs: np.ndarray  # (K,) softmax outputs
    label: int         # argmax; ties resolve to the lowest class index


class ModelParams:
    """All model tensors under stable dotted names, in creation order.

    ``tensors`` holds every float array including batch-norm running stats;
    ``bn`` exposes BatchNormState wrappers that alias the same arrays, so
    in-place optimizer updates and running-stat updates stay coherent.
    """

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.tensors: dict[str, np.ndarray] = {}
        self.bn: dict[str, BatchNormState] = {}

    def add_conv(self, name: str, weight: np.ndarray, bias: np.ndarray) -> None:
        self.tensors[f"{name}.weight"] = weight
        self.tensors[f"{name}.bias"] = bias

    def add_bn(self, name: str, channels: int, dtype) -> None:
        state = BatchNormState.create(channels, dtype=dtype)
        self.tensors[f"{name}.gamma"] = state.gamma
        self.tensors[f"{name}.beta"] = state.beta
        self.tensors[f"{name}.running_mean"] = state.running_mean
        self.tensors[f"{name}.running_var"] = state.running_var
        self.bn[name] = state

    def trainable(self) -> dict[str, np.ndarray]:
        return {
            k: v for k, v in self.tensors.items()
            if not k.endswith(("running_mean", "running_var"))
        }

    def weighted_layer_count(self) -> int:
        """Main-path convs plus the dense head; projection convs excluded."""
        return sum(
            1 for k in self.tensors
            if k.endswith(".weight") and ".proj" not in k
        )

    def channel_progression(self) -> list[int]:
        """Output width after each block layer."""
        cfg = self.config
        return [
            cfg.bottleneck_expansion * l * cfg.base_filters
            for l in range(1, cfg.num_block_layers + 1)
        ]

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        """Copy values from a name->array mapping; names and shapes must
        match this model exactly."""
        missing = set(self.tensors) - set(tensors)
        extra = set(tensors) - set(self.tensors)
        if missing or extra:
            raise DimensionError(
                f"tensor name mismatch: missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]}"
            )
        for name, value in tensors.items():
            dst = self.tensors[name]
            if dst.shape != value.shape:
                raise DimensionError(
                    f"shape mismatch for {name!r}: {value.shape} vs {dst.shape}"
                )
            dst[...] = value


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Construct parameters: conv kernels are fan-in variance-scaled
    truncated normals, biases zero, batch-norm scale 1 / shift 0."""
    params = ModelParams(config)
    rng = np.random.default_rng(seed)

    def conv(name, cin, cout, k):
        w = variance_scaling_init((cout, cin, k), fan_in=cin * k, seed=rng)
        params.add_conv(name, w.astype(dtype), np.zeros(cout, dtype=dtype))

    conv("stem.conv", config.input_channels, config.initial_filters,
         config.initial_kernel)
    for l, b, in_w, mid_w, out_w, has_proj in config.block_plan():
        prefix = f"layer{l}.block{b}"
        params.add_bn(f"{prefix}.bn1", in_w, dtype)
        conv(f"{prefix}.conv1", in_w, mid_w, 1)
        params.add_bn(f"{prefix}.bn2", mid_w, dtype)
        conv(f"{prefix}.conv2", mid_w, mid_w, 3)
        params.add_bn(f"{prefix}.bn3", mid_w, dtype)
        conv(f"{prefix}.conv3", mid_w, out_w, 1)
        if has_proj:
            conv(f"{prefix}.proj", in_w, out_w, 1)
    params.add_bn("final_bn", config.final_width, dtype)
    f = config.final_width
    w = variance_scaling_init((f, config.num_classes), fan_in=f, seed=rng)
    params.tensors["head.weight"] = w.astype(dtype)
    params.tensors["head.bias"] = np.zeros(config.num_classes, dtype=dtype)
    return params


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class BlockCtx:
    bn1: object
    relu1: object
    conv1: object
    bn2: object
    relu2: object
    conv2: object
    bn3: object
    relu3: object
    conv3: object
    proj: object
    has_proj: bool


@dataclass
class ModelContext:
    stem: object
    pools: list
    blocks: list  # list of BlockCtx, forward order
    final_bn: object
    final_relu: object
    mean_pool: object
    head: object


def _block_forward(x, params: ModelParams, prefix: str, has_proj: bool,
                   training: bool):
    a, bn1 = layers.batchnorm_forward(x, params.bn[f"{prefix}.bn1"], training)
    r1, relu1 = layers.relu(a, training)
    if has_proj:
        skip, proj = layers.conv1d_forward(
            r1, params.tensors[f"{prefix}.proj.weight"],
            params.tensors[f"{prefix}.proj.bias"], training=training)
    else:
        skip, proj = x, None

    h, conv1 = layers.conv1d_forward(
        r1, params.tensors[f"{prefix}.conv1.weight"],
        params.tensors[f"{prefix}.conv1.bias"], training=training)
    h, bn2 = layers.batchnorm_forward(h, params.bn[f"{prefix}.bn2"], training)
    h, relu2 = layers.relu(h, training)
    h, conv2 = layers.conv1d_forward(
        h, params.tensors[f"{prefix}.conv2.weight"],
        params.tensors[f"{prefix}.conv2.bias"], training=training)
    h, bn3 = layers.batchnorm_forward(h, params.bn[f"{prefix}.bn3"], training)
    h, relu3 = layers.relu(h, training)
    h, conv3 = layers.conv1d_forward(
        h, params.tensors[f"{prefix}.conv3.weight"],
        params.tensors[f"{prefix}.conv3.bias"], training=training)

    out = h + skip
    ctx = BlockCtx(bn1, relu1, conv1, bn2, relu2, conv2, bn3, relu3, conv3,
                   proj, has_proj) if training else None
    return out, ctx


def forward(params: ModelParams, batch: np.ndarray, training: bool = False):
    """Run the network on a (N, C, T) batch; returns (logits, ctx).

    ctx is a ModelContext in training mode and None otherwise.
    """
    cfg = params.config
    if batch.ndim != 3 or batch.shape[1:] != (cfg.input_channels, cfg.epoch_samples):
        raise DimensionError(
            f"batch shape {batch.shape} does not match "
            f"(N, {cfg.input_channels}, {cfg.epoch_samples})"
        )

    x, stem_ctx = layers.conv1d_forward(
        batch, params.tensors["stem.conv.weight"],
        params.tensors["stem.conv.bias"], training=training)

    pools, blocks = [], []
    plan = cfg.block_plan()
    idx = 0
    for l in range(1, cfg.num_block_layers + 1):
        x, pool_ctx = layers.maxpool1d(x, training=training)
        pools.append(pool_ctx)
        for _ in range(cfg.blocks_per_layer):
            _, b, _, _, _, has_proj = plan[idx]
            x, bctx = _block_forward(x, params, f"layer{l}.block{b}",
                                     has_proj, training)
            blocks.append(bctx)
            idx += 1

    x, fbn_ctx = layers.batchnorm_forward(x, params.bn["final_bn"], training)
    x, frelu_ctx = layers.relu(x, training)
    x, pool_ctx = layers.global_mean_pool(x, training)
    logits, head_ctx = layers.dense_forward(
        x, params.tensors["head.weight"], params.tensors["head.bias"],
        training=training)

    ctx = ModelContext(stem_ctx, pools, blocks, fbn_ctx, frelu_ctx,
                       pool_ctx, head_ctx) if training else None
    return logits, ctx


def _block_backward(g, bctx: BlockCtx, prefix: str, grads):
    g_skip = g
    g, gw, gb = layers.conv1d_backward(g, bctx.conv3)
    grads[f"{prefix}.conv3.weight"] = gw
    grads[f"{prefix}.conv3.bias"] = gb
    g = layers.relu_backward(g, bctx.relu3)
    g, gg, gb = layers.batchnorm_backward(g, bctx.bn3)
    grads[f"{prefix}.bn3.gamma"] = gg
    grads[f"{prefix}.bn3.beta"] = gb
    g, gw, gb = layers.conv1d_backward(g, bctx.conv2)
    grads[f"{prefix}.conv2.weight"] = gw
    grads[f"{prefix}.conv2.bias"] = gb
    g = layers.relu_backward(g, bctx.relu2)
    g, gg, gb = layers.batchnorm_backward(g, bctx.bn2)
    grads[f"{prefix}.bn2.gamma"] = gg
    grads[f"{prefix}.bn2.beta"] = gb
    g, gw, gb = layers.conv1d_backward(g, bctx.conv1)
    grads[f"{prefix}.conv1.weight"] = gw
    grads[f"{prefix}.conv1.bias"] = gb

    if bctx.has_proj:
        gp, gw, gb = layers.conv1d_backward(g_skip, bctx.proj)
        grads[f"{prefix}.proj.weight"] = gw
        grads[f"{prefix}.proj.bias"] = gb
        g = g + gp
    g = layers.relu_backward(g, bctx.relu1)
    g, gg, gb = layers.batchnorm_backward(g, bctx.bn1)
    grads[f"{prefix}.bn1.gamma"] = gg
    grads[f"{prefix}.bn1.beta"] = gb
    if not bctx.has_proj:
        g = g + g_skip
    return g


def backward(params: ModelParams, ctx: ModelContext,
             grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every trainable tensor for the given output gradient."""
    cfg = params.config
    grads: dict[str, np.ndarray] = {}

    g, gw, gb = layers.dense_backward(grad_logits, ctx.head)
    grads["head.weight"] = gw
    grads["head.bias"] = gb
    g = layers.global_mean_pool_backward(g, ctx.mean_pool)
    g = layers.relu_backward(g, ctx.final_relu)
    g, gg, gb = layers.batchnorm_backward(g, ctx.final_bn)
    grads["final_bn.gamma"] = gg
    grads["final_bn.beta"] = gb

    plan = cfg.block_plan()
    idx = len(plan) - 1
    for l in range(cfg.num_block_layers, 0, -1):
        for _ in range(cfg.blocks_per_layer):
            _, b, *_ = plan[idx]
            g = _block_backward(g, ctx.blocks[idx], f"layer{l}.block{b}", grads)
            idx -= 1
        g = layers.maxpool1d_backward(g, ctx.pools[l - 1])

    _, gw, gb = layers.conv1d_backward(g, ctx.stem)
    grads["stem.conv.weight"] = gw
    grads["stem.conv.bias"] = gb
    return grads


# ---------------------------------------------------------------------------
# inference entry points
# ---------------------------------------------------------------------------

def predict(params: ModelParams, batch: np.ndarray) -> list[Prediction]:
    logits, _ = forward(params, batch, training=False)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return [Prediction(probs=p, label=int(np.argmax(p))) for p in probs]


def hypnodensity(params: ModelParams, epochs: np.ndarray,
                 batch_size: int = 32) -> np.ndarray:
    """Per-epoch stage probabilities (E, K) in temporal order."""
    cfg = params.config
    if epochs.shape[0] == 0:
        return np.zeros((0, cfg.num_classes), dtype=np.float64)
    rows = []
    for start in range(0, epochs.shape[0], batch_size):
        preds = predict(params, epochs[start : start + batch_size])
        rows.extend(p.probs for p in preds)
    return np.stack(rows).astype(np.float64)
