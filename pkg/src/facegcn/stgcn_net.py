"""Spatio-temporal graph convolutional network on dense (C, J, T) tensors.

Everything is plain numpy with hand-written reverse-mode gradients: the
spatial graph convolution in both its per-vertex reference form and the
normalized-adjacency matrix form, temporal convolution of odd kernel K with
stride and symmetric zero padding, ReLU, global average pooling, an affine
classifier, stabilized cross-entropy, and SGD with momentum, weight decay
and a step-decay learning rate.

Training runs in float32; gradient-check suites build float64 models. A
GradientTape records the forward activations of one sequence; backward()
replays it exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    LabelOutOfRange,
    NumericalError,
    ParseError,
    PartitionMismatch,
    ShapeMismatch,
    TapeIncomplete,
)
from .st_graph import NormalizedAdjacency, PartitionLabels, SpatialGraph

# Tensor3 = float array of shape (C, J, T); plain np.ndarray throughout.


# ---------------------------------------------------------------------------
# parameters and model


@dataclass
class GraphConvParams:
    weights: np.ndarray  # (P, C_out, C_in)
    bias: np.ndarray | None = None  # (C_out,)

    @property
    def P(self) -> int:
        return self.weights.shape[0]

    @property
    def c_out(self) -> int:
        return self.weights.shape[1]

    @property
    def c_in(self) -> int:
        return self.weights.shape[2]


@dataclass
class TemporalConvParams:
    kernel: np.ndarray  # (C_out, C_in, K)
    stride: int = 1

    def __post_init__(self):
        if self.kernel.shape[2] % 2 == 0:
            raise ShapeMismatch(f"temporal kernel size {self.kernel.shape[2]} must be odd")
        if self.stride < 1:
            raise ShapeMismatch("stride must be >= 1")

    @property
    def K(self) -> int:
        return self.kernel.shape[2]


@dataclass
class Block:
    gconv: GraphConvParams
    tconv: TemporalConvParams
    residual: bool = True  # applied only when input/output shapes match


@dataclass(frozen=True)
class ModelArch:
    in_channels: int
    block_channels: tuple[int, ...] = (64, 128, 256)
    strides: tuple[int, ...] = (1, 2, 2)
    kernel_size: int = 5
    num_classes: int = 2
    graph_conv_bias: bool = True
    residual: bool = True


@dataclass
class Model:
    arch: ModelArch
    adjacency: np.ndarray  # (P, J, J), model dtype, frozen
    blocks: list[Block]
    classifier_w: np.ndarray  # (num_classes, C_last)
    classifier_b: np.ndarray  # (num_classes,)
    dtype: np.dtype = np.dtype(np.float32)

    @property
    def J(self) -> int:
        return self.adjacency.shape[1]

    @property
    def P(self) -> int:
        return self.adjacency.shape[0]

    def parameters(self):
        """Yield (name, array) in declaration order; arrays update in place."""
        for bi, block in enumerate(self.blocks):
            yield f"block{bi}.gconv.weight", block.gconv.weights
            if block.gconv.bias is not None:
                yield f"block{bi}.gconv.bias", block.gconv.bias
            yield f"block{bi}.tconv.kernel", block.tconv.kernel
        yield "classifier.weight", self.classifier_w
        yield "classifier.bias", self.classifier_b


def init_model(
    arch: ModelArch,
    norm: NormalizedAdjacency,
    seed: int = 0,
    dtype=np.float32,
) -> Model:
    """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)) per weight matrix."""
    if len(arch.block_channels) != len(arch.strides):
        raise ShapeMismatch("block_channels and strides must have equal length")
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    adjacency = np.ascontiguousarray(norm.matrices, dtype=dtype)
    adjacency.flags.writeable = False
    p_count = norm.P

    def uniform(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    blocks = []
    c_in = arch.in_channels
    for c_out, stride in zip(arch.block_channels, arch.strides):
        gw = uniform((p_count, c_out, c_in), c_in, c_out)
        gb = np.zeros(c_out, dtype=dtype) if arch.graph_conv_bias else None
        kern = uniform((c_out, c_out, arch.kernel_size), c_out * arch.kernel_size, c_out)
        blocks.append(
            Block(
                gconv=GraphConvParams(weights=gw, bias=gb),
                tconv=TemporalConvParams(kernel=kern, stride=stride),
                residual=arch.residual,
            )
        )
        c_in = c_out
    cw = uniform((arch.num_classes, c_in), c_in, arch.num_classes)
    cb = np.zeros(arch.num_classes, dtype=dtype)
    return Model(
        arch=arch,
        adjacency=adjacency,
        blocks=blocks,
        classifier_w=cw,
        classifier_b=cb,
        dtype=dtype,
    )


# ---------------------------------------------------------------------------
# functional ops


def _mix_nodes(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    # out[o, i, t] = sum_j m[i, j] x[o, j, t]
    return np.moveaxis(np.tensordot(m, x, axes=([1], [1])), 0, 1)


def graph_conv(f_in: np.ndarray, params: GraphConvParams, norm) -> np.ndarray:
    """Matrix-form spatial graph convolution: sum_p M_p (W_p f_in)."""
    matrices = norm.matrices if isinstance(norm, NormalizedAdjacency) else norm
    if matrices.shape[0] != params.P:
        raise PartitionMismatch(
            f"{matrices.shape[0]} adjacency matrices for {params.P} weight matrices"
        )
    c_in, j_count, t_count = f_in.shape
    if c_in != params.c_in or matrices.shape[1] != j_count:
        raise ShapeMismatch(
            f"input {f_in.shape} incompatible with weights {params.weights.shape} "
            f"and adjacency J={matrices.shape[1]}"
        )
    flat = f_in.reshape(c_in, j_count * t_count)
    out = np.zeros((params.c_out, j_count, t_count), dtype=f_in.dtype)
    for p in range(params.P):
        tmp = (params.weights[p] @ flat).reshape(params.c_out, j_count, t_count)
        out += _mix_nodes(matrices[p], tmp)
    if params.bias is not None:
        out += params.bias[:, None, None]
    return out


def _graph_conv_backward(g, f_in, params: GraphConvParams, matrices):
    c_in, j_count, t_count = f_in.shape
    flat_in = f_in.reshape(c_in, j_count * t_count)
    d_in_flat = np.zeros_like(flat_in)
    dw = np.zeros_like(params.weights)
    for p in range(params.P):
        dtmp = np.moveaxis(np.tensordot(matrices[p], g, axes=([0], [1])), 0, 1)
        dtmp_flat = dtmp.reshape(params.c_out, j_count * t_count)
        dw[p] = dtmp_flat @ flat_in.T
        d_in_flat += params.weights[p].T @ dtmp_flat
    db = g.sum(axis=(1, 2)) if params.bias is not None else None
    return d_in_flat.reshape(f_in.shape), dw, db


def graph_conv_reference(
    f_in: np.ndarray,
    params: GraphConvParams,
    graph: SpatialGraph,
    labels: PartitionLabels,
    Z: np.ndarray,
    normalization: str = "cardinality",
) -> np.ndarray:
    """Per-vertex summation form of the spatial graph convolution (the oracle).

    normalization "cardinality" uses 1/Z_ij (the subset-size normalizer);
    "symmetric_degree" uses 1/sqrt(D_ii D_jj), which expands the matrix form
    entrywise and coincides with "cardinality" exactly on regular graphs
    under the uniform partition.
    """
    if labels.P != params.P:
        raise ShapeMismatch(f"{labels.P} partitions for {params.P} weight matrices")
    c_in, j_count, t_count = f_in.shape
    if c_in != params.c_in or j_count != graph.J:
        raise ShapeMismatch(f"input {f_in.shape} does not match weights/graph")
    degree = graph.adjacency.astype(np.float64).sum(axis=1) + 1.0
    out = np.zeros((params.c_out, j_count, t_count), dtype=f_in.dtype)
    for i in range(j_count):
        for j in graph.neighborhood(i):
            label = labels.label(i, int(j))
            if normalization == "cardinality":
                norm = 1.0 / Z[i, label]
            elif normalization == "symmetric_degree":
                norm = 1.0 / np.sqrt(degree[i] * degree[j])
            else:
                raise ValueError(f"unknown normalization {normalization!r}")
            for t in range(t_count):
                out[:, i, t] += norm * (params.weights[label] @ f_in[:, j, t])
    if params.bias is not None:
        out += params.bias[:, None, None]
    return out


def _unfold_time(f: np.ndarray, kernel_size: int, stride: int):
    """Zero-pad along T and gather the K taps: (C*K, J*T_out) column matrix."""
    c_in, j_count, t_count = f.shape
    pad = kernel_size // 2
    t_out = (t_count - 1) // stride + 1
    xp = np.zeros((c_in, j_count, t_count + 2 * pad), dtype=f.dtype)
    xp[:, :, pad : pad + t_count] = f
    cols = np.empty((c_in, kernel_size, j_count, t_out), dtype=f.dtype)
    for tap in range(kernel_size):
        cols[:, tap] = xp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride]
    return cols.reshape(c_in * kernel_size, j_count * t_out), t_out


def temporal_conv(f: np.ndarray, params: TemporalConvParams) -> np.ndarray:
    """1-D convolution along T with zero padding K//2 and stride s."""
    c_in, j_count, _ = f.shape
    if params.kernel.shape[1] != c_in:
        raise ShapeMismatch(
            f"kernel expects {params.kernel.shape[1]} channels, input has {c_in}"
        )
    cols, t_out = _unfold_time(f, params.K, params.stride)
    c_out = params.kernel.shape[0]
    out = params.kernel.reshape(c_out, c_in * params.K) @ cols
    return out.reshape(c_out, j_count, t_out)


def _temporal_conv_backward(g, f, params: TemporalConvParams):
    c_in, j_count, t_count = f.shape
    pad = params.K // 2
    s = params.stride
    t_out = g.shape[2]
    c_out = params.kernel.shape[0]
    g_flat = g.reshape(c_out, j_count * t_out)

    cols, _ = _unfold_time(f, params.K, s)
    dk = (g_flat @ cols.T).reshape(params.kernel.shape)

    dcols = (params.kernel.reshape(c_out, c_in * params.K).T @ g_flat).reshape(
        c_in, params.K, j_count, t_out
    )
    dxp = np.zeros((c_in, j_count, t_count + 2 * pad), dtype=f.dtype)
    for tap in range(params.K):
        dxp[:, :, tap : tap + s * (t_out - 1) + 1 : s] += dcols[:, tap]
    return dxp[:, :, pad : pad + t_count], dk


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, label: int, tape: "GradientTape | None" = None) -> float:
    """-log softmax(logits)[label], stabilized by max subtraction."""
    n = logits.shape[0]
    if not (0 <= label < n):
        raise LabelOutOfRange(f"label {label} outside [0, {n})")
    z = logits - logits.max()
    logsumexp = np.log(np.exp(z).sum())
    loss = float(logsumexp - z[label])
    if tape is not None:
        tape.softmax = np.exp(z - logsumexp)
        tape.label = int(label)
    return loss


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class _BlockCache:
    f_in: np.ndarray
    gconv_mask: np.ndarray
    tconv_in: np.ndarray
    out_mask: np.ndarray
    used_residual: bool


@dataclass
class GradientTape:
    """Forward record of one sequence, enough for exact reverse mode."""

    model: Model | None = None
    block_caches: list[_BlockCache] = field(default_factory=list)
    pooled: np.ndarray | None = None
    pool_shape: tuple[int, int] | None = None
    logits: np.ndarray | None = None
    softmax: np.ndarray | None = None
    label: int | None = None


def forward(model: Model, features: np.ndarray, tape: GradientTape | None = None) -> np.ndarray:
    """Run the block stack, global average pool, and classifier; return logits."""
    x = np.ascontiguousarray(features, dtype=model.dtype)
    if x.ndim != 3:
        raise ShapeMismatch(f"features must be (C, J, T), got {x.shape}")
    if x.shape[0] != model.arch.in_channels or x.shape[1] != model.J:
        raise ShapeMismatch(
            f"features {x.shape} incompatible with model "
            f"(C_in={model.arch.in_channels}, J={model.J})"
        )
    if tape is not None:
        tape.model = model
        tape.block_caches = []

    for block in model.blocks:
        f_in = x
        g_out = graph_conv(f_in, block.gconv, model.adjacency)
        gmask = g_out > 0
        a = g_out * gmask
        tc = temporal_conv(a, block.tconv)
        used_residual = block.residual and tc.shape == f_in.shape
        z = tc + f_in if used_residual else tc
        omask = z > 0
        x = z * omask
        if tape is not None:
            tape.block_caches.append(
                _BlockCache(
                    f_in=f_in,
                    gconv_mask=gmask,
                    tconv_in=a,
                    out_mask=omask,
                    used_residual=used_residual,
                )
            )

    pooled = x.mean(axis=(1, 2))
    logits = model.classifier_w @ pooled + model.classifier_b
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logits")
    if tape is not None:
        tape.pooled = pooled
        tape.pool_shape = (x.shape[1], x.shape[2])
        tape.logits = logits
    return logits


@dataclass
class Gradients:
    """Gradient arrays mirroring Model.parameters() order."""

    arrays: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, model: Model) -> "Gradients":
        return cls({name: np.zeros_like(arr) for name, arr in model.parameters()})

    def add_(self, other: "Gradients") -> None:
        for name in self.arrays:
            self.arrays[name] += other.arrays[name]

    def scale_(self, c: float) -> None:
        for arr in self.arrays.values():
            arr *= c

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def backward(
    tape: GradientTape, loss_scale: float = 1.0, with_input_grad: bool = False
):
    """Exact reverse-mode gradients of (loss_scale * loss) for every parameter.

    With with_input_grad the gradient w.r.t. the input features is returned
    as a second value.
    """
    if tape.model is None or tape.softmax is None or tape.label is None:
        raise TapeIncomplete("forward pass and cross_entropy must be recorded first")
    model = tape.model
    grads = Gradients.zeros(model)

    dlogits = tape.softmax.astype(model.dtype).copy()
    dlogits[tape.label] -= 1.0
    if loss_scale != 1.0:
        dlogits *= model.dtype.type(loss_scale)

    grads.arrays["classifier.weight"][...] = np.outer(dlogits, tape.pooled)
    grads.arrays["classifier.bias"][...] = dlogits
    dpooled = model.classifier_w.T @ dlogits

    j_count, t_count = tape.pool_shape
    dx = np.broadcast_to(
        dpooled[:, None, None] / (j_count * t_count),
        (dpooled.shape[0], j_count, t_count),
    ).astype(model.dtype)

    for bi in range(len(model.blocks) - 1, -1, -1):
        block = model.blocks[bi]
        cache = tape.block_caches[bi]
        dz = dx * cache.out_mask
        dres = dz if cache.used_residual else None
        da, dk = _temporal_conv_backward(dz, cache.tconv_in, block.tconv)
        grads.arrays[f"block{bi}.tconv.kernel"][...] = dk
        dg = da * cache.gconv_mask
        d_in, dw, db = _graph_conv_backward(dg, cache.f_in, block.gconv, model.adjacency)
        grads.arrays[f"block{bi}.gconv.weight"][...] = dw
        if db is not None:
            grads.arrays[f"block{bi}.gconv.bias"][...] = db
        dx = d_in + dres if dres is not None else d_in
    if with_input_grad:
        return grads, dx
    return grads


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(param, grad, velocity, lr, momentum=0.0, weight_decay=0.0):
    """v <- mu v + g + lambda theta; theta <- theta - lr v. In place."""
    np.multiply(velocity, momentum, out=velocity)
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    param -= lr * velocity


class SGD:
    """Momentum SGD over a model's parameter set, deterministic and in place."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, model: Model, grads: Gradients, lr: float) -> None:
        if lr <= 0:
            raise ValueError("lr must be > 0")
        for name, param in model.parameters():
            vel = self._velocity.get(name)
            if vel is None:
                vel = self._velocity[name] = np.zeros_like(param)
            sgd_step(param, grads[name], vel, lr, self.momentum, self.weight_decay)


def lr_schedule(epoch: int, base_lr: float, decay_epochs, gamma: float) -> float:
    """Step decay: base_lr * gamma^(number of decay epochs already reached)."""
    n = sum(1 for d in decay_epochs if epoch >= d)
    return base_lr * gamma**n


# ---------------------------------------------------------------------------
# checkpoint (FGC1): text header with architecture and per-tensor byte
# lengths, then raw little-endian float32 payload in declaration order

_FGC1_TENSORS_SENTINEL = "end_header"


def save_checkpoint(path, model: Model, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    lines = ["FGC1", "version 1"]
    lines.append(f"in_channels {model.arch.in_channels}")
    lines.append("block_channels " + ",".join(str(c) for c in model.arch.block_channels))
    lines.append("strides " + ",".join(str(s) for s in model.arch.strides))
    lines.append(f"kernel_size {model.arch.kernel_size}")
    lines.append(f"num_classes {model.arch.num_classes}")
    lines.append(f"graph_conv_bias {int(model.arch.graph_conv_bias)}")
    lines.append(f"residual {int(model.arch.residual)}")
    lines.append(f"J {model.J}")
    lines.append(f"P {model.P}")
    for key in ("k", "seed", "epoch"):
        lines.append(f"{key} {int(meta.get(key, 0))}")

    tensors = [("adjacency", model.adjacency)] + list(model.parameters())
    payload = []
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        lines.append(f"tensor {name} {len(raw)}")
        payload.append(raw)
    lines.append(_FGC1_TENSORS_SENTINEL)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(b"".join(payload))


def load_checkpoint(path) -> tuple[Model, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(_FGC1_TENSORS_SENTINEL.encode("ascii") + b"\n")
    if end < 0 or not data.startswith(b"FGC1\n"):
        raise ParseError("not an FGC1 checkpoint", path=path)
    header = data[:end].decode("ascii").splitlines()[1:]
    body = data[end + len(_FGC1_TENSORS_SENTINEL) + 1 :]

    keys: dict[str, str] = {}
    tensor_specs: list[tuple[str, int]] = []
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "tensor":
            tensor_specs.append((tok[1], int(tok[2])))
        else:
            keys[tok[0]] = " ".join(tok[1:])

    try:
        arch = ModelArch(
            in_channels=int(keys["in_channels"]),
            block_channels=tuple(int(c) for c in keys["block_channels"].split(",")),
            strides=tuple(int(s) for s in keys["strides"].split(",")),
            kernel_size=int(keys["kernel_size"]),
            num_classes=int(keys["num_classes"]),
            graph_conv_bias=bool(int(keys["graph_conv_bias"])),
            residual=bool(int(keys["residual"])),
        )
        j_count, p_count = int(keys["J"]), int(keys["P"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad checkpoint metadata: {exc}", path=path)
    meta = {key: int(keys.get(key, 0)) for key in ("k", "seed", "epoch")}

    arrays: dict[str, np.ndarray] = {}
    off = 0
    for name, nbytes in tensor_specs:
        if off + nbytes > len(body):
            raise ParseError(f"truncated payload at tensor {name}", path=path)
        arrays[name] = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=off).astype(
            np.float32
        )
        off += nbytes

    def take(name, shape):
        if name not in arrays:
            raise ParseError(f"checkpoint missing tensor {name}", path=path)
        arr = arrays[name]
        if arr.size != int(np.prod(shape)):
            raise ParseError(f"tensor {name} has wrong size", path=path)
        return arr.reshape(shape)

    adjacency = take("adjacency", (p_count, j_count, j_count))
    adjacency.flags.writeable = False
    blocks = []
    c_in = arch.in_channels
    for bi, (c_out, stride) in enumerate(zip(arch.block_channels, arch.strides)):
        gw = take(f"block{bi}.gconv.weight", (p_count, c_out, c_in))
        gb = take(f"block{bi}.gconv.bias", (c_out,)) if arch.graph_conv_bias else None
        kern = take(f"block{bi}.tconv.kernel", (c_out, c_out, arch.kernel_size))
        blocks.append(
            Block(
                gconv=GraphConvParams(weights=gw, bias=gb),
                tconv=TemporalConvParams(kernel=kern, stride=stride),
                residual=arch.residual,
            )
        )
        c_in = c_out
    model = Model(
        arch=arch,
        adjacency=adjacency,
        blocks=blocks,
        classifier_w=take("classifier.weight", (arch.num_classes, c_in)),
        classifier_b=take("classifier.bias", (arch.num_classes,)),
        dtype=np.dtype(np.float32),
    )
    return model, meta


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_acc: float
    eval_acc: float | None
    seconds: float

    def log_line(self) -> str:
        parts = [
            f"epoch={self.epoch}",
            f"lr={self.lr:.6g}",
            f"loss={self.loss:.6f}",
            f"train_acc={self.train_acc:.4f}",
        ]
        if self.eval_acc is not None:
            parts.append(f"eval_acc={self.eval_acc:.4f}")
        parts.append(f"time={self.seconds:.2f}s")
        return " ".join(parts)


def predict(model: Model, features: np.ndarray) -> int:
    return int(np.argmax(forward(model, features)))


def evaluate(model: Model, samples) -> tuple[int, int, list[int]]:
    """(correct, total, predictions) over (features, label) pairs."""
    preds = []
    correct = 0
    for features, label in samples:
        p = predict(model, features)
        preds.append(p)
        correct += int(p == label)
    return correct, len(preds), preds


def train_model(
    model: Model,
    train_samples,
    *,
    epochs: int,
    base_lr: float = 0.01,
    momentum: float = 0.95,
    weight_decay: float = 0.0,
    decay_epochs=(),
    gamma: float = 0.1,
    batch_size: int = 8,
    seed: int = 0,
    eval_samples=None,
    on_epoch=None,
) -> list[EpochStats]:
    """SGD training over (features, label) pairs; deterministic given the seed.

    Mini-batches are a loop with gradient accumulation in batch-index order;
    the epoch shuffle is drawn from default_rng([seed, epoch]).
    """
    if base_lr <= 0:
        raise ValueError("base_lr must be > 0")
    opt = SGD(momentum=momentum, weight_decay=weight_decay)
    history: list[EpochStats] = []
    n = len(train_samples)
    for epoch in range(epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, base_lr, decay_epochs, gamma)
        order = np.random.default_rng([seed, epoch]).permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            acc = Gradients.zeros(model)
            for idx in batch:
                features, label = train_samples[int(idx)]
                tape = GradientTape()
                logits = forward(model, features, tape=tape)
                loss = cross_entropy(logits, label, tape=tape)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}")
                total_loss += loss
                correct += int(np.argmax(logits) == label)
                acc.add_(backward(tape, loss_scale=1.0 / len(batch)))
            opt.step(model, acc, lr)
        eval_acc = None
        if eval_samples:
            c, t, _ = evaluate(model, eval_samples)
            eval_acc = c / t
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            loss=total_loss / max(n, 1),
            train_acc=correct / max(n, 1),
            eval_acc=eval_acc,
            seconds=time.perf_counter() - t0,
        )
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return history
