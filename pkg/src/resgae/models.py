"""Graph convolutional encoders (plain and residual), inner-product decoder, losses."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import tensor as T
from .graph import Graph, NormalizedAdjacency, sample_non_edges
from .tensor import ShapeError, Tensor


class ModelKind(str, Enum):
    GAE = "GAE"
    VGAE = "VGAE"
    RESGAE = "ResGAE"
    RESVGAE = "ResVGAE"

    @property
    def variational(self) -> bool:
        return self in (ModelKind.VGAE, ModelKind.RESVGAE)

    @property
    def residual(self) -> bool:
        return self in (ModelKind.RESGAE, ModelKind.RESVGAE)

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        if isinstance(name, cls):
            return name
        for kind in cls:
            if kind.value.lower() == str(name).lower():
                return kind
        raise ValueError(f"unknown model kind {name!r}")


ACTIVATIONS = ("sigmoid", "relu")
LOSS_MODES = ("full_matrix_weighted", "balanced_sampled")


@dataclass(frozen=True)
class EncoderConfig:
    model_kind: ModelKind
    num_layers: int
    in_dim: int
    hidden_dim: int = 32
    latent_dim: int = 16
    activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind.parse(self.model_kind))
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if min(self.in_dim, self.hidden_dim, self.latent_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def num_residual(self) -> int:
        return max(0, self.num_layers - 2) if self.model_kind.residual else 0

    @property
    def degenerate(self) -> bool:
        """Residual kind too shallow to contain a residual module."""
        return self.model_kind.residual and self.num_residual == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_kind"] = self.model_kind.value
        return d


@dataclass
class GclParams:
    weight: Tensor
    residual: bool = False

    @property
    def in_dim(self) -> int:
        return self.weight.rows

    @property
    def out_dim(self) -> int:
        return self.weight.cols


@dataclass
class EncoderParams:
    config: EncoderConfig
    hidden: list[GclParams]
    heads: list[GclParams]  # [z] or [mu, logvar]

    def tensors(self) -> list[Tensor]:
        return [p.weight for p in self.hidden + self.heads]

    @property
    def num_residual(self) -> int:
        return sum(p.residual for p in self.hidden)


@dataclass
class LatentOutput:
    z: Tensor
    mu: Tensor | None = None
    logvar: Tensor | None = None

    @property
    def embedding(self) -> Tensor:
        """Deterministic embedding used for scoring: the mean when variational."""
        return self.mu if self.mu is not None else self.z


def glorot(in_dim: int, out_dim: int, rng: np.random.Generator, name: str) -> Tensor:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return Tensor(rng.uniform(-limit, limit, size=(in_dim, out_dim)), requires_grad=True, name=name)


def build_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Stack of layers.

    Layer 1 maps features to the hidden width; layers 2..L-1 keep the hidden
    width and carry a skip connection for residual kinds; the final stage is
    one linear head (deterministic kinds) or a mean and a log-variance head.
    With L = 1 the heads read the features directly.
    """
    hidden: list[GclParams] = []
    width = cfg.in_dim
    for k in range(cfg.num_layers - 1):
        out = cfg.hidden_dim
        residual = cfg.model_kind.residual and k > 0
        if residual and width != out:
            raise ShapeError(f"residual layer {k + 1} needs in_dim == out_dim, got {width}->{out}")
        hidden.append(GclParams(glorot(width, out, rng, f"W{k + 1}"), residual=residual))
        width = out
    names = ("W_mu", "W_logvar") if cfg.model_kind.variational else ("W_z",)
    heads = [GclParams(glorot(width, cfg.latent_dim, rng, nm)) for nm in names]
    return EncoderParams(cfg, hidden, heads)


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "linear":
        return x
    if activation == "sigmoid":
        return T.sigmoid(x)
    if activation == "relu":
        return T.relu(x)
    raise ValueError(f"unknown activation {activation!r}")


def _propagate(adj, h: Tensor, w: Tensor) -> Tensor:
    # cheaper association when the layer narrows the width
    if w.cols <= w.rows:
        return T.spmm(adj, T.matmul(h, w))
    return T.matmul(T.spmm(adj, h), w)


def gcl_forward(params: GclParams, adj: NormalizedAdjacency, h: Tensor, activation: str) -> Tensor:
    """``activation(adj @ h @ W)``; ``activation="linear"`` leaves it out."""
    if h.cols != params.in_dim:
        raise ShapeError(f"layer expects {params.in_dim} input columns, got {h.cols}")
    return _activate(_propagate(adj, h, params.weight), activation)


def residual_gcl_forward(params: GclParams, adj: NormalizedAdjacency, h: Tensor, activation: str) -> Tensor:
    if params.in_dim != params.out_dim:
        raise ShapeError("residual module needs equal input and output width")
    return T.add(gcl_forward(params, adj, h, activation), h)


def encode(
    params: EncoderParams,
    adj: NormalizedAdjacency,
    x: Tensor,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> LatentOutput:
    cfg = params.config
    h = x
    for layer in params.hidden:
        fwd = residual_gcl_forward if layer.residual else gcl_forward
        h = fwd(layer, adj, h, cfg.activation)
    if not cfg.model_kind.variational:
        return LatentOutput(z=gcl_forward(params.heads[0], adj, h, "linear"))
    mu = gcl_forward(params.heads[0], adj, h, "linear")
    logvar = gcl_forward(params.heads[1], adj, h, "linear")
    return LatentOutput(z=T.gaussian_sample(mu, logvar, rng, eps=eps), mu=mu, logvar=logvar)


# ------------------------------------------------------------------ decoders


def decode_logits(z: Tensor) -> Tensor:
    return T.matmul(z, T.transpose(z))


def decode_dense(z: Tensor) -> Tensor:
    """Reconstructed adjacency ``sigmoid(Z Z^T)``."""
    return T.sigmoid(decode_logits(z))


def decode_pairs(z: Tensor, pairs) -> np.ndarray:
    """Edge probabilities ``sigmoid(z_i . z_j)`` for each ``(i, j)`` in ``pairs``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    zv = z.value if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    n = zv.shape[0]
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise IndexError(f"pair index out of range for {n} nodes")
    logits = np.einsum("ij,ij->i", zv[pairs[:, 0]], zv[pairs[:, 1]])
    return T._sigmoid(logits)


# -------------------------------------------------------------------- losses


@dataclass
class LossContext:
    """Per-graph constants reused by every reconstruction loss evaluation."""

    graph: Graph
    targets: object = None  # sparse 0/1 adjacency, full_matrix_weighted only
    pos_weight: float = 1.0
    norm: float = 1.0
    edge_keys: set = field(default_factory=set)

    @classmethod
    def for_graph(cls, g: Graph, mode: str) -> "LossContext":
        if g.num_edges == 0:
            raise ValueError("reconstruction loss needs at least one training edge")
        ctx = cls(g)
        if mode == "full_matrix_weighted":
            n2 = float(g.num_nodes) ** 2
            pos = 2.0 * g.num_edges
            ctx.targets = g.adjacency()
            ctx.pos_weight = (n2 - pos) / pos
            ctx.norm = n2 / (2.0 * (n2 - pos))
        elif mode == "balanced_sampled":
            ctx.edge_keys = g.edge_set()
        else:
            raise ValueError(f"unknown loss mode {mode!r}")
        return ctx


def reconstruction_loss(
    z: Tensor,
    train_graph: Graph | LossContext,
    mode: str = "full_matrix_weighted",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Binary cross-entropy of the inner-product decoder against the graph.

    ``full_matrix_weighted`` scores all N^2 pairs (self-pairs are negatives)
    with positives up-weighted by negatives/positives and the mean scaled by
    N^2 / (2 * negatives).  ``balanced_sampled`` averages over every training
    edge plus as many fresh uniformly drawn non-edges.
    """
    ctx = train_graph if isinstance(train_graph, LossContext) else LossContext.for_graph(train_graph, mode)
    g = ctx.graph
    if mode == "full_matrix_weighted":
        if ctx.targets is None:
            ctx = LossContext.for_graph(g, mode)
        n2 = float(g.num_nodes) ** 2
        return T.gram_bce_with_logits(z, ctx.targets, ctx.pos_weight, ctx.norm / n2)
    if mode != "balanced_sampled":
        raise ValueError(f"unknown loss mode {mode!r}")
    if rng is None:
        raise ValueError("balanced_sampled loss needs an rng")
    keys = ctx.edge_keys or g.edge_set()
    neg = sample_non_edges(g.num_nodes, g.num_edges, set(keys), rng)
    pairs = np.vstack([g.edges, neg])
    targets = np.r_[np.ones(g.num_edges), np.zeros(len(neg))].reshape(-1, 1)
    logits = T.row_dot(z, pairs[:, 0], pairs[:, 1])
    return T.bce_with_logits(logits, targets, 1.0, 1.0 / len(pairs))


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over dimensions, averaged over nodes."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_divergence: {mu.shape} vs {logvar.shape}")
    inner = T.sub(T.add_scalar(logvar, 1.0), T.add(T.mul(mu, mu), T.exp(logvar)))
    return T.scale(T.total(inner), -0.5 / mu.rows)


KL_NORMS = ("nodes_squared", "nodes")


def elbo_loss(
    out: LatentOutput,
    train_graph: Graph | LossContext,
    mode: str = "full_matrix_weighted",
    rng: np.random.Generator | None = None,
    kl_norm: str = "nodes_squared",
) -> Tensor:
    """Negative evidence lower bound (the quantity minimised).

    ``kl_norm="nodes_squared"`` scales the per-node KL by a further 1/N so it
    is on the same footing as the N^2-averaged reconstruction term;
    ``"nodes"`` adds the per-node KL unscaled.
    """
    rec = reconstruction_loss(out.z, train_graph, mode, rng)
    kl = kl_divergence(out.mu, out.logvar)
    if kl_norm == "nodes_squared":
        kl = T.scale(kl, 1.0 / out.mu.rows)
    elif kl_norm != "nodes":
        raise ValueError(f"kl_norm must be one of {KL_NORMS}")
    return T.add(rec, kl)


def model_loss(out: LatentOutput, train_graph, mode: str, rng=None, kl_norm: str = "nodes_squared") -> Tensor:
    if out.mu is not None:
        return elbo_loss(out, train_graph, mode, rng, kl_norm)
    return reconstruction_loss(out.z, train_graph, mode, rng)


# ---------------------------------------------------------------- checkpoint
#
# Layout (all integers little-endian):
#   magic   8 bytes  b"RGAECKPT"
#   version u32      1
#   cfg_len u32, then cfg_len bytes of UTF-8 JSON (EncoderConfig fields)
#   count   u32      number of weight matrices, hidden layers first then heads
#   per matrix: flags u8 (bit0 = residual), rows u32, cols u32,
#               rows*cols float64 little-endian, row-major

CKPT_MAGIC = b"RGAECKPT"
CKPT_VERSION = 1


def save_checkpoint(params: EncoderParams, path) -> None:
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    layers = params.hidden + params.heads
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg)), cfg, struct.pack("<I", len(layers))]
    for layer in layers:
        w = layer.weight.value
        chunks.append(struct.pack("<BII", int(layer.residual), *w.shape))
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> EncoderParams:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, cfg_len = struct.unpack_from("<II", buf, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    cfg = EncoderConfig(**json.loads(buf[off : off + cfg_len].decode("utf-8")))
    off += cfg_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    layers = []
    for _ in range(count):
        flags, rows, cols = struct.unpack_from("<BII", buf, off)
        off += 9
        nbytes = rows * cols * 8
        w = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += nbytes
        layers.append(GclParams(Tensor(w.astype(np.float64), requires_grad=True), residual=bool(flags & 1)))
    n_heads = 2 if cfg.model_kind.variational else 1
    return EncoderParams(cfg, layers[:-n_heads], layers[-n_heads:])
