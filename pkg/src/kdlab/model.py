"""Miniature transformer encoder classifier with sensitivity gates.

Each encoder layer holds per-head projection matrices and an FFN; a
multiplicative scalar gate sits on every attention head and every FFN
inner neuron. Gates at exactly 1 leave the computation bit-identical to
the ungated model; gates at 0 remove a unit's contribution, and
:func:`compact` rebuilds a physically smaller model that matches the
masked one to float tolerance.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from kdlab import autodiff as ad
from kdlab.autodiff import Tensor
from kdlab.config import ModelArch
from kdlab.errors import ContractError, InputError, MaskError, ParameterError
from kdlab.rng import Rng

PAD_ID = 0
LN_EPS = 1e-5
MASK_NEG = -1e30  # additive attention mask for padded key positions


@dataclass
class LayerParams:
    """One encoder layer: per-head attention matrices plus the FFN."""

    wq: list  # per head, Tensor [d, d_A]
    wk: list
    wv: list
    wo: list  # per head, Tensor [d_A, d]
    w1: Tensor  # [d, d_I]
    w2: Tensor  # [d_I, d]
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @property
    def n_heads(self) -> int:
        return len(self.wq)

    @property
    def d_inner(self) -> int:
        return self.w1.shape[1]


@dataclass
class ModelParams:
    """Full parameter set of the encoder classifier."""

    layers: list  # of LayerParams
    tok_emb: Tensor  # [vocab, d]
    pos_emb: Tensor  # [max_len, d]
    cls_w: Tensor  # [d, classes]
    cls_b: Tensor  # [classes]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden(self) -> int:
        return self.tok_emb.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.tok_emb.shape[0]

    @property
    def max_len(self) -> int:
        return self.pos_emb.shape[0]

    @property
    def n_classes(self) -> int:
        return self.cls_w.shape[1]

    def named_tensors(self):
        """Deterministically ordered (name, Tensor) pairs."""
        yield "tok_emb", self.tok_emb
        yield "pos_emb", self.pos_emb
        yield "cls_w", self.cls_w
        yield "cls_b", self.cls_b
        for li, layer in enumerate(self.layers):
            for hi in range(layer.n_heads):
                yield f"layer{li}.head{hi}.wq", layer.wq[hi]
                yield f"layer{li}.head{hi}.wk", layer.wk[hi]
                yield f"layer{li}.head{hi}.wv", layer.wv[hi]
                yield f"layer{li}.head{hi}.wo", layer.wo[hi]
            yield f"layer{li}.w1", layer.w1
            yield f"layer{li}.w2", layer.w2
            yield f"layer{li}.ln1_gain", layer.ln1_gain
            yield f"layer{li}.ln1_bias", layer.ln1_bias
            yield f"layer{li}.ln2_gain", layer.ln2_gain
            yield f"layer{li}.ln2_bias", layer.ln2_bias

    def tensors(self) -> list:
        return [t for _, t in self.named_tensors()]

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors():
            t.requires_grad = flag

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.grad = None

    def clone(self) -> "ModelParams":
        def c(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad)

        layers = [
            LayerParams(
                wq=[c(t) for t in l.wq],
                wk=[c(t) for t in l.wk],
                wv=[c(t) for t in l.wv],
                wo=[c(t) for t in l.wo],
                w1=c(l.w1),
                w2=c(l.w2),
                ln1_gain=c(l.ln1_gain),
                ln1_bias=c(l.ln1_bias),
                ln2_gain=c(l.ln2_gain),
                ln2_bias=c(l.ln2_bias),
            )
            for l in self.layers
        ]
        return ModelParams(
            layers=layers,
            tok_emb=c(self.tok_emb),
            pos_emb=c(self.pos_emb),
            cls_w=c(self.cls_w),
            cls_b=c(self.cls_b),
        )

    def digest(self) -> str:
        """SHA-256 over all tensor bytes in name order."""
        h = hashlib.sha256()
        for name, t in self.named_tensors():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class GateSet:
    """Per-head gates xi and per-neuron gates nu.

    All gates equal exactly 1 during scoring; after masking every gate
    is either 0 or 1.
    """

    xi: list  # per layer: list of scalar Tensors
    nu: list  # per layer: Tensor [d_I]

    @classmethod
    def ones_like(cls, params: ModelParams) -> "GateSet":
        xi = [[Tensor(1.0) for _ in range(l.n_heads)] for l in params.layers]
        nu = [Tensor(np.ones(l.d_inner)) for l in params.layers]
        return cls(xi=xi, nu=nu)

    def named_tensors(self):
        for li, heads in enumerate(self.xi):
            for hi, g in enumerate(heads):
                yield f"gate.xi.{li}.{hi}", g
        for li, g in enumerate(self.nu):
            yield f"gate.nu.{li}", g

    def tensors(self) -> list:
        return [t for _, t in self.named_tensors()]

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors():
            t.requires_grad = flag

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.grad = None

    def all_ones(self) -> bool:
        return all(float(t.data.min()) == 1.0 and float(t.data.max()) == 1.0 for t in self.tensors())

    def binary(self) -> bool:
        return all(np.all((t.data == 0.0) | (t.data == 1.0)) for t in self.tensors())


@dataclass
class PoolingSpec:
    """Sequence pooling; only first-token pooling is supported."""

    strategy: str = "first-token"

    def __post_init__(self):
        if self.strategy != "first-token":
            raise ParameterError(f"unsupported pooling strategy {self.strategy!r}")


def init_params(arch: ModelArch, vocab_size: int, rng: Rng) -> ModelParams:
    """Fresh parameters: scaled-normal weights, unit layer norms."""
    arch.validate()
    d, da, di = arch.hidden, arch.head_dim, arch.ffn_inner
    s = arch.init_scale

    def w(shape):
        return Tensor(rng.normal(shape, scale=s), requires_grad=True)

    layers = []
    for _ in range(arch.layers):
        layers.append(
            LayerParams(
                wq=[w((d, da)) for _ in range(arch.heads)],
                wk=[w((d, da)) for _ in range(arch.heads)],
                wv=[w((d, da)) for _ in range(arch.heads)],
                wo=[w((da, d)) for _ in range(arch.heads)],
                w1=w((d, di)),
                w2=w((di, d)),
                ln1_gain=Tensor(np.ones(d), requires_grad=True),
                ln1_bias=Tensor(np.zeros(d), requires_grad=True),
                ln2_gain=Tensor(np.ones(d), requires_grad=True),
                ln2_bias=Tensor(np.zeros(d), requires_grad=True),
            )
        )
    return ModelParams(
        layers=layers,
        tok_emb=w((vocab_size, d)),
        pos_emb=w((arch.max_len, d)),
        cls_w=w((d, arch.classes)),
        cls_b=Tensor(np.zeros(arch.classes), requires_grad=True),
    )


def attn_head(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, mask: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention for one head.

    x may carry leading batch dimensions; attention runs over the
    second-to-last axis. An optional additive mask (0 for visible, large
    negative for hidden keys) is broadcast onto the score matrix.
    """
    q = ad.matmul(x, wq)
    k = ad.matmul(x, wk)
    v = ad.matmul(x, wv)
    scores = ad.scale(ad.matmul(q, ad.transpose_last(k)), 1.0 / math.sqrt(wq.shape[1]))
    if mask is not None:
        scores = ad.add(scores, mask)
    weights = ad.softmax_t(scores, 1.0)
    return ad.matmul(weights, v)


def mha_gated(x: Tensor, layer: LayerParams, xi: list, mask: Tensor | None = None) -> Tensor | None:
    """Sum of gated head contributions; None when the layer has no heads."""
    if len(xi) != layer.n_heads:
        raise ContractError(f"{len(xi)} gates for {layer.n_heads} heads")
    out = None
    for i in range(layer.n_heads):
        head = ad.matmul(attn_head(x, layer.wq[i], layer.wk[i], layer.wv[i], mask), layer.wo[i])
        gated = ad.mul(head, xi[i])
        out = gated if out is None else ad.add(out, gated)
    return out


def ffn_gated(x: Tensor, w1: Tensor, w2: Tensor, nu: Tensor) -> Tensor:
    """GELU(x @ w1) * nu @ w2, the neuron-gated feed-forward block."""
    if nu.shape != (w1.shape[1],):
        raise ContractError(f"nu shape {nu.shape} does not match inner size {w1.shape[1]}")
    h = ad.gelu(ad.matmul(x, w1))
    return ad.matmul(ad.mul(h, nu), w2)


def encoder_forward_batch(
    ids: np.ndarray,
    lengths: np.ndarray,
    params: ModelParams,
    gates: GateSet,
    dropout: float = 0.0,
    rng: Rng | None = None,
) -> Tensor:
    """Logits [batch, classes] for padded id matrix [batch, seq].

    Padded key positions are hidden from attention, so pad content never
    influences the pooled representation.
    """
    ids = np.asarray(ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    b, seq = ids.shape
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise InputError(
            f"token ids must lie in [0, {params.vocab_size}), got range "
            f"[{ids.min()}, {ids.max()}]"
        )
    if seq > params.max_len:
        raise InputError(f"sequence length {seq} exceeds maximum {params.max_len}")
    if len(gates.xi) != params.n_layers:
        raise ContractError("gate set does not match model depth")
    if dropout > 0.0 and rng is None:
        raise ContractError("dropout requires an rng")

    x = ad.add(ad.embedding(params.tok_emb, ids), ad.embedding(params.pos_emb, np.arange(seq)))
    mask = None
    if lengths.min() < seq:
        m = np.where(np.arange(seq)[None, :] < lengths[:, None], 0.0, MASK_NEG)
        mask = Tensor(m[:, None, :])  # [batch, 1, seq] broadcast over queries

    for li, layer in enumerate(params.layers):
        att = mha_gated(x, layer, gates.xi[li], mask)
        if att is not None:
            if dropout > 0.0:
                att = ad.dropout(att, dropout, rng)
            x = ad.add(x, att)
        x = ad.layer_norm(x, layer.ln1_gain, layer.ln1_bias, LN_EPS)
        ff = ffn_gated(x, layer.w1, layer.w2, gates.nu[li])
        if dropout > 0.0:
            ff = ad.dropout(ff, dropout, rng)
        x = ad.layer_norm(ad.add(x, ff), layer.ln2_gain, layer.ln2_bias, LN_EPS)

    pooled = ad.first_token(x)
    return ad.add(ad.matmul(pooled, params.cls_w), params.cls_b)


def encoder_forward(tokens, params: ModelParams, gates: GateSet) -> Tensor:
    """Logits [classes] for a single token-id sequence."""
    ids = np.asarray(tokens, dtype=np.int64)[None, :]
    lengths = np.asarray([ids.shape[1]])
    logits = encoder_forward_batch(ids, lengths, params, gates)
    return ad.reshape(logits, (params.n_classes,))


# ---------------------------------------------------------------------------
# unit enumeration and mask application


def structured_units(params: ModelParams) -> list:
    """Every head and neuron unit of the model, in canonical order."""
    from kdlab.units import UnitId

    units = []
    for li, layer in enumerate(params.layers):
        for hi in range(layer.n_heads):
            units.append(UnitId(layer=li, kind="head", index=hi))
        for ni in range(layer.d_inner):
            units.append(UnitId(layer=li, kind="neuron", index=ni))
    return units


PARAM_TENSOR_KEYS = ("wq", "wk", "wv", "wo", "w1", "w2")


def parameter_tensor_names(params: ModelParams) -> list:
    """(layer, short name, size) for the block weight matrices, the
    tensors unstructured pruning targets."""
    out = []
    for li, layer in enumerate(params.layers):
        for hi in range(layer.n_heads):
            for key in ("wq", "wk", "wv", "wo"):
                out.append((li, f"head{hi}.{key}", getattr(layer, key)[hi].size))
        out.append((li, "w1", layer.w1.size))
        out.append((li, "w2", layer.w2.size))
    return out


def parameter_units(params: ModelParams) -> list:
    from kdlab.units import UnitId

    units = []
    for li, name, size in parameter_tensor_names(params):
        for off in range(size):
            units.append(UnitId(layer=li, kind="parameter", index=off, tensor=name))
    return units


def _layer_tensor(layer: LayerParams, short: str) -> Tensor:
    if short.startswith("head"):
        head_part, key = short.split(".")
        return getattr(layer, key)[int(head_part[4:])]
    return getattr(layer, short)


def _validate_structured(params: ModelParams, mask) -> None:
    for u in mask.removed:
        if u.layer < 0 or u.layer >= params.n_layers:
            raise MaskError(f"mask references missing layer {u.layer}")
        layer = params.layers[u.layer]
        if u.kind == "head":
            if not 0 <= u.index < layer.n_heads:
                raise MaskError(f"mask references missing head {u.index} in layer {u.layer}")
        elif u.kind == "neuron":
            if not 0 <= u.index < layer.d_inner:
                raise MaskError(f"mask references missing neuron {u.index} in layer {u.layer}")
        else:
            raise MaskError("structured operations accept head/neuron units only")


def gates_from_mask(params: ModelParams, mask) -> GateSet:
    """All-ones gates with removed heads/neurons forced to 0."""
    _validate_structured(params, mask)
    gates = GateSet.ones_like(params)
    for u in mask.removed:
        if u.kind == "head":
            gates.xi[u.layer][u.index] = Tensor(0.0)
        else:
            gates.nu[u.layer].data[u.index] = 0.0
    return gates


def compact(params: ModelParams, mask) -> ModelParams:
    """Physically remove masked units.

    Removed heads drop their four projection matrices; removed neurons
    drop the matching w1 column and w2 row. Output logits agree with the
    gate-masked model to float tolerance on all inputs.
    """
    _validate_structured(params, mask)
    out = params.clone()
    for li, layer in enumerate(out.layers):
        dead_heads = {u.index for u in mask.removed if u.kind == "head" and u.layer == li}
        if dead_heads:
            keep = [i for i in range(layer.n_heads) if i not in dead_heads]
            layer.wq = [layer.wq[i] for i in keep]
            layer.wk = [layer.wk[i] for i in keep]
            layer.wv = [layer.wv[i] for i in keep]
            layer.wo = [layer.wo[i] for i in keep]
        dead_neurons = {u.index for u in mask.removed if u.kind == "neuron" and u.layer == li}
        if dead_neurons:
            keep = [j for j in range(layer.d_inner) if j not in dead_neurons]
            layer.w1 = Tensor(layer.w1.data[:, keep], requires_grad=layer.w1.requires_grad)
            layer.w2 = Tensor(layer.w2.data[keep, :], requires_grad=layer.w2.requires_grad)
    return out


def apply_unstructured(params: ModelParams, mask) -> ModelParams:
    """Zero individual weight entries named by a parameter-kind mask."""
    out = params.clone()
    for u in mask.removed:
        if u.kind != "parameter":
            raise MaskError("apply_unstructured accepts parameter units only")
        if not 0 <= u.layer < out.n_layers:
            raise MaskError(f"mask references missing layer {u.layer}")
        try:
            t = _layer_tensor(out.layers[u.layer], u.tensor)
        except (AttributeError, IndexError, ValueError) as exc:
            raise MaskError(f"mask references missing tensor {u.tensor!r}") from exc
        if not 0 <= u.index < t.size:
            raise MaskError(f"offset {u.index} out of range for {u.tensor!r}")
        t.data.reshape(-1)[u.index] = 0.0
    return out


# ---------------------------------------------------------------------------
# student initialization


def kept_layer_indices(total: int, k: int) -> list:
    """Evenly spaced kept layers: ceil(j*total/k) - 1 for j = 1..k."""
    return [math.ceil(j * total / k) - 1 for j in range(1, k + 1)]


def init_student(teacher: ModelParams, strategy, expressiveness_report=None) -> ModelParams:
    """Student parameters derived from the teacher.

    drop-layers keeps k evenly spaced encoder layers; prune-params
    removes the lowest-expressiveness heads and neurons at the given
    sparsity and compacts. Embeddings and classifier are copied either
    way.
    """
    strategy.validate()
    if strategy.kind == "drop-layers":
        k = strategy.layers
        if k > teacher.n_layers:
            raise ParameterError(
                f"cannot keep {k} layers of a {teacher.n_layers}-layer teacher"
            )
        clone = teacher.clone()
        kept = kept_layer_indices(teacher.n_layers, k)
        clone.layers = [clone.layers[i] for i in kept]
        return clone
    # prune-params: expressiveness-ranked structured mask, then compact
    if expressiveness_report is None:
        raise ContractError("prune-params initialization needs an expressiveness report")
    from kdlab.sparsify import rank_mask

    mask = rank_mask(expressiveness_report, strategy.sparsity)
    return compact(teacher, mask)
