"""Frozen toy decoder LM hosting fusion branches at configurable placements.

The base model is a small pre-norm decoder: embedding, a stack of blocks
(single-head causal self-attention, then a 4x silu MLP, each behind its
own layer norm and residual), a final norm and a logit head.  Every base
weight is drawn once from the config seed and never trained.

Each block carries one fusion site described by a PlacementConfig: the
stream value at `query_from` feeds the projection-free cross-attention,
and the resulting delta is added to the stream at `add_to`.  Taps are
sublayer boundary values (block input, attention output before its
residual add, the post-attention stream, MLP output before its residual
add), and when query and add points coincide the query always reads the
pre-add value.  All sites share one FusionParams: the low-rank pairs and
the visual positional embedding are global, so blocks differ only in
where fusion attaches.

Everything runs batched (batch, seq, d) in float64, with a hand-written
backward pass that produces gradients only for the fusion tensors; the
frozen base contributes vector-Jacobian products but receives no updates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fusion import FusionParams, adaptive_mask
from .prompt import prompt_rows
from .tensor import FLOAT, ShapeError, activation, activation_vjp, load_tensor, save_tensor, sigmoid, silu_grad, softmax_rows

LN_EPS = 1e-5

PLACEMENT_POINTS = ("mhsa_in", "mhsa_out", "mlp_in", "mlp_out")

# the six legal (query_from, add_to) rows; add point never precedes query point
LEGAL_PLACEMENTS = (
    ("mhsa_in", "mhsa_in"),
    ("mhsa_in", "mhsa_out"),
    ("mhsa_out", "mhsa_out"),
    ("mlp_in", "mlp_in"),
    ("mlp_in", "mlp_out"),
    ("mlp_out", "mlp_out"),
)


@dataclass(frozen=True)
class PlacementConfig:
    """Where a block's fusion site reads its query and injects its delta."""

    query_from: str = "mlp_in"
    add_to: str = "mlp_out"

    def __post_init__(self):
        if (self.query_from, self.add_to) not in LEGAL_PLACEMENTS:
            raise ValueError(
                f"placement ({self.query_from!r}, {self.add_to!r}) is not one of "
                f"the {len(LEGAL_PLACEMENTS)} legal configurations {LEGAL_PLACEMENTS}"
            )

    def as_tuple(self) -> tuple[str, str]:
        return (self.query_from, self.add_to)


def legal_placements() -> tuple[PlacementConfig, ...]:
    return tuple(PlacementConfig(q, a) for q, a in LEGAL_PLACEMENTS)


@dataclass
class ModelConfig:
    """Architecture plus fusion hyperparameters; seed fixes every weight."""

    n_blocks: int = 2
    d_model: int = 64
    d_in: int = 32  # visual feature width entering the low-rank pairs
    rank: int = 8
    vocab_size: int = 40
    max_seq: int = 8
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    alpha: float = 0.1
    beta: float = 0.01
    gamma: float = 0.2
    phi: str = "silu"
    scales: tuple = (1, 2)
    pool: str = "avg"
    pos_scale: float = 0.1
    b_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.placement, (tuple, list)):
            self.placement = PlacementConfig(*self.placement)
        self.scales = tuple(int(s) for s in self.scales)
        for name in ("n_blocks", "d_model", "d_in", "rank", "vocab_size", "max_seq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def n_rows(self) -> int:
        return prompt_rows(self.scales)

    def to_dict(self) -> dict:
        return {
            "n_blocks": self.n_blocks,
            "d_model": self.d_model,
            "d_in": self.d_in,
            "rank": self.rank,
            "vocab_size": self.vocab_size,
            "max_seq": self.max_seq,
            "placement": list(self.placement.as_tuple()),
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "phi": self.phi,
            "scales": list(self.scales),
            "pool": self.pool,
            "pos_scale": self.pos_scale,
            "b_scale": self.b_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["placement"] = PlacementConfig(*d["placement"])
        d["scales"] = tuple(d["scales"])
        return cls(**d)


@dataclass
class DecoderBlock:
    """Frozen weights of one pre-norm block."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w_mlp1: np.ndarray
    b_mlp1: np.ndarray
    w_mlp2: np.ndarray
    b_mlp2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    @classmethod
    def random(cls, rng: np.random.Generator, d: int) -> "DecoderBlock":
        std = 1.0 / np.sqrt(d)
        return cls(
            w_q=rng.normal(0.0, std, size=(d, d)),
            w_k=rng.normal(0.0, std, size=(d, d)),
            w_v=rng.normal(0.0, std, size=(d, d)),
            w_o=rng.normal(0.0, std, size=(d, d)),
            ln1_g=np.ones(d, dtype=FLOAT),
            ln1_b=np.zeros(d, dtype=FLOAT),
            w_mlp1=rng.normal(0.0, std, size=(d, 4 * d)),
            b_mlp1=np.zeros(4 * d, dtype=FLOAT),
            w_mlp2=rng.normal(0.0, 1.0 / np.sqrt(4 * d), size=(4 * d, d)),
            b_mlp2=np.zeros(d, dtype=FLOAT),
            ln2_g=np.ones(d, dtype=FLOAT),
            ln2_b=np.zeros(d, dtype=FLOAT),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in (
            "w_q", "w_k", "w_v", "w_o", "ln1_g", "ln1_b",
            "w_mlp1", "b_mlp1", "w_mlp2", "b_mlp2", "ln2_g", "ln2_b",
        )}


@dataclass
class ModelGrads:
    """Gradients for the trainable fusion tensors, keyed like trainable()."""

    a_feat: np.ndarray
    b_feat: np.ndarray
    a_cls: np.ndarray
    b_cls: np.ndarray
    pos_embed: np.ndarray

    def items(self):
        return vars(self).items()


# ---------------------------------------------------------------------------
# batched primitives (batch, seq, d)


def _act3(x: np.ndarray, kind: str) -> np.ndarray:
    """Activation on a rank-3 tensor with per-sample semantics.

    softmax rows run over the last axis; the positive-shifted silu takes
    its min over each sample's slice, matching the rank-2 op applied
    sample by sample.
    """
    if kind == "softmax_rows":
        b, s, d = x.shape
        return softmax_rows(x.reshape(b * s, d)).reshape(b, s, d)
    if kind == "silu_positive":
        return x * sigmoid(x) - np.min(x, axis=(1, 2), keepdims=True)
    return activation(x, kind)


def _act3_vjp(x: np.ndarray, grad_out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "softmax_rows":
        b, s, d = x.shape
        flat = activation_vjp(x.reshape(b * s, d), grad_out.reshape(b * s, d), kind)
        return flat.reshape(b, s, d)
    if kind == "silu_positive":
        dx = grad_out * silu_grad(x)
        b = x.shape[0]
        flat_x = x.reshape(b, -1)
        flat_dx = dx.reshape(b, -1)  # view of the fresh dx
        flat_dx[np.arange(b), np.argmin(flat_x, axis=1)] -= grad_out.reshape(b, -1).sum(axis=1)
        return dx
    return activation_vjp(x, grad_out, kind)


def _ln_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * inv
    return xhat * gain + bias, (xhat, inv)


def _ln_backward(d_out, cache, gain):
    xhat, inv = cache
    d_xhat = d_out * gain
    mean1 = d_xhat.mean(axis=-1, keepdims=True)
    mean2 = np.mean(d_xhat * xhat, axis=-1, keepdims=True)
    return inv * (d_xhat - mean1 - xhat * mean2)


def _attn_forward(n1, blk):
    d = n1.shape[-1]
    q = n1 @ blk.w_q
    k = n1 @ blk.w_k
    v = n1 @ blk.w_v
    logits = (q @ k.swapaxes(1, 2)) / np.sqrt(FLOAT(d))
    s = n1.shape[1]
    causal = np.tril(np.ones((s, s), dtype=bool))
    logits = np.where(causal, logits, -np.inf)
    b = n1.shape[0]
    weights = softmax_rows(logits.reshape(b * s, s)).reshape(b, s, s)
    ctx = weights @ v
    return ctx @ blk.w_o, (q, k, v, weights)


def _attn_backward(d_out, cache, blk):
    q, k, v, weights = cache
    d = q.shape[-1]
    d_ctx = d_out @ blk.w_o.T
    d_weights = d_ctx @ v.swapaxes(1, 2)
    d_v = weights.swapaxes(1, 2) @ d_ctx
    inner = np.sum(d_weights * weights, axis=-1, keepdims=True)
    d_logits = weights * (d_weights - inner)
    scale = 1.0 / np.sqrt(FLOAT(d))
    d_q = (d_logits @ k) * scale
    d_k = (d_logits.swapaxes(1, 2) @ q) * scale
    return d_q @ blk.w_q.T + d_k @ blk.w_k.T + d_v @ blk.w_v.T


def _mlp_forward(n2, blk):
    pre = n2 @ blk.w_mlp1 + blk.b_mlp1
    hidden = pre * sigmoid(pre)
    return hidden @ blk.w_mlp2 + blk.b_mlp2, pre


def _mlp_backward(d_out, pre, blk):
    d_hidden = d_out @ blk.w_mlp2.T
    d_pre = d_hidden * silu_grad(pre)
    return d_pre @ blk.w_mlp1.T


# ---------------------------------------------------------------------------
# fusion site, batched


@dataclass
class _SiteContext:
    """Per-forward shared visual state: one values tensor for every block."""

    values: np.ndarray  # (B, N, d)
    k_act: np.ndarray  # phi(values)
    alpha: float
    gamma: float
    phi: str
    _k_local_grad: np.ndarray | None = None

    def k_vjp(self, grad_out):
        """Backprop through phi(values); the elementwise local gradient is
        the same for every block, so it is computed once and reused."""
        if self.phi == "identity":
            return grad_out
        if self.phi in ("silu", "relu", "elu"):
            if self._k_local_grad is None:
                self._k_local_grad = _elementwise_grad(self.values, self.phi)
            return grad_out * self._k_local_grad
        return _act3_vjp(self.values, grad_out, self.phi)


def _elementwise_grad(x, kind):
    if kind == "silu":
        return silu_grad(x)
    if kind == "relu":
        return (x > 0).astype(FLOAT)
    if kind == "elu":
        return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    raise ValueError(f"{kind!r} has no elementwise gradient")


def _site_forward(tap, ctx: _SiteContext):
    q_act = _act3(tap, ctx.phi)
    scores = q_act @ ctx.k_act.swapaxes(1, 2)
    b, s, n = scores.shape
    decision = adaptive_mask(scores.reshape(b * s, n), ctx.gamma)
    mask = decision.mask.reshape(b, s, n)
    delta = ctx.alpha * ((scores * mask) @ ctx.values)
    return delta, mask, (tap, q_act, scores, mask)


def _site_backward(d_delta, cache, ctx: _SiteContext):
    tap, q_act, scores, mask = cache
    d_out = ctx.alpha * d_delta
    d_scores = (d_out @ ctx.values.swapaxes(1, 2)) * mask
    d_values = (scores * mask).swapaxes(1, 2) @ d_out
    d_q_act = d_scores @ ctx.k_act
    d_k_act = d_scores.swapaxes(1, 2) @ q_act
    d_tap = _act3_vjp(tap, d_q_act, ctx.phi)
    d_values = d_values + ctx.k_vjp(d_k_act)
    return d_tap, d_values


# ---------------------------------------------------------------------------
# block with one placement-configurable fusion site


def _block_forward(x, blk: DecoderBlock, ctx: _SiteContext, placement: PlacementConfig):
    q_from, add_to = placement.as_tuple()
    cache = {}

    def site(tap):
        delta, mask, fc = _site_forward(tap, ctx)
        cache["fusion"] = fc
        cache["mask"] = mask
        return delta

    delta = site(x) if q_from == "mhsa_in" else None
    h = x + delta if add_to == "mhsa_in" else x
    n1, cache["ln1"] = _ln_forward(h, blk.ln1_g, blk.ln1_b)
    attn, cache["attn"] = _attn_forward(n1, blk)
    if q_from == "mhsa_out":
        delta = site(attn)
    attn_inj = attn + delta if add_to == "mhsa_out" else attn
    h2 = h + attn_inj
    if q_from == "mlp_in":
        delta = site(h2)
    h2_inj = h2 + delta if add_to == "mlp_in" else h2
    n2, cache["ln2"] = _ln_forward(h2_inj, blk.ln2_g, blk.ln2_b)
    mlp_out, cache["mlp"] = _mlp_forward(n2, blk)
    if q_from == "mlp_out":
        delta = site(mlp_out)
    mlp_inj = mlp_out + delta if add_to == "mlp_out" else mlp_out
    return h2_inj + mlp_inj, cache


def _block_backward(d_out, cache, blk: DecoderBlock, ctx: _SiteContext, placement: PlacementConfig):
    """Returns (d_block_input, d_values_contribution)."""
    q_from, add_to = placement.as_tuple()
    fc = cache["fusion"]
    d_values = None
    pending_tap = None  # query-path gradient waiting for its tap point

    d_h2_inj = d_out
    d_mlp_inj = d_out
    if add_to == "mlp_out":
        d_tap, d_values = _site_backward(d_mlp_inj, fc, ctx)
        if q_from == "mlp_out":
            d_mlp = d_mlp_inj + d_tap
        else:  # query came from mlp_in
            d_mlp = d_mlp_inj
            pending_tap = d_tap
    else:
        d_mlp = d_mlp_inj
    d_n2 = _mlp_backward(d_mlp, cache["mlp"], blk)
    d_h2_inj = d_h2_inj + _ln_backward(d_n2, cache["ln2"], blk.ln2_g)

    if add_to == "mlp_in":  # legality forces q_from == mlp_in
        d_tap, d_values = _site_backward(d_h2_inj, fc, ctx)
        d_h2 = d_h2_inj + d_tap
    else:
        d_h2 = d_h2_inj
        if q_from == "mlp_in" and pending_tap is not None:
            d_h2 = d_h2 + pending_tap
            pending_tap = None

    d_h = d_h2
    d_attn_inj = d_h2
    if add_to == "mhsa_out":
        d_tap, d_values = _site_backward(d_attn_inj, fc, ctx)
        if q_from == "mhsa_out":
            d_attn = d_attn_inj + d_tap
        else:  # query came from mhsa_in
            d_attn = d_attn_inj
            pending_tap = d_tap
    else:
        d_attn = d_attn_inj
    d_n1 = _attn_backward(d_attn, cache["attn"], blk)
    d_h = d_h + _ln_backward(d_n1, cache["ln1"], blk.ln1_g)

    if add_to == "mhsa_in":  # legality forces q_from == mhsa_in
        d_tap, d_values = _site_backward(d_h, fc, ctx)
        d_x = d_h + d_tap
    else:
        d_x = d_h
        if q_from == "mhsa_in" and pending_tap is not None:
            d_x = d_x + pending_tap
    return d_x, d_values


# ---------------------------------------------------------------------------
# full model


@dataclass
class DecoderModel:
    config: ModelConfig
    embed: np.ndarray  # (vocab, d)
    blocks: list
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    w_head: np.ndarray  # (d, vocab)
    fusion: FusionParams

    @classmethod
    def build(cls, config: ModelConfig) -> "DecoderModel":
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        embed = rng.normal(0.0, 1.0, size=(config.vocab_size, d))
        blocks = [DecoderBlock.random(rng, d) for _ in range(config.n_blocks)]
        lnf_g = np.ones(d, dtype=FLOAT)
        lnf_b = np.zeros(d, dtype=FLOAT)
        w_head = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, config.vocab_size))
        fusion = FusionParams.init(
            rng,
            d_in=config.d_in,
            d_model=d,
            rank=config.rank,
            n_rows=config.n_rows,
            alpha=config.alpha,
            beta=config.beta,
            gamma=config.gamma,
            phi=config.phi,
            pos_scale=config.pos_scale,
            b_scale=config.b_scale,
        )
        return cls(config, embed, blocks, lnf_g, lnf_b, w_head, fusion)

    # --- parameter bookkeeping -------------------------------------------

    def base_tensors(self) -> dict[str, np.ndarray]:
        """Every frozen tensor, by stable name."""
        out = {"embed": self.embed, "lnf_g": self.lnf_g, "lnf_b": self.lnf_b, "w_head": self.w_head}
        for i, blk in enumerate(self.blocks):
            for name, t in blk.tensors().items():
                out[f"block{i}.{name}"] = t
        return out

    def trainable_tensors(self) -> dict[str, np.ndarray]:
        return self.fusion.trainable()

    def trainable_count(self) -> int:
        return self.fusion.trainable_count()

    # --- forward / backward ----------------------------------------------

    def _site_context(self, feats):
        f = self.fusion
        low_rank = feats @ f.a_feat
        values = f.beta * (low_rank @ f.b_feat) + f.pos_embed
        ctx = _SiteContext(
            values=values,
            k_act=_act3(values, f.phi),
            alpha=f.alpha,
            gamma=f.gamma,
            phi=f.phi,
        )
        return ctx, low_rank

    def _input_stream(self, tokens, cls_raw):
        if tokens.ndim != 2:
            raise ShapeError(f"tokens must be (batch, T), got {tokens.shape}")
        seq = tokens.shape[1] + 1
        if seq > self.config.max_seq:
            raise ValueError(f"sequence length {seq} exceeds max_seq {self.config.max_seq}")
        cls_low = cls_raw @ self.fusion.a_cls
        cls_emb = cls_low @ self.fusion.b_cls
        return np.concatenate([cls_emb, self.embed[tokens]], axis=1), cls_low

    def forward(self, tokens, feats, cls_raw, *, want_masks=False):
        """Logits (batch, T+1, vocab); optionally the per-block keep masks."""
        ctx, _ = self._site_context(feats)
        x, _ = self._input_stream(tokens, cls_raw)
        masks = []
        for blk in self.blocks:
            x, cache = _block_forward(x, blk, ctx, self.config.placement)
            if want_masks:
                masks.append(cache["mask"])
        nf, _ = _ln_forward(x, self.lnf_g, self.lnf_b)
        logits = nf @ self.w_head
        return (logits, masks) if want_masks else logits

    def loss_and_grads(self, tokens, feats, cls_raw, targets, answer_mask=None):
        """Mean cross-entropy over answer positions and fusion gradients.

        targets is (batch,) for the default answer position (the last), or
        (batch, T+1) with answer_mask marking which positions count.  An
        all-false mask contributes zero loss and zero gradients.
        """
        ctx, low_rank = self._site_context(feats)
        x0, cls_low = self._input_stream(tokens, cls_raw)
        x = x0
        caches = []
        for blk in self.blocks:
            x, cache = _block_forward(x, blk, ctx, self.config.placement)
            caches.append(cache)
        nf, lnf_cache = _ln_forward(x, self.lnf_g, self.lnf_b)
        logits = nf @ self.w_head

        b, s, vocab = logits.shape
        if answer_mask is None:
            answer_mask = np.zeros((b, s), dtype=bool)
            answer_mask[:, -1] = True
            full_targets = np.zeros((b, s), dtype=np.int64)
            full_targets[:, -1] = targets
        else:
            full_targets = targets
        count = int(np.sum(answer_mask))

        d_logits = np.zeros_like(logits)
        if count == 0:
            loss = 0.0
        else:
            sel = logits[answer_mask]  # (count, vocab)
            sel_targets = full_targets[answer_mask]
            shifted = sel - sel.max(axis=1, keepdims=True)
            logz = np.log(np.sum(np.exp(shifted), axis=1)) + sel.max(axis=1)
            loss = float(np.mean(logz - sel[np.arange(count), sel_targets]))
            probs = softmax_rows(sel)
            probs[np.arange(count), sel_targets] -= 1.0
            d_logits[answer_mask] = probs / count

        d_nf = d_logits @ self.w_head.T
        d_x = _ln_backward(d_nf, lnf_cache, self.lnf_g)
        d_values_total = np.zeros_like(ctx.values)
        for blk, cache in zip(reversed(self.blocks), reversed(caches)):
            d_x, d_values = _block_backward(d_x, cache, blk, ctx, self.config.placement)
            d_values_total += d_values

        f = self.fusion
        rank = f.b_feat.shape[0]
        d_model = f.b_feat.shape[1]
        d_pos_embed = d_values_total.sum(axis=0)
        d_embedded = f.beta * d_values_total
        d_b_feat = low_rank.reshape(-1, rank).T @ d_embedded.reshape(-1, d_model)
        d_low = d_embedded @ f.b_feat.T
        d_a_feat = feats.reshape(-1, feats.shape[-1]).T @ d_low.reshape(-1, rank)
        d_cls_emb = d_x[:, :1, :]
        d_b_cls = cls_low.reshape(-1, rank).T @ d_cls_emb.reshape(-1, d_model)
        d_cls_low = d_cls_emb @ f.b_cls.T
        d_a_cls = cls_raw.reshape(-1, cls_raw.shape[-1]).T @ d_cls_low.reshape(-1, rank)
        grads = ModelGrads(
            a_feat=d_a_feat,
            b_feat=d_b_feat,
            a_cls=d_a_cls,
            b_cls=d_b_cls,
            pos_embed=d_pos_embed,
        )
        return loss, grads

    def predict(self, tokens, feats, cls_raw) -> np.ndarray:
        """Greedy answer ids read from the final position."""
        logits = self.forward(tokens, feats, cls_raw)
        return np.argmax(logits[:, -1, :], axis=1)

    def query_tap(self, tokens, cls_raw) -> np.ndarray:
        """Block 0's fusion-site query input, (batch, T+1, d).

        Every legal placement reads its query before the block's first
        injection point, so this value never depends on the visual rows;
        it is what the site will compare keys against.
        """
        x0, _ = self._input_stream(tokens, cls_raw)
        blk = self.blocks[0]
        q_from = self.config.placement.query_from
        if q_from == "mhsa_in":
            return x0
        n1, _ = _ln_forward(x0, blk.ln1_g, blk.ln1_b)
        attn, _ = _attn_forward(n1, blk)
        if q_from == "mhsa_out":
            return attn
        h2 = x0 + attn
        if q_from == "mlp_in":
            return h2
        n2, _ = _ln_forward(h2, blk.ln2_g, blk.ln2_b)
        mlp_out, _ = _mlp_forward(n2, blk)
        return mlp_out


# ---------------------------------------------------------------------------
# checkpoints: one binary tensor file per weight plus a JSON manifest

MANIFEST_NAME = "manifest.json"


def _all_tensors(model: DecoderModel) -> dict[str, np.ndarray]:
    out = dict(model.base_tensors())
    for name, t in model.trainable_tensors().items():
        out[f"fusion.{name}"] = t
    return out


def save_checkpoint(directory, model: DecoderModel, *, step: int = 0, metrics: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = _all_tensors(model)
    files = {}
    for name, t in tensors.items():
        fname = name.replace(".", "_") + ".admt"
        save_tensor(directory / fname, t)
        files[name] = {"file": fname, "shape": list(t.shape)}
    manifest = {
        "config": model.config.to_dict(),
        "step": step,
        "metrics": metrics or {},
        "tensors": files,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return directory


def load_checkpoint(directory):
    """Rebuild (model, step, metrics) with bit-identical tensors."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    config = ModelConfig.from_dict(manifest["config"])
    model = DecoderModel.build(config)
    tensors = _all_tensors(model)
    for name, entry in manifest["tensors"].items():
        loaded = load_tensor(directory / entry["file"])
        if name not in tensors:
            raise ValueError(f"checkpoint tensor {name!r} has no slot in the model")
        if loaded.shape != tensors[name].shape:
            raise ShapeError(
                f"checkpoint tensor {name} has shape {loaded.shape}, expected {tensors[name].shape}"
            )
        tensors[name][...] = loaded
    return model, manifest["step"], manifest["metrics"]
