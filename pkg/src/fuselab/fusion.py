"""Parameter-free cross-attention with adaptive score masking.

The fusion path replaces the four learned projections of standard
cross-attention with a fixed activation applied to both sides of the
similarity product:

    scores = phi(X_text) @ phi(X_vis).T          (L, N)
    out    = drop(scores) @ X_vis                (L, d)

There is no softmax, so row sums are unconstrained and the lowest-scoring
visual columns of each row can simply be zeroed (`adaptive_mask`).  The
only trainable tensors are the two low-rank pairs that embed raw visual
features into the model width, and a per-row positional embedding added to
the embedded features.

`standard_xattn` implements the classical softmax cross-attention and is
kept as the reference the simplified path is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ACTIVATIONS,
    FLOAT,
    ShapeError,
    activation,
    activation_vjp,
    softmax_rows,
)


def drop_count(gamma: float, n: int) -> int:
    """Number of masked entries per row: floor(gamma * n) in float64."""
    return int(np.floor(FLOAT(gamma) * n))


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"drop ratio must lie in [0, 1), got {gamma}")


@dataclass
class DropDecision:
    """Binary keep/drop mask for one score matrix.

    mask is (L, N) with exactly k zeros per row, placed on the k smallest
    scores of that row (ties masked lowest column index first).
    """

    mask: np.ndarray
    k: int


@dataclass
class StandardXAttnParams:
    """Square projection weights of a classical cross-attention module."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    d_k: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be ({d}, {d}), got {w.shape}")
        if self.d_k <= 0:
            raise ValueError(f"d_k must be positive, got {self.d_k}")

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, d_k: int | None = None):
        std = 1.0 / np.sqrt(d)
        mats = [rng.normal(0.0, std, size=(d, d)) for _ in range(4)]
        return cls(*mats, d_k=d_k if d_k is not None else d)


@dataclass
class FusionParams:
    """Trainable state of the fusion branch plus its fixed hyperparameters.

    a_feat/b_feat: low-rank pair embedding patch features (d_in -> d_model);
    a_cls/b_cls: the analogous pair for the encoder's global token;
    pos_embed: per-visual-row learnable offset, one row per prompt row;
    alpha/beta: outer and visual weighting scalars; gamma: drop ratio;
    phi: name of the similarity projection (see tensor.ACTIVATIONS).
    """

    a_feat: np.ndarray
    b_feat: np.ndarray
    a_cls: np.ndarray
    b_cls: np.ndarray
    pos_embed: np.ndarray
    alpha: float = 0.1
    beta: float = 0.01
    gamma: float = 0.2
    phi: str = "silu"

    def __post_init__(self):
        _check_gamma(self.gamma)
        if self.phi not in ACTIVATIONS:
            raise ValueError(f"unknown projection {self.phi!r}; expected one of {ACTIVATIONS}")
        d_in, rank = self.a_feat.shape
        if self.b_feat.shape[0] != rank:
            raise ShapeError(f"a_feat {self.a_feat.shape} and b_feat {self.b_feat.shape} do not compose")
        d_model = self.b_feat.shape[1]
        if self.a_cls.shape[0] != d_in or self.b_cls.shape[1] != d_model:
            raise ShapeError("cls pair must map the same d_in to the same d_model as the feature pair")
        if self.a_cls.shape[1] != self.b_cls.shape[0]:
            raise ShapeError(f"a_cls {self.a_cls.shape} and b_cls {self.b_cls.shape} do not compose")
        if self.pos_embed.ndim != 2 or self.pos_embed.shape[1] != d_model:
            raise ShapeError(f"pos_embed must be (n_rows, {d_model}), got {self.pos_embed.shape}")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d_in: int,
        d_model: int,
        rank: int,
        n_rows: int,
        *,
        alpha: float = 0.1,
        beta: float = 0.01,
        gamma: float = 0.2,
        phi: str = "silu",
        pos_scale: float = 0.1,
        b_scale: float = 0.1,
    ) -> "FusionParams":
        """Fresh parameters: A pairs uniform(+-1/sqrt(d_in)), B pairs and
        the positional embedding uniform at caller-chosen scales.

        With b_scale=0 and pos_scale=0 the branch is an exact no-op at
        step 0 -- but that point is hostile to training: all-zero B is a
        stationary point for the A pairs, and an all-zero cls embedding
        sits on layer norm's zero-variance singularity, whose backward
        pass multiplies gradients by 1/sqrt(eps).  Training inits
        therefore start from small nonzero draws; the exact no-op state
        remains available by passing zero scales.
        """
        bound = 1.0 / np.sqrt(d_in)
        return cls(
            a_feat=rng.uniform(-bound, bound, size=(d_in, rank)),
            a_cls=rng.uniform(-bound, bound, size=(d_in, rank)),
            b_feat=rng.uniform(-b_scale, b_scale, size=(rank, d_model)),
            b_cls=rng.uniform(-b_scale, b_scale, size=(rank, d_model)),
            pos_embed=rng.uniform(-pos_scale, pos_scale, size=(n_rows, d_model)),
            alpha=alpha,
            beta=beta,
            gamma=gamma,
            phi=phi,
        )

    @property
    def n_rows(self) -> int:
        return self.pos_embed.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        """Named trainable tensors; the scalars are fixed hyperparameters."""
        return {
            "a_feat": self.a_feat,
            "b_feat": self.b_feat,
            "a_cls": self.a_cls,
            "b_cls": self.b_cls,
            "pos_embed": self.pos_embed,
        }

    def trainable_count(self) -> int:
        return sum(t.size for t in self.trainable().values())


def standard_xattn(x_text: np.ndarray, x_vis: np.ndarray, p: StandardXAttnParams) -> np.ndarray:
    """Classical cross-attention with text queries and visual keys/values.

    softmax((X_text Wq)(X_vis Wk)^T / sqrt(d_k)) (X_vis Wv) Wo^T
    """
    if x_text.ndim != 2 or x_vis.ndim != 2:
        raise ShapeError(f"expected rank-2 inputs, got {x_text.shape} and {x_vis.shape}")
    d = p.w_q.shape[0]
    if x_text.shape[1] != d or x_vis.shape[1] != d:
        raise ShapeError(f"inputs must have width {d}, got {x_text.shape} and {x_vis.shape}")
    q = x_text @ p.w_q
    k = x_vis @ p.w_k
    v = x_vis @ p.w_v
    weights = softmax_rows(q @ k.T / np.sqrt(FLOAT(p.d_k)))
    return (weights @ v) @ p.w_o.T


def adaptive_mask(scores: np.ndarray, gamma: float) -> DropDecision:
    """Per-row keep/drop decision: zero out the floor(gamma*N) smallest scores.

    Ties are resolved toward the lower column index, via a stable argsort
    on the score values.  The surviving entries pass through unchanged; no
    renormalisation happens because the scores were never normalised.
    """
    _check_gamma(gamma)
    if scores.ndim != 2:
        raise ShapeError(f"scores must be rank 2, got shape {scores.shape}")
    n_rows, n_cols = scores.shape
    k = drop_count(gamma, n_cols)
    mask = np.ones((n_rows, n_cols), dtype=FLOAT)
    if k > 0:
        order = np.argsort(scores, axis=1, kind="stable")
        mask[np.arange(n_rows)[:, None], order[:, :k]] = 0.0
    return DropDecision(mask=mask, k=k)


def param_free_xattn(
    x_text: np.ndarray,
    x_vis: np.ndarray,
    phi: str = "silu",
    gamma: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, DropDecision]:
    """Projection-free cross-attention over already-embedded visual rows.

    Returns (out, scores, decision) where scores = phi(x_text) @ phi(x_vis).T
    and out = (scores * mask) @ x_vis.
    """
    if x_text.ndim != 2 or x_vis.ndim != 2:
        raise ShapeError(f"expected rank-2 inputs, got {x_text.shape} and {x_vis.shape}")
    if x_text.shape[1] != x_vis.shape[1]:
        raise ShapeError(f"feature widths differ: {x_text.shape} vs {x_vis.shape}")
    scores = activation(x_text, phi) @ activation(x_vis, phi).T
    decision = adaptive_mask(scores, gamma)
    out = (scores * decision.mask) @ x_vis
    return out, scores, decision


def embed_visual(x_raw: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Low-rank embedding (x_raw @ a) @ b, kept factored for O(N d' r + N r d)."""
    if x_raw.ndim != 2:
        raise ShapeError(f"x_raw must be rank 2, got shape {x_raw.shape}")
    if x_raw.shape[1] != a.shape[0] or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot chain {x_raw.shape} @ {a.shape} @ {b.shape}")
    return (x_raw @ a) @ b


@dataclass
class FuseCache:
    """Forward intermediates needed by fuse_backward."""

    params: FusionParams
    x_text: np.ndarray
    x_vis_raw: np.ndarray
    low_rank: np.ndarray  # x_vis_raw @ a_feat, (N, r)
    values: np.ndarray  # beta * embedded + pos_embed, (N, d)
    q_act: np.ndarray
    k_act: np.ndarray
    scores: np.ndarray
    mask: np.ndarray


@dataclass
class FusionGrads:
    """Gradients of a scalar loss w.r.t. the fusion inputs and trainables."""

    a_feat: np.ndarray
    b_feat: np.ndarray
    pos_embed: np.ndarray
    x_text: np.ndarray


def fuse_forward(
    x_text: np.ndarray,
    x_vis_raw: np.ndarray,
    p: FusionParams,
) -> tuple[np.ndarray, DropDecision, FuseCache]:
    """Full fusion pipeline with cached intermediates.

    delta = alpha * param_free_xattn(x_text, beta * embed(x_vis_raw) + E)
    where embed is the a_feat/b_feat low-rank pair.  beta scales only the
    embedded features; the positional embedding enters unscaled.
    """
    if x_vis_raw.ndim != 2 or x_vis_raw.shape[0] != p.n_rows:
        raise ShapeError(
            f"x_vis_raw must have {p.n_rows} rows to match pos_embed, got shape {x_vis_raw.shape}"
        )
    low_rank = x_vis_raw @ p.a_feat
    values = p.beta * (low_rank @ p.b_feat) + p.pos_embed
    q_act = activation(x_text, p.phi)
    k_act = activation(values, p.phi)
    scores = q_act @ k_act.T
    decision = adaptive_mask(scores, p.gamma)
    delta = p.alpha * ((scores * decision.mask) @ values)
    cache = FuseCache(
        params=p,
        x_text=x_text,
        x_vis_raw=x_vis_raw,
        low_rank=low_rank,
        values=values,
        q_act=q_act,
        k_act=k_act,
        scores=scores,
        mask=decision.mask,
    )
    return delta, decision, cache


def fuse(
    x_text: np.ndarray,
    x_vis_raw: np.ndarray,
    p: FusionParams,
) -> tuple[np.ndarray, DropDecision]:
    """As fuse_forward, without keeping the backward cache."""
    delta, decision, _ = fuse_forward(x_text, x_vis_raw, p)
    return delta, decision


def fuse_backward(upstream_grad: np.ndarray, cache: FuseCache) -> FusionGrads:
    """Analytic gradients of the fusion delta against a cached forward.

    The drop mask is treated as a constant: kept score entries pass the
    gradient straight through, dropped entries contribute exactly zero.
    """
    if not isinstance(cache, FuseCache):
        raise ValueError("fuse_backward needs the FuseCache from fuse_forward")
    p = cache.params
    if upstream_grad.shape != (cache.x_text.shape[0], cache.values.shape[1]):
        raise ShapeError(
            f"upstream grad shape {upstream_grad.shape} does not match delta "
            f"({cache.x_text.shape[0]}, {cache.values.shape[1]})"
        )
    d_out = p.alpha * upstream_grad
    s_masked = cache.scores * cache.mask
    d_scores = (d_out @ cache.values.T) * cache.mask
    d_values = s_masked.T @ d_out  # value path
    d_q_act = d_scores @ cache.k_act
    d_k_act = d_scores.T @ cache.q_act
    d_x_text = activation_vjp(cache.x_text, d_q_act, p.phi)
    d_values = d_values + activation_vjp(cache.values, d_k_act, p.phi)  # key path
    d_pos_embed = d_values
    d_embedded = p.beta * d_values
    d_b_feat = cache.low_rank.T @ d_embedded
    d_a_feat = cache.x_vis_raw.T @ (d_embedded @ p.b_feat.T)
    return FusionGrads(
        a_feat=d_a_feat,
        b_feat=d_b_feat,
        pos_embed=d_pos_embed,
        x_text=d_x_text,
    )
