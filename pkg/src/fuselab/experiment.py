"""Experiment harness: single runs, ablation sweeps, drop heatmaps, reports.

A run is a pure function of its config: build the datasets and the
model from the embedded seed, train the fusion tensors, then measure
accuracy, complexity, and which visual rows the masks kept.  Sweeps
enumerate fixed configuration sets along one axis, derive one seed per
configuration, tolerate individual failures, and sort the survivors by
accuracy.  Everything serializes to JSON, Markdown, or CSV.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import GridVqaDataset, encode_batch, gen_dataset, vocab_size
from .flops import FlopsReport, flops
from .fusion import FusionParams, drop_count, fuse_backward, fuse_forward
from .model import DecoderModel, ModelConfig, legal_placements, save_checkpoint
from .prompt import GRID
from .tensor import ACTIVATIONS
from .train import BASE_LR, KEY_GAIN, align_visual_keys, train_model

HEATMAP_SAMPLES = 256


@dataclass
class ExperimentConfig:
    """One training run, fully determined: architecture, task, optimizer."""

    # architecture / fusion
    n_blocks: int = 2
    d_model: int = 64
    d_in: int = 32
    rank: int = 8
    max_seq: int = 8
    placement: tuple = ("mlp_in", "mlp_out")
    alpha: float = 0.1
    beta: float = 0.01
    gamma: float = 0.2
    phi: str = "silu"
    scales: tuple = (1, 2)
    pool: str = "avg"
    pos_scale: float = 0.3
    b_scale: float = 1.0
    # task
    channels: int = 8
    n_train: int = 4096
    n_test: int = 1024
    # optimization
    steps: int = 2000
    batch_size: int = 64
    base_lr: float = BASE_LR
    align_keys: bool = True
    key_gain: float = KEY_GAIN
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.placement, list):
            self.placement = tuple(self.placement)
        self.scales = tuple(int(s) for s in self.scales)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_blocks=self.n_blocks,
            d_model=self.d_model,
            d_in=self.d_in,
            rank=self.rank,
            vocab_size=vocab_size(self.channels),
            max_seq=self.max_seq,
            placement=self.placement,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            phi=self.phi,
            scales=self.scales,
            pool=self.pool,
            pos_scale=self.pos_scale,
            b_scale=self.b_scale,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["placement"] = list(self.placement)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}; expected a subset of {sorted(known)}")
        return cls(**d)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# drop-frequency heatmaps


@dataclass
class HeatmapReport:
    """How often each visual row survived the mask, viewed per scale grid.

    freq = kept count / (text positions x blocks x samples), so each
    grid's entries lie in [0, 1] and the mean over all rows equals
    1 - floor(gamma*N)/N exactly.  `normalized` rescales each grid by
    its own maximum for display.
    """

    gamma: float
    denominator: int
    counts: dict  # scale -> (side, side) int array
    freq: dict  # scale -> (side, side) float array
    normalized: dict  # scale -> (side, side) float array
    mean_freq: float
    queried_top_decile_rate: float | None  # None when scale 1 is absent

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "denominator": self.denominator,
            "mean_freq": self.mean_freq,
            "queried_top_decile_rate": self.queried_top_decile_rate,
            "grids": {
                str(scale): {
                    "counts": self.counts[scale].tolist(),
                    "freq": self.freq[scale].tolist(),
                    "normalized": self.normalized[scale].tolist(),
                }
                for scale in self.counts
            },
        }


def drop_heatmap(
    model: DecoderModel,
    dataset: GridVqaDataset,
    *,
    encoder_seed: int | None = None,
    n_samples: int = HEATMAP_SAMPLES,
    batch_size: int = 128,
) -> HeatmapReport:
    """Count kept visual rows over text query positions, blocks, samples.

    Only genuine text positions count as queries -- the prepended global
    row is excluded.  With gamma = 0 nothing is ever dropped; that
    degenerate all-ones result is reported with a warning.
    """
    cfg = model.config
    if encoder_seed is None:
        encoder_seed = cfg.seed
    if cfg.gamma == 0.0:
        warnings.warn("gamma is 0: nothing is dropped, every frequency is 1", stacklevel=2)
    n_samples = min(n_samples, len(dataset))
    if n_samples == 0:
        raise ValueError("heatmap needs at least one sample")
    n_rows = cfg.n_rows
    row_counts = np.zeros(n_rows, dtype=np.int64)
    fine_offset = 0  # where the scale-1 rows sit in the row stack
    for s in cfg.scales:
        if s == 1:
            break
        fine_offset += (GRID // s) ** 2
    fine_rows = GRID * GRID if 1 in cfg.scales else 0
    top_decile_hits = 0
    decile_rank = int(np.ceil(0.1 * fine_rows)) if fine_rows else 0
    text_positions = blocks = 0

    for start in range(0, n_samples, batch_size):
        idx = np.arange(start, min(start + batch_size, n_samples))
        tokens, feats, cls_raw, _ = encode_batch(
            dataset, idx, cfg.d_in, encoder_seed, scales=cfg.scales, pool=cfg.pool
        )
        _, masks = model.forward(tokens, feats, cls_raw, want_masks=True)
        kept = np.stack([m[:, 1:, :] for m in masks])  # (blocks, B, text, N)
        blocks, _, text_positions, _ = kept.shape
        row_counts += kept.sum(axis=(0, 1, 2)).astype(np.int64)
        if fine_rows:
            per_sample = kept.sum(axis=(0, 2))[:, fine_offset : fine_offset + fine_rows]
            cells = dataset.queries[idx, 0] * GRID + dataset.queries[idx, 1]
            own = per_sample[np.arange(len(idx)), cells]
            rank = np.sum(per_sample > own[:, None], axis=1)  # rows strictly ahead
            top_decile_hits += int(np.sum(rank < decile_rank))

    denominator = text_positions * blocks * n_samples
    freq = row_counts / denominator
    counts_by_scale, freq_by_scale, norm_by_scale = {}, {}, {}
    offset = 0
    for s in cfg.scales:
        side = GRID // s
        block = slice(offset, offset + side * side)
        counts_by_scale[s] = row_counts[block].reshape(side, side)
        grid = freq[block].reshape(side, side)
        freq_by_scale[s] = grid
        peak = grid.max()
        norm_by_scale[s] = grid / peak if peak > 0 else np.zeros_like(grid)
        offset += side * side
    return HeatmapReport(
        gamma=cfg.gamma,
        denominator=denominator,
        counts=counts_by_scale,
        freq=freq_by_scale,
        normalized=norm_by_scale,
        mean_freq=float(freq.mean()),
        queried_top_decile_rate=(top_decile_hits / n_samples) if fine_rows else None,
    )


def expected_mean_freq(gamma: float, n_rows: int) -> float:
    """Conservation constant: every query keeps exactly N - floor(gamma*N) rows."""
    return 1.0 - drop_count(gamma, n_rows) / n_rows


def heatmap_csv(grid: np.ndarray) -> str:
    return "\n".join(",".join(f"{v:.6f}" for v in row) for row in np.asarray(grid, dtype=float)) + "\n"


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunReport:
    """Everything one training run produced, reproducible from `config`."""

    config: dict
    seed: int
    label: str = ""
    final_accuracy: float = float("nan")
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flops: FlopsReport | None = None
    heatmaps: HeatmapReport | None = None
    wall_clock_s: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "label": self.label,
            "final_accuracy": self.final_accuracy,
            "losses": np.asarray(self.losses).tolist(),
            "flops": self.flops.to_dict() if self.flops is not None else None,
            "heatmaps": self.heatmaps.to_dict() if self.heatmaps is not None else None,
            "wall_clock_s": self.wall_clock_s,
            "error": self.error,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def loss_decreased(losses) -> bool:
    """Mean loss over the last tenth of training below the first tenth."""
    losses = np.asarray(losses)
    chunk = max(1, len(losses) // 10)
    return float(np.mean(losses[-chunk:])) < float(np.mean(losses[:chunk]))


def _run(config: ExperimentConfig, label: str, heatmap_samples: int):
    t0 = time.perf_counter()
    train_set, test_set = gen_dataset(config.seed, config.n_train, config.n_test, config.channels)
    model = DecoderModel.build(config.model_config())
    if config.align_keys:
        align_visual_keys(model, channels=config.channels, gain=config.key_gain)
    result = train_model(
        model,
        train_set,
        test_set,
        steps=config.steps,
        batch_size=config.batch_size,
        seed=config.seed,
        base_lr=config.base_lr,
    )
    seq_len = 3  # global row + the two question tokens
    report = RunReport(
        config=config.to_dict(),
        seed=config.seed,
        label=label,
        final_accuracy=result.final_accuracy,
        losses=result.losses,
        flops=flops(seq_len, model.config.n_rows, config.d_model),
        heatmaps=drop_heatmap(model, test_set, encoder_seed=config.seed, n_samples=heatmap_samples),
        wall_clock_s=time.perf_counter() - t0,
    )
    return report, model


def run_experiment(
    config: ExperimentConfig,
    *,
    label: str = "",
    heatmap_samples: int = HEATMAP_SAMPLES,
) -> RunReport:
    """Train one model per the config; report accuracy, cost, kept rows."""
    report, _ = _run(config, label, heatmap_samples)
    return report


def rerun(report: RunReport) -> RunReport:
    """Replay a report from its embedded config; metrics must reproduce."""
    return run_experiment(ExperimentConfig.from_dict(report.config), label=report.label)


def train_and_save(config: ExperimentConfig, out_dir, *, label: str = "") -> RunReport:
    """Run one experiment and write every artifact under out_dir.

    Emits report.json, report.md, per-scale heatmap CSVs (raw frequency
    and display-normalized), and a checkpoint/ directory that the
    heatmap command can reload.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report, model = _run(config, label, HEATMAP_SAMPLES)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.md").write_text(markdown_table([report]))
    for scale, grid in report.heatmaps.freq.items():
        (out_dir / f"heatmap_scale{scale}.csv").write_text(heatmap_csv(grid))
    for scale, grid in report.heatmaps.normalized.items():
        (out_dir / f"heatmap_scale{scale}_normalized.csv").write_text(heatmap_csv(grid))
    save_checkpoint(
        out_dir / "checkpoint",
        model,
        step=config.steps,
        metrics={"final_accuracy": report.final_accuracy, "label": label},
    )
    return report


# ---------------------------------------------------------------------------
# ablation sweeps


def _pooling_rows():
    rows = [((1,), "avg"), ((2,), "avg"), ((4,), "avg"), ((2, 4), "avg"),
            ((1, 4), "avg"), ((1, 2), "avg"), ((1, 2, 4), "avg"), ((1, 2), "max")]
    return [({"scales": scales, "pool": pool}, f"scales={scales} pool={pool}") for scales, pool in rows]


ABLATION_AXES = {
    "projection": lambda: [({"phi": kind}, f"phi={kind}") for kind in ACTIVATIONS],
    "placement": lambda: [
        ({"placement": p.as_tuple()}, f"{p.query_from}->{p.add_to}") for p in legal_placements()
    ],
    "pooling": _pooling_rows,
    "alpha": lambda: [({"alpha": v}, f"alpha={v}") for v in (0.01, 0.05, 0.1, 0.2, 0.5)],
    "beta": lambda: [({"beta": v}, f"beta={v}") for v in (0.001, 0.005, 0.01, 0.05, 0.1)],
    "gamma": lambda: [({"gamma": v}, f"gamma={v}") for v in (0.0, 0.1, 0.2, 0.3, 0.4)],
}


def ablate(
    axis: str,
    *,
    base_seed: int = 0,
    base_config: ExperimentConfig | None = None,
    heatmap_samples: int = HEATMAP_SAMPLES,
) -> list[RunReport]:
    """Sweep one axis over its fixed configuration set.

    Each configuration trains with seed base_seed + index.  A failing run
    is recorded with its error and the sweep continues.  Reports come
    back sorted by accuracy, failures last.
    """
    if axis not in ABLATION_AXES:
        raise ValueError(f"axis must be one of {sorted(ABLATION_AXES)}, got {axis!r}")
    base = base_config if base_config is not None else ExperimentConfig()
    reports = []
    for index, (overrides, label) in enumerate(ABLATION_AXES[axis]()):
        config = replace(base, seed=base_seed + index, **overrides)
        try:
            report = run_experiment(config, label=label, heatmap_samples=heatmap_samples)
        except Exception as exc:  # noqa: BLE001 -- sweep must survive bad rows
            report = RunReport(config=config.to_dict(), seed=config.seed, label=label, error=f"{type(exc).__name__}: {exc}")
        reports.append(report)
    return sorted(reports, key=lambda r: (not r.ok, -(r.final_accuracy if r.ok else 0.0)))


def projection_ordering_note(reports) -> str:
    """Directional observation on the projection sweep, logged not asserted."""
    acc = {r.label.split("=", 1)[1]: r.final_accuracy for r in reports if r.ok}
    needed = ("silu", "identity", "softmax_rows")
    if any(k not in acc for k in needed):
        return "projection ordering: incomplete sweep, no comparison"
    verdict = "holds" if acc["silu"] >= acc["identity"] >= acc["softmax_rows"] else "does not hold"
    detail = ", ".join(f"{k}={acc[k]:.4f}" for k in needed)
    return f"projection ordering silu >= identity >= softmax_rows {verdict} ({detail})"


def markdown_table(reports) -> str:
    """One row per report: label, accuracy, loss endpoints, wall clock."""
    lines = [
        "| label | accuracy | first loss | last loss | wall s | status |",
        "|---|---|---|---|---|---|",
    ]
    for r in reports:
        if r.ok and len(r.losses):
            first, last = f"{r.losses[0]:.4f}", f"{r.losses[-1]:.4f}"
        else:
            first = last = "-"
        acc = f"{r.final_accuracy:.4f}" if r.ok else "-"
        status = "ok" if r.ok else r.error
        lines.append(f"| {r.label or 'run'} | {acc} | {first} | {last} | {r.wall_clock_s:.1f} | {status} |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gradient spot-checks for the CLI


def _central_diff(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        keep = arr[i]
        arr[i] = keep + h
        up = f()
        arr[i] = keep - h
        down = f()
        arr[i] = keep
        grad[i] = (up - down) / (2.0 * h)
    return grad


def gradcheck_report(seed: int = 0, trials: int = 20, tolerance: float = 1e-4) -> dict:
    """Analytic fusion gradients vs central differences on random instances.

    Each trial draws small dims, a phi, and gamma alternating over
    {0, 0.2}, then compares every input gradient of the fused delta
    under a fixed random upstream weighting.
    """
    rows = []
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, trial)))
        dims = {
            "L": int(rng.integers(2, 7)),
            "N": int(rng.integers(2, 7)),
            "d_in": int(rng.integers(2, 7)),
            "rank": int(rng.integers(1, 4)),
            "d": int(rng.integers(2, 9)),
        }
        gamma = 0.0 if trial % 2 == 0 else 0.2
        phi = ACTIVATIONS[trial % len(ACTIVATIONS)]
        params = FusionParams.init(
            rng,
            d_in=dims["d_in"],
            d_model=dims["d"],
            rank=dims["rank"],
            n_rows=dims["N"],
            gamma=gamma,
            phi=phi,
            pos_scale=0.3,
            b_scale=0.3,
        )
        x_text = rng.normal(size=(dims["L"], dims["d"]))
        x_vis = rng.normal(size=(dims["N"], dims["d_in"]))
        weighting = rng.normal(size=(dims["L"], dims["d"]))

        delta, _, cache = fuse_forward(x_text, x_vis, params)
        grads = fuse_backward(weighting, cache)

        def objective():
            out, _ = fuse_forward(x_text, x_vis, params)[:2]
            return float(np.sum(weighting * out))

        worst = 0.0
        by_tensor = {}
        for name, analytic, arr in (
            ("a_feat", grads.a_feat, params.a_feat),
            ("b_feat", grads.b_feat, params.b_feat),
            ("pos_embed", grads.pos_embed, params.pos_embed),
            ("x_text", grads.x_text, x_text),
        ):
            numeric = _central_diff(objective, arr)
            denom = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
            err = float(np.max(np.abs(numeric - analytic)) / denom)
            by_tensor[name] = err
            worst = max(worst, err)
        rows.append({"trial": trial, **dims, "gamma": gamma, "phi": phi, "max_rel_err": worst, "by_tensor": by_tensor})
    worst_overall = max(r["max_rel_err"] for r in rows)
    return {
        "trials": rows,
        "tolerance": tolerance,
        "max_rel_err": worst_overall,
        "ok": bool(worst_overall <= tolerance),
    }
