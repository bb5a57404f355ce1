"""Command-line harness: complexity reports, gradient checks, training,
ablation sweeps, drop heatmaps, and prompt dumps.

Every command exits 0 on success and 1 with a structured JSON error on
stderr when something fails; argparse usage mistakes exit 2.  Setting
the ADEMVL_SEED environment variable overrides the seed a config file
or default would otherwise supply.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import gen_dataset
from .experiment import (
    ExperimentConfig,
    ablate,
    drop_heatmap,
    expected_mean_freq,
    gradcheck_report,
    heatmap_csv,
    loss_decreased,
    markdown_table,
    projection_ordering_note,
    train_and_save,
)
from .flops import flops
from .model import load_checkpoint
from .prompt import build_prompt, save_prompt, synthetic_encoder
from .tensor import ShapeError

ENV_SEED = "ADEMVL_SEED"


def _env_seed() -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"{ENV_SEED} must be an integer, got {raw!r}") from exc


def _cmd_flops(args) -> int:
    report = flops(args.L, args.N, args.d, bench=args.bench)
    if args.json:
        print(report.to_json())
    else:
        print(report.table())
    return 0


def _cmd_gradcheck(args) -> int:
    seed = _env_seed() if _env_seed() is not None else args.seed
    result = gradcheck_report(seed=seed, trials=args.trials)
    for row in result["trials"]:
        dims = f"L={row['L']} N={row['N']} d_in={row['d_in']} r={row['rank']} d={row['d']}"
        print(
            f"trial {row['trial']:3d}  {dims:32s} gamma={row['gamma']:.1f} "
            f"phi={row['phi']:13s} max_rel_err={row['max_rel_err']:.3e}"
        )
    verdict = "PASS" if result["ok"] else "FAIL"
    print(f"gradcheck {verdict}: max rel err {result['max_rel_err']:.3e} (tolerance {result['tolerance']:.0e})")
    if not result["ok"]:
        raise RuntimeError(f"gradient check failed: max rel err {result['max_rel_err']:.3e}")
    return 0


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        config = ExperimentConfig()
    else:
        config = ExperimentConfig.from_json(Path(path).read_text())
    env = _env_seed()
    if env is not None:
        config = replace(config, seed=env)
    return config


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    out_dir = Path(args.out) if args.out else Path("runs") / f"train-seed{config.seed}"
    report = train_and_save(config, out_dir)
    direction = "decreased" if loss_decreased(report.losses) else "did NOT decrease"
    print(f"final test accuracy   {report.final_accuracy:.4f}")
    print(f"loss                  {report.losses[0]:.4f} -> {report.losses[-1]:.4f} ({direction})")
    print(f"drop mask mean keep   {report.heatmaps.mean_freq:.6f}")
    print(f"wall clock            {report.wall_clock_s:.1f} s")
    print(f"artifacts             {out_dir}")
    return 0


def _cmd_ablate(args) -> int:
    base = _load_config(args.config)
    if args.steps is not None:
        base = replace(base, steps=args.steps)
    env = _env_seed()
    base_seed = env if env is not None else args.seed
    reports = ablate(args.axis, base_seed=base_seed, base_config=base)
    table = markdown_table(reports)
    print(table, end="")
    if args.axis == "projection":
        print(projection_ordering_note(reports))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = [r.to_dict() for r in reports]
        (out_dir / f"ablate_{args.axis}.json").write_text(json.dumps(payload, indent=2))
        (out_dir / f"ablate_{args.axis}.md").write_text(table)
        print(f"wrote {out_dir}/ablate_{args.axis}.json")
    failures = [r for r in reports if not r.ok]
    if failures:
        print(f"{len(failures)} of {len(reports)} runs failed", file=sys.stderr)
    return 0


def _cmd_heatmap(args) -> int:
    model, step, metrics = load_checkpoint(args.checkpoint)
    cfg = model.config
    channels = cfg.vocab_size - 32  # vocab = colors + 16 row + 16 col tokens
    _, test_set = gen_dataset(cfg.seed, n_train=1, n_test=args.samples, channels=channels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = drop_heatmap(model, test_set, encoder_seed=cfg.seed, n_samples=args.samples)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    expected = expected_mean_freq(cfg.gamma, cfg.n_rows)
    print(f"checkpoint step {step}  metrics {metrics}")
    print(f"mean keep frequency {report.mean_freq:.12f} (expected {expected:.12f})")
    if report.queried_top_decile_rate is not None:
        print(f"queried cell in top decile on {report.queried_top_decile_rate:.1%} of samples")
    for scale, grid in report.freq.items():
        print(f"scale {scale}: grid {grid.shape[0]}x{grid.shape[1]}, max {grid.max():.4f}, min {grid.min():.4f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for scale, grid in report.freq.items():
            (out_dir / f"heatmap_scale{scale}.csv").write_text(heatmap_csv(grid))
        for scale, grid in report.normalized.items():
            (out_dir / f"heatmap_scale{scale}_normalized.csv").write_text(heatmap_csv(grid))
        (out_dir / "heatmap.json").write_text(json.dumps(report.to_dict(), indent=2))
        print(f"wrote {out_dir}")
    return 0


def _cmd_dump_prompt(args) -> int:
    env = _env_seed()
    seed = env if env is not None else args.seed
    rng = np.random.default_rng(seed)
    image = np.eye(args.channels)[rng.integers(0, args.channels, size=(16, 16))]
    enc = synthetic_encoder(image, args.d_in, seed)
    prompt = build_prompt(enc, scales=tuple(args.scales), pool=args.pool)
    print(f"seed {seed}: {prompt.n_rows} rows over scales {prompt.scales}, pool {prompt.pool}")
    for scale in prompt.scales:
        rows = prompt.rows_for_scale(scale)
        norms = np.linalg.norm(prompt.features[rows], axis=1)
        print(f"  scale {scale}: rows {rows[0]}..{rows[-1]}, |row| mean {norms.mean():.3f} max {norms.max():.3f}")
    print(f"  cls |row| {np.linalg.norm(enc.cls):.3f}")
    if args.out:
        save_prompt(args.out, prompt)
        print(f"wrote {args.out} (+ .json sidecar)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuselab",
        description="Train and dissect parameter-free visual fusion in a frozen toy decoder.",
        epilog=f"Set {ENV_SEED} to override the seed a config file would supply.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flops", help="exact complexity of both attention kernels")
    p.add_argument("--L", type=int, required=True, help="text rows")
    p.add_argument("--N", type=int, required=True, help="visual rows")
    p.add_argument("--d", type=int, required=True, help="model width")
    p.add_argument("--bench", action="store_true", help="also micro-time both kernels")
    p.add_argument("--json", action="store_true", help="emit JSON instead of the table")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("gradcheck", help="analytic vs numeric fusion gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train", help="one full training run with artifacts")
    p.add_argument("--config", help="JSON config file (defaults used when omitted)")
    p.add_argument("--out", help="artifact directory (default runs/train-seed<seed>)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="sweep one configuration axis")
    p.add_argument("--axis", required=True, choices=["projection", "placement", "pooling", "alpha", "beta", "gamma"])
    p.add_argument("--config", help="base JSON config for every run in the sweep")
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed+i")
    p.add_argument("--steps", type=int, help="override training steps for quick sweeps")
    p.add_argument("--out", help="directory for the JSON/Markdown reports")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("heatmap", help="drop-frequency grids from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--out", help="directory for CSV/JSON grids")
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("dump-prompt", help="build and describe one visual prompt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--d-in", type=int, default=32, dest="d_in")
    p.add_argument("--scales", type=int, nargs="+", default=[1, 2])
    p.add_argument("--pool", default="avg", choices=["avg", "max"])
    p.add_argument("--out", help="write the features + metadata sidecar here")
    p.set_defaults(func=_cmd_dump_prompt)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ShapeError, RuntimeError, OSError, KeyError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
