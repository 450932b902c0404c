"""Command-line experiment harness.

Subcommands: ``gen`` (write a task's dataset as TGRD files), ``train`` (one
or more seeds of one optimizer config), ``ablate`` (the composition-order
matrix), ``theory`` (verification suites), ``memory`` (analytic state
counts), ``report`` (re-rank existing records).  A TOML or JSON config file
may supply any flag's value; explicit command-line flags win.  Exit codes:
0 success, 2 validation error, 3 non-finite loss abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import tgrd_io
from .memory import memory_count, matched_rank_parameter_counts
from .optim import ORDERS, PRECISIONS, OptimizerConfig, ranks_from_ratio
from .report import (
    compare,
    read_records_csv,
    write_ranking_csv,
    write_records_csv,
    write_summary_json,
)
from .task import SpectralTask, generate_task
from .theory import (
    build_mode_operator,
    check_contraction,
    check_stable_rank_bound,
    corollary_rank_floor,
    projection_rank_comparison,
    random_parametric_problem,
    simulate_parametric_sgd,
    write_bound_csv,
    write_json_summary,
)
from .train import NanLossError, run_experiment

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NAN = 3

_TASK_KEYS = ("grid", "c_in", "c_out", "modes", "dim", "n_train", "n_test", "noise",
              "target_kind", "spike_count", "spike_scale", "channel_rank", "task_seed")


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".json"):
        return json.loads(text)
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    raise ValueError(f"config file must be .toml or .json, got {path!r}")


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """File values fill in flags the user did not set explicitly."""
    if not getattr(args, "config", None):
        return args
    file_values = _load_config_file(args.config)
    explicit = {
        a.dest for a in parser._actions
        if any(opt in sys.argv for opt in a.option_strings)
    }
    for key, value in file_values.items():
        if key not in vars(args):
            raise ValueError(f"unknown config key {key!r}")
        if key not in explicit:
            setattr(args, key, value)
    return args


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--c-in", dest="c_in", type=int, default=4)
    p.add_argument("--c-out", dest="c_out", type=int, default=4)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--dim", type=int, default=2, choices=(1, 2))
    p.add_argument("--n-train", dest="n_train", type=int, default=128)
    p.add_argument("--n-test", dest="n_test", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--target-kind", dest="target_kind", default="smooth",
                   choices=("smooth", "spiky"))
    p.add_argument("--spike-count", dest="spike_count", type=int, default=8)
    p.add_argument("--spike-scale", dest="spike_scale", type=float, default=10.0)
    p.add_argument("--channel-rank", dest="channel_rank", type=int, default=None)
    p.add_argument("--task-seed", dest="task_seed", type=int, default=0)


def _task_from_args(args: argparse.Namespace) -> SpectralTask:
    return SpectralTask(
        grid=args.grid, c_in=args.c_in, c_out=args.c_out, modes=args.modes, dim=args.dim,
        n_train=args.n_train, n_test=args.n_test, noise=args.noise,
        target_kind=args.target_kind, spike_count=args.spike_count,
        spike_scale=args.spike_scale, channel_rank=args.channel_rank, seed=args.task_seed,
    )


def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--optimizer", default="robust", choices=("adam", "robust", "galore"))
    p.add_argument("--order", default="us_lr", choices=ORDERS)
    p.add_argument("--rank", type=float, default=0.20,
                   help="low-rank budget as a core-element fraction in (0,1]")
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--strategy", default="topk", choices=("topk", "randk", "probk"))
    p.add_argument("--precision", default="full", choices=PRECISIONS)
    p.add_argument("--gap", type=int, default=40, help="refresh period T in steps")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=0.0)
    p.add_argument("--matricize-dim", dest="matricize_dim", type=int, default=1)
    p.add_argument("--matrix-rank", dest="matrix_rank", type=int, default=None)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--seed", dest="seeds", type=int, nargs="+", default=[0])


def _cfg_from_args(args: argparse.Namespace, shape: tuple[int, ...]) -> OptimizerConfig:
    matrix_rank = args.matrix_rank
    if args.optimizer == "galore" and matrix_rank is None:
        matrix_rank = max(1, round(args.rank * shape[0]))
    return OptimizerConfig(
        lr=args.lr, alpha=args.alpha, lam=args.lam, ranks=ranks_from_ratio(args.rank, shape),
        density=args.density, strategy=args.strategy, order=args.order,
        refresh_period=args.gap, precision=args.precision, weight_decay=args.weight_decay,
        matricize_dim=args.matricize_dim, matrix_rank=matrix_rank,
    )


def _cmd_gen(args: argparse.Namespace) -> int:
    task = _task_from_args(args)
    data = generate_task(task)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tgrd_io.write_dense(out / "x_train.tgrd", data.x_train)
    tgrd_io.write_dense(out / "y_train.tgrd", data.y_train)
    tgrd_io.write_dense(out / "x_test.tgrd", data.x_test)
    tgrd_io.write_dense(out / "y_test.tgrd", data.y_test)
    tgrd_io.write_dense(out / "target.tgrd", data.r_star)
    (out / "task.json").write_text(json.dumps(task.to_dict(), indent=2))
    print(f"wrote dataset ({task.n_train}+{task.n_test} samples) to {out}")
    return EXIT_OK


def _run_config(args, task, label, overrides=None) -> list:
    shape = task.weight_shape
    cfg = _cfg_from_args(args, shape)
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return run_experiment(task, args.optimizer, cfg, args.epochs, list(args.seeds),
                          batch_size=args.batch_size, label=label)


def _cmd_train(args: argparse.Namespace) -> int:
    task = _task_from_args(args)
    label = f"{args.optimizer}-{args.order}" if args.optimizer == "robust" else args.optimizer
    records = _run_config(args, task, label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / "records.csv")
    write_summary_json(records, out / "summary.json")
    for row in compare(records):
        print(f"{row['rank']:>2} {row['label']:<24} test {row['test_loss_mean']:.6f} "
              f"+/- {row['test_loss_stderr']:.6f}")
    print(f"wrote {out / 'records.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    task = _task_from_args(args)
    records = []
    lambdas = [float(v) for v in args.lambdas.split(",")]
    matrix = []
    for order in ("us_lr", "lr_us", "ss_lr", "lr_ss", "lr_plus_us"):
        for strategy in ("topk", "randk"):
            for lam in lambdas:
                matrix.append({"order": order, "strategy": strategy, "lam": lam})
    matrix.append({"order": "lr_only", "strategy": "topk", "lam": 1.0})
    matrix.append({"order": "sparse_only", "strategy": "topk", "lam": 1.0})
    for spec in matrix:
        label = f"{spec['order']}-{spec['strategy']}-lam{spec['lam']:g}"
        args.optimizer = "robust"
        records.extend(_run_config(args, task, label, overrides=spec))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / "ablation.csv")
    write_summary_json(records, out / "ablation.json")
    ranking = compare(records)
    write_ranking_csv(ranking, out / "ranking.csv")
    for row in ranking:
        print(f"{row['rank']:>2} {row['label']:<28} test {row['test_loss_mean']:.6f} "
              f"+/- {row['test_loss_stderr']:.6f}")
    return EXIT_OK


def _cmd_theory(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {}
    rng = np.random.default_rng(args.seed)
    if args.suite in ("all", "bound"):
        worst = 0.0
        all_records = []
        for i in range(args.problems):
            problem = random_parametric_problem((5, 6, 4), seed=args.seed + i, n_terms=1)
            trace = simulate_parametric_sgd(problem, args.steps)
            for k in range(3):
                op = build_mode_operator(problem, k)
                recs = check_stable_rank_bound(trace, op, problem.eta, t0=0)
                all_records.extend(recs)
                worst = min(worst, min(r.margin for r in recs))
        write_bound_csv(all_records, out / "stable_rank_bound.csv")
        summary["bound"] = {"problems": args.problems, "worst_margin": worst}
        print(f"bound suite: {args.problems} problems, worst margin {worst:.3e}")
    if args.suite in ("all", "contraction"):
        problem = random_parametric_problem((6, 5, 4), seed=args.seed, n_terms=2)
        shape = problem.w0.shape
        projections = [np.linalg.qr(rng.standard_normal((s, max(2, s // 2))))[0] for s in shape]
        rep = check_contraction(problem, projections)
        summary["contraction"] = {
            "kappa": rep.kappa,
            "min_slack": min(r.slack for r in rep.records),
            "converged_step": rep.converged_step,
            "steps": len(rep.records),
        }
        print(f"contraction: kappa={rep.kappa:.4f} converged at {rep.converged_step}")
    if args.suite in ("all", "corollary"):
        trace = corollary_rank_floor(n=8, data_rank=2, n_samples=40, steps=args.steps,
                                     eta=0.05, seed=args.seed)
        summary["corollary"] = {"long_run_sr": trace.long_run()}
        print(f"corollary: long-run sr {trace.long_run()}")
    if args.suite in ("all", "ranks"):
        comparison = projection_rank_comparison(seed=args.seed)
        summary["projection_ranks"] = {
            name: trace.long_run() for name, trace in comparison.items()
        }
        print(f"projection ranks: { summary['projection_ranks'] }")
    write_json_summary(summary, out / "theory_summary.json")
    print(f"wrote {out / 'theory_summary.json'}")
    return EXIT_OK


def _cmd_memory(args: argparse.Namespace) -> int:
    dims = tuple(int(v) for v in args.dims.split(","))
    ranks = tuple(int(v) for v in args.ranks.split(",")) if args.ranks else None
    rows = []
    rows.append(memory_count("adam", dims, complex_values=args.complex))
    if args.matrix_rank:
        rows.append(memory_count("galore_matrix", dims, matrix_rank=args.matrix_rank,
                                 matricize_dim=args.matricize_dim,
                                 complex_values=args.complex))
    if ranks:
        rows.append(memory_count("tucker", dims, ranks=ranks, complex_values=args.complex))
        rows.append(memory_count("tensorgrad", dims, ranks=ranks, rho=args.density,
                                 complex_values=args.complex))
    print(f"{'method':<16}{'weights':>12}{'moments':>12}{'factors':>10}{'indices':>10}{'total state':>14}")
    for rep in rows:
        print(f"{rep.method:<16}{rep.weight_params:>12}{rep.moment_scalars:>12}"
              f"{rep.factor_scalars:>10}{rep.index_slots:>10}{rep.state_scalars:>14}")
    p_matrix, p_tensor = matched_rank_parameter_counts(64, 128, 16)
    print(f"\nmatched-rank reference (N=64, M=128, r=16): "
          f"matrix {p_matrix} vs tensor {p_tensor} ({p_matrix / p_tensor:.1f}x)")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    rows = read_records_csv(args.records)
    if not rows:
        print("no records")
        return EXIT_OK
    finals: dict[tuple[str, str], dict[int, float]] = {}
    for row in rows:
        key = (row["label"], row["optimizer"])
        finals.setdefault(key, {})[int(row["seed"])] = float(row["test_loss"])
    print(f"{'label':<28}{'seeds':>6}{'final test (mean)':>20}")
    ranked = sorted(finals.items(), key=lambda kv: (sum(kv[1].values()) / len(kv[1]), kv[0]))
    for (label, _opt), by_seed in ranked:
        mean = sum(by_seed.values()) / len(by_seed)
        print(f"{label:<28}{len(by_seed):>6}{mean:>20.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustgrad",
                                     description="compressed-gradient optimizer harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a dataset as TGRD files")
    _add_task_flags(p_gen)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--config", default=None)
    p_gen.set_defaults(fn=_cmd_gen)

    p_train = sub.add_parser("train", help="train one optimizer config")
    _add_task_flags(p_train)
    _add_optim_flags(p_train)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--config", default=None)
    p_train.set_defaults(fn=_cmd_train)

    p_abl = sub.add_parser("ablate", help="composition-order ablation matrix")
    _add_task_flags(p_abl)
    _add_optim_flags(p_abl)
    p_abl.add_argument("--lambdas", default="0.5,1,2")
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--config", default=None)
    p_abl.set_defaults(fn=_cmd_ablate)

    p_th = sub.add_parser("theory", help="run theory verification suites")
    p_th.add_argument("--suite", default="all",
                      choices=("all", "bound", "contraction", "corollary", "ranks"))
    p_th.add_argument("--problems", type=int, default=10)
    p_th.add_argument("--steps", type=int, default=200)
    p_th.add_argument("--seed", type=int, default=0)
    p_th.add_argument("--out", required=True)
    p_th.add_argument("--config", default=None)
    p_th.set_defaults(fn=_cmd_theory)

    p_mem = sub.add_parser("memory", help="print analytic memory table")
    p_mem.add_argument("--dims", default="64,64,128,128")
    p_mem.add_argument("--ranks", default="16,16,16,16")
    p_mem.add_argument("--density", type=float, default=0.05)
    p_mem.add_argument("--matrix-rank", dest="matrix_rank", type=int, default=256)
    p_mem.add_argument("--matricize-dim", dest="matricize_dim", type=int, default=2)
    p_mem.add_argument("--complex", action="store_true")
    p_mem.add_argument("--config", default=None)
    p_mem.set_defaults(fn=_cmd_memory)

    p_rep = sub.add_parser("report", help="rank an existing records CSV")
    p_rep.add_argument("--records", required=True)
    p_rep.add_argument("--config", default=None)
    p_rep.set_defaults(fn=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, parser)
        return args.fn(args)
    except NanLossError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ValueError, FileNotFoundError, tgrd_io.TgrdFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
