"""Command-line interface.

Subcommands: synth, eval, ablate, shots, semi, train, oracle-check,
sparsity. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical error. When --out is given, reports are written as key=value
lines with per-trial CSVs and rendered figures alongside.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, reporting, synth
from .data import (
    EpisodeConfig,
    MetricHyperParams,
    load_embeddings,
    save_embeddings,
)
from .errors import (
    ConstraintError,
    DataFormatError,
    NumericalError,
    ParameterError,
    SamplingError,
)
from .metric import load_metric_block, save_metric_block
from .mixing import TimConfig
from .trainer import TrainConfig, init_model, load_model, save_model, train

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERICAL_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _on_off(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")


def _common_flags(p: argparse.ArgumentParser, with_episode=True, with_metric=True):
    if with_episode:
        p.add_argument("--n-way", type=int, default=5)
        p.add_argument("--k-shot", type=int, default=1)
        p.add_argument("--n-query", type=int, default=15)
        p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    if with_metric:
        p.add_argument("--alpha", type=float, default=2.0)
        p.add_argument("--gamma", type=float, default=0.2)
        p.add_argument("--lambda", dest="lam", type=float, default=0.01)
        p.add_argument("--knn-k", type=int, default=3)
        p.add_argument("--prior", default="identity",
                       help="'identity' or a matrix file (.csv rows or metric block)")
    p.add_argument("--out", type=Path, default=None, help="report path; CSV and figures land alongside")
    p.add_argument("--no-plot", action="store_true", help="skip figure rendering")


def _data_flags(p: argparse.ArgumentParser):
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--model", type=Path, default=None, help="embedding model checkpoint")


def _load_prior(spec: str):
    if spec == "identity":
        return None
    path = Path(spec)
    if path.suffix == ".csv":
        rows = [
            [float(v) for v in line.split(",")]
            for line in path.read_text().splitlines()
            if line.strip()
        ]
        return np.asarray(rows)
    return load_metric_block(path).matrix


def _hyper(args) -> MetricHyperParams:
    return MetricHyperParams(
        alpha=args.alpha, gamma=args.gamma, lam=args.lam,
        prior=_load_prior(args.prior), knn_k=args.knn_k,
    )


def _episode_cfg(args) -> EpisodeConfig:
    return EpisodeConfig(
        n_way=args.n_way, k_shot=args.k_shot,
        n_query_per_class=args.n_query, seed=args.seed,
    )


def _emit(args, lines, figures=()):
    for line in lines:
        print(line)
    if args.out is None:
        return
    reporting.write_report(args.out, lines)
    if not args.no_plot:
        for render in figures:
            render()


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _cmd_synth(args) -> int:
    stds = tuple(
        [args.signal_std] * (args.dim - args.nuisance_dims)
        + [args.nuisance_std] * args.nuisance_dims
    )
    cfg = synth.SynthConfig(
        n_classes=args.classes, dim=args.dim, per_class=args.per_class,
        class_sep=args.class_sep, noise_aniso=stds,
        nuisance_dims=args.nuisance_dims, seed=args.seed,
    )
    dataset = synth.generate(cfg)
    save_embeddings(dataset, args.dest, args.format)
    print(f"wrote {dataset.n_rows} records of dim {dataset.dim} to {args.dest}")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_embeddings(args.embeddings, args.format)
    model = load_model(args.model) if args.model else None
    spec = harness.AblationSpec(tim=args.tim, eam=args.eam, bisim=args.bisim)
    report = harness.run_trials(
        dataset, _episode_cfg(args), _hyper(args), spec,
        n_trials=args.trials, seed=args.seed, model=model,
    )
    lines = reporting.report_lines(report)
    figures = []
    if args.out is not None:
        reporting.write_trials_csv(
            _sibling(args.out, ".trials.csv"),
            {spec.label(): report.per_trial_accuracies},
        )
        figures.append(
            lambda: reporting.render_accuracy_hist(report, _sibling(args.out, ".png"))
        )
    _emit(args, lines, figures)
    return 0


def _cmd_ablate(args) -> int:
    dataset = load_embeddings(args.embeddings, args.format)
    model = load_model(args.model) if args.model else None
    tim_model = load_model(args.tim_model) if args.tim_model else None
    rows = harness.run_ablation_suite(
        dataset, _episode_cfg(args), _hyper(args),
        n_trials=args.trials, seed=args.seed, model=model, tim_model=tim_model,
    )
    lines = []
    for spec, report in rows:
        lines.extend(reporting.report_lines(report, prefix=spec.label()))
    figures = []
    if args.out is not None:
        reporting.write_trials_csv(
            _sibling(args.out, ".trials.csv"),
            {spec.label(): rep.per_trial_accuracies for spec, rep in rows},
        )
        figures.append(
            lambda: reporting.render_ablation_bars(rows, _sibling(args.out, ".png"))
        )
    _emit(args, lines, figures)
    return 0


def _cmd_shots(args) -> int:
    dataset = load_embeddings(args.embeddings, args.format)
    model = load_model(args.model) if args.model else None
    shots = [int(s) for s in args.shots.split(",") if s.strip()]
    results = harness.run_shot_sweep(
        dataset, shots, n_way=args.n_way, n_query_per_class=args.n_query,
        hp=_hyper(args), n_trials=args.trials, seed=args.seed, model=model,
    )
    lines = []
    for r in results:
        lines.extend(reporting.report_lines(r.baseline, prefix=f"k{r.k_shot}.baseline"))
        lines.extend(reporting.report_lines(r.adapted, prefix=f"k{r.k_shot}.adapted"))
        lines.append(f"k{r.k_shot}.delta={r.delta:.6f}")
    figures = []
    if args.out is not None:
        figures.append(
            lambda: reporting.render_shot_sweep(results, _sibling(args.out, ".png"))
        )
    _emit(args, lines, figures)
    return 0


def _cmd_semi(args) -> int:
    dataset = load_embeddings(args.embeddings, args.format)
    model = load_model(args.model) if args.model else None
    result = harness.run_semi(
        dataset, _episode_cfg(args), _hyper(args),
        labeled_fraction=args.labeled_fraction,
        unlabeled_per_episode=args.unlabeled_per_episode,
        n_trials=args.trials, seed=args.seed, n_splits=args.splits,
        split_seed_base=args.split_seed_base, model=model,
    )
    lines = reporting.report_lines(result.semi_overall, prefix="semi")
    lines += reporting.report_lines(result.labeled_overall, prefix="labeled_only")
    lines.append(f"split_wins={result.split_wins}/{len(result.per_split)}")
    for split_seed, semi_r, lab_r in result.per_split:
        lines.append(
            f"split.{split_seed}.semi={semi_r.mean_accuracy:.6f} "
        )
        lines.append(f"split.{split_seed}.labeled_only={lab_r.mean_accuracy:.6f}")
    figures = []
    if args.out is not None:
        figures.append(lambda: reporting.render_semi(result, _sibling(args.out, ".png")))
    _emit(args, lines, figures)
    return 0


def _cmd_train(args) -> int:
    dataset = load_embeddings(args.embeddings, args.format)
    model = init_model(
        args.arch, dataset.dim,
        args.out_dim or dataset.dim, args.hidden_dim, rng=args.seed,
    )
    tim = None
    if args.tim:
        tim = TimConfig(
            low=args.tim_low, high=args.tim_high,
            mixes_per_instance=args.tim_mixes,
            warmup_episodes=args.tim_warmup,
            on_episodes=args.tim_on, off_episodes=args.tim_off,
        )
    cfg = TrainConfig(
        episode=_episode_cfg(args),
        learning_rate=args.learning_rate,
        episodes=args.episodes,
        tim=tim,
        lr_halving_every=args.lr_halving_every,
        eval_every=args.eval_every,
        seed=args.seed,
        metric_mode=args.metric_mode,
    )
    trained, trace = train(model, dataset, cfg, _hyper(args))
    save_model(trained, args.model_out)
    lines = [
        f"model_out={args.model_out}",
        f"episodes={args.episodes}",
        f"final_loss={trace[-1]:.6f}" if len(trace) else "final_loss=nan",
        f"mean_loss_first_tenth={np.mean(trace[: max(len(trace) // 10, 1)]):.6f}",
        f"mean_loss_last_tenth={np.mean(trace[-max(len(trace) // 10, 1):]):.6f}",
    ]
    figures = []
    if args.out is not None:
        reporting.write_trials_csv(_sibling(args.out, ".loss.csv"), {"loss": trace})
        figures.append(
            lambda: reporting.render_loss_trace(
                trace, cfg.eval_every, _sibling(args.out, ".png")
            )
        )
    _emit(args, lines, figures)
    return 0


def _cmd_oracle_check(args) -> int:
    checks = harness.run_oracle_check(args.instances, args.dim, _hyper(args), args.seed)
    worst_frob = max(c.frobenius_gap for c in checks)
    worst_obj = max(c.objective_gap for c in checks)
    worst_grad = max(c.grad_norm_closed for c in checks)
    all_converged = all(c.converged for c in checks)
    ok = worst_frob < args.frobenius_tol and worst_obj < args.objective_tol and all_converged
    lines = [
        f"instances={args.instances}",
        f"dim={args.dim}",
        f"max_frobenius_gap={worst_frob:.3e}",
        f"max_objective_gap={worst_obj:.3e}",
        f"max_grad_norm_at_closed_form={worst_grad:.3e}",
        f"all_converged={'true' if all_converged else 'false'}",
        f"ok={'true' if ok else 'false'}",
    ]
    _emit(args, lines)
    return 0 if ok else NUMERICAL_EXIT


def _cmd_sparsity(args) -> int:
    dataset = load_embeddings(args.embeddings, args.format)
    model = load_model(args.model) if args.model else None
    gaps, reports, last_metric = harness.run_sparsity_scan(
        dataset, _episode_cfg(args), _hyper(args),
        n_episodes=args.episodes, seed=args.seed, model=model,
    )
    lines = [
        f"episodes={args.episodes}",
        f"median_gap_ratio={np.median(gaps):.6f}" if gaps.size else "median_gap_ratio=nan",
        f"min_gap_ratio={gaps.min():.6f}" if gaps.size else "min_gap_ratio=nan",
        f"degenerate_episodes={sum(1 for r in reports if r.degenerate)}",
    ]
    figures = []
    if args.out is not None and reports:
        last = reports[-1]
        reporting.write_trials_csv(
            _sibling(args.out, ".values.csv"), {"sorted_value": last.sorted_values}
        )
        if last_metric is not None and not last.degenerate:
            figures.append(
                lambda: reporting.render_sparsity(
                    last_metric.matrix, last.sorted_values, _sibling(args.out, ".png")
                )
            )
    if args.dump_metric and last_metric is not None:
        save_metric_block(last_metric, args.dump_metric)
        lines.append(f"metric_block={args.dump_metric}")
    _emit(args, lines, figures)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="taskmetric", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--class-sep", type=float, default=3.0)
    p.add_argument("--nuisance-dims", type=int, default=8)
    p.add_argument("--signal-std", type=float, default=1.0)
    p.add_argument("--nuisance-std", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--dest", type=Path, required=True, help="output embedding file")
    p.set_defaults(func=_cmd_synth, out=None, no_plot=True)

    p = sub.add_parser("eval", help="run evaluation trials")
    _common_flags(p)
    _data_flags(p)
    p.add_argument("--eam", type=_on_off, default=False)
    p.add_argument("--bisim", type=_on_off, default=False)
    p.add_argument("--tim", type=_on_off, default=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four standard ablation rows")
    _common_flags(p)
    _data_flags(p)
    p.add_argument("--tim-model", type=Path, default=None,
                   help="checkpoint trained with mixing, for the tim rows")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("shots", help="paired baseline-vs-pipeline sweep over K")
    _common_flags(p)
    _data_flags(p)
    p.add_argument("--shots", default="1,3,5", help="comma-separated shot counts")
    p.set_defaults(func=_cmd_shots)

    p = sub.add_parser("semi", help="semi-supervised protocol over labeled/unlabeled splits")
    _common_flags(p)
    _data_flags(p)
    p.add_argument("--labeled-fraction", type=float, default=0.4)
    p.add_argument("--unlabeled-per-episode", type=int, default=50)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--split-seed-base", type=int, default=1000)
    p.set_defaults(func=_cmd_semi)

    p = sub.add_parser("train", help="train an embedding model episodically")
    _common_flags(p)
    _data_flags(p)
    p.add_argument("--arch", choices=("linear", "mlp1"), default="linear")
    p.add_argument("--hidden-dim", type=int, default=0)
    p.add_argument("--out-dim", type=int, default=0, help="0 keeps the input dimension")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--lr-halving-every", type=int, default=10000)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--metric-mode", choices=("euclidean", "eam"), default="euclidean")
    p.add_argument("--tim", type=_on_off, default=False)
    p.add_argument("--tim-low", type=float, default=0.5)
    p.add_argument("--tim-high", type=float, default=1.0)
    p.add_argument("--tim-mixes", type=int, default=2)
    p.add_argument("--tim-warmup", type=int, default=5000)
    p.add_argument("--tim-on", type=int, default=4)
    p.add_argument("--tim-off", type=int, default=1)
    p.add_argument("--model-out", type=Path, required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("oracle-check", help="closed form vs projected-gradient reference")
    _common_flags(p, with_episode=False)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--frobenius-tol", type=float, default=1e-3)
    p.add_argument("--objective-tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("sparsity", help="diagonal-gap diagnostics over sampled episodes")
    _common_flags(p)
    _data_flags(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--dump-metric", type=Path, default=None,
                   help="also dump the last metric as a binary block")
    p.set_defaults(func=_cmd_sparsity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ParameterError as e:
        print(f"taskmetric: parameter error: {e}", file=sys.stderr)
        return USAGE_EXIT
    except (DataFormatError, SamplingError, ConstraintError, OSError) as e:
        print(f"taskmetric: data error: {e}", file=sys.stderr)
        return DATA_EXIT
    except NumericalError as e:
        print(f"taskmetric: numerical error: {e}", file=sys.stderr)
        return NUMERICAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
