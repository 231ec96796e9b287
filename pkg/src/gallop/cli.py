"""Command-line entry point.

Subcommands: synth, train, eval, ood, gradcheck, inspect. Every run echoes
the resolved configuration to stdout before acting so results are
reproducible from logs. Exit codes: 0 success, 1 usage error, 2 data or
config error, 3 gradcheck failure. ``GALLOP_SEED`` overrides the config
seed.
"""

import argparse
import json
import os
import sys

from .errors import ConfigError, GallopError
from .features import SynthSpec, generate_synthetic, read_dataset, write_dataset
from .model import load_checkpoint, read_checkpoint_header, save_checkpoint
from .scoring import evaluate_top1, ood_metrics, score_dataset, write_score_csv
from .train import Batch, TrainConfig, gradcheck, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(path):
    with open(path, "rb") as f:
        raw = json.load(f)
    return TrainConfig.from_dict(raw)


def _apply_seed_override(config):
    env = os.environ.get("GALLOP_SEED")
    if env is not None:
        config.seed = int(env)
        config.dropout.seed = 0  # re-derive from the overridden seed
    return config


def _echo_config(config):
    print("config: " + json.dumps(config.to_dict(), sort_keys=True))


def _echo(args, **extra):
    resolved = {k: v for k, v in vars(args).items() if k not in ("func",)}
    resolved.update(extra)
    print("resolved: " + json.dumps(resolved, sort_keys=True, default=str))


def _cmd_synth(args):
    with open(args.spec, "rb") as f:
        raw = json.load(f)
    try:
        spec = SynthSpec(**raw)
    except TypeError as e:
        raise ConfigError(f"bad synthesis spec: {e}")
    _echo(args, spec=raw)
    train_ds, test_id, test_ood = generate_synthetic(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, ds in (("train", train_ds), ("test_id", test_id), ("test_ood", test_ood)):
        path = os.path.join(args.out_dir, f"{name}.glf")
        write_dataset(ds, path)
        print(f"wrote {path}: {len(ds)} records, d={ds.d}, L={ds.L}, C={ds.num_classes}")
    return 0


def _cmd_train(args):
    config = _apply_seed_override(_load_config(args.config))
    _echo_config(config)
    dataset = read_dataset(args.data)
    model, trace = train(dataset, config)
    save_checkpoint(model, args.out)
    trace_path = args.out + ".trace.jsonl"
    with open(trace_path, "w") as f:
        for stats in trace:
            f.write(json.dumps(stats.to_dict(), sort_keys=True) + "\n")
    final = trace[-1]
    print(f"wrote {args.out} and {trace_path}")
    print(f"final: loss {final.loss_total:.6f}, train top1 {final.train_top1:.4f}")
    return 0


def _cmd_eval(args):
    dataset = read_dataset(args.data)
    model = load_checkpoint(args.ckpt, num_classes=dataset.num_classes)
    _echo(args, d=model.d, m=model.m, n=model.n, tau=model.tau)
    print(f"top1 {evaluate_top1(model, dataset):.4f}")
    return 0


def _cmd_ood(args):
    id_set = read_dataset(args.id)
    ood_set = read_dataset(args.ood)
    model = load_checkpoint(args.ckpt, num_classes=id_set.num_classes)
    _echo(args, d=model.d, m=model.m, n=model.n, tau=model.tau)
    id_reports = score_dataset(model, id_set)
    ood_reports = score_dataset(model, ood_set)
    metrics = ood_metrics(
        [r.s_glmcm for r in id_reports], [r.s_glmcm for r in ood_reports]
    )
    write_score_csv(
        args.csv,
        id_reports + ood_reports,
        [r.label for r in id_set.records] + [r.label for r in ood_set.records],
    )
    print(f"wrote {args.csv}")
    print(f"fpr95 {metrics.fpr95:.4f}")
    print(f"auroc {metrics.auroc:.4f}")
    return 0


def _cmd_gradcheck(args):
    from .model import new_model

    config = _apply_seed_override(_load_config(args.config))
    _echo_config(config)
    dataset = read_dataset(args.data)
    config.scales.validate_for(dataset.L)
    model = new_model(
        seed=config.seed,
        m=config.m,
        n=config.n,
        V=config.V,
        d_prime=config.d_prime,
        d=dataset.d,
        scales=config.scales,
        tau=config.tau,
        encoder_seed=config.encoder_seed,
        num_classes=dataset.num_classes,
    )
    batch = Batch.from_dataset(dataset)
    report = gradcheck(model, batch, lambda_div=config.lambda_div, seed=config.seed)
    for group, err in sorted(report.per_group.items()):
        print(f"gradcheck {group}: max relative error {err:.3e}")
    print(f"gradcheck max relative error {report.max_rel_err:.3e} "
          f"(tolerance {report.tolerance:.0e})")
    if not report.passed:
        print("gradcheck FAILED", file=sys.stderr)
        return 3
    print("gradcheck passed")
    return 0


def _cmd_inspect(args):
    header = read_checkpoint_header(args.ckpt)
    for key in sorted(header):
        print(f"{key}: {json.dumps(header[key], sort_keys=True)}")
    return 0


def build_parser():
    parser = _Parser(prog="gallop", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=0,
                        help="cap worker threads (0 = library default)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate synthetic feature datasets")
    p.add_argument("--spec", required=True, help="JSON file of synthesis parameters")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True, help="JSON train config")
    p.add_argument("--data", required=True, help="training feature file")
    p.add_argument("--out", required=True, help="checkpoint path (trace written beside it)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a feature file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ood", help="FPR95/AUROC of GL-MCM scores, ID vs OOD")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--ood", required=True)
    p.add_argument("--csv", default="scores.csv", help="score dump path")
    p.set_defaults(func=_cmd_ood)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradients")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="print checkpoint header metadata")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    if args.threads > 0:
        try:
            import numba

            numba.set_num_threads(args.threads)
        except (ImportError, ValueError):
            pass
    try:
        return args.func(args)
    except GallopError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
