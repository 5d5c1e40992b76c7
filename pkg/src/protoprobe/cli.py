"""Command-line front end: gen / train / eval / bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
divergence. Configuration layers as dataclass defaults < ``--config``
key=value file < explicit command-line flags, and the fully resolved
configuration is echoed into the run directory before work starts.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from statistics import median

import numpy as np

from . import datagen
from .errors import (
    ConfigurationError,
    NumericDivergenceError,
    ParameterError,
    ProtoprobeError,
)
from .evaluation import bench_clustering, bias_report, clustering_accuracy
from .fastcluster import estimate_k, kernel_name
from .numerics import l2_normalize_rows
from .prototypes import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainState, infer, init_state, train_epoch

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

# fixed run-directory file names, asserted on by tests
CONFIG_ECHO = "config.txt"
METRICS_STREAM = "metrics.jsonl"
CHECKPOINT_DIR = "checkpoints"
FINAL_CHECKPOINT = "final.ckpt"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


class _UsageError(Exception):
    """Raised for bad flags/config so main() can exit with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# config plumbing

def _coerce(name, text, target_type):
    if target_type is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise _UsageError(f"config key {name}: expected a boolean, got {text!r}")
    try:
        return target_type(text)
    except ValueError:
        raise _UsageError(
            f"config key {name}: expected {target_type.__name__}, got {text!r}"
        ) from None


def read_config_file(path):
    """Parse a flat key=value file ('#' comments, blank lines allowed)."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise _UsageError(f"cannot read config file: {exc}") from None
    out = {}
    for lineno, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise _UsageError(
                f"{path}:{lineno}: expected key=value, got {line!r}"
            )
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_train_config(args):
    """defaults < config file < explicit flags; unknown keys rejected."""
    field_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    if getattr(args, "config", None):
        for key, text in read_config_file(args.config).items():
            if key not in field_types:
                raise _UsageError(f"unknown config key: {key}")
            ftype = field_types[key]
            if isinstance(ftype, str):
                ftype = {"float": float, "int": int, "bool": bool}[ftype]
            values[key] = _coerce(key, text, ftype)
    for key in field_types:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "ablate", None):
        if args.ablate == "no-pp":
            values["potential_prototypes"] = False
        elif args.ablate == "frozen-pp":
            values["frozen_potential"] = True
        else:
            raise _UsageError(f"unknown ablation: {args.ablate}")
    try:
        return TrainConfig(**values)
    except (ConfigurationError, TypeError) as exc:
        raise _UsageError(str(exc)) from None


def _echo_config(path, config):
    with open(path, "w") as fh:
        for f in sorted(dataclasses.fields(config), key=lambda f: f.name):
            fh.write(f"{f.name}={getattr(config, f.name)}\n")


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--tau-f", dest="tau_f", type=float,
                        help="edge filtering threshold")
    parser.add_argument("--knn-k", dest="knn_k", type=int,
                        help="neighbors kept per node")
    parser.add_argument("--out-dim", dest="out_dim", type=int)
    parser.add_argument("--num-restarts", dest="num_restarts", type=int)
    parser.add_argument("--buffer-multiplier", dest="buffer_multiplier",
                        type=int)


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    points, labels = datagen.generate_mixture(
        num_classes=args.classes,
        dim=args.dim,
        per_class=args.per_class,
        class_sep=args.class_sep,
        noise_sd=args.noise_sd,
        seed=args.seed,
    )
    old_fraction = args.old / args.classes
    dataset = datagen.split_gcd(
        (points, labels),
        old_fraction=old_fraction,
        labelled_fraction=args.labelled_fraction,
        seed=args.seed,
    )
    datagen.save_dataset(dataset, args.out)
    manifest = {
        "classes": args.classes,
        "old_classes": list(dataset.old_classes),
        "per_class": args.per_class,
        "dim": args.dim,
        "class_sep": args.class_sep,
        "noise_sd": args.noise_sd,
        "seed": args.seed,
        "labelled": dataset.num_labelled,
        "unlabelled": dataset.num_unlabelled,
    }
    with open(args.out + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}: {dataset.num_labelled} labelled, "
          f"{dataset.num_unlabelled} unlabelled, dim {dataset.dim}")
    return EXIT_OK


_CHECKPOINT_KEYS = (
    "enc_w1", "enc_b1", "enc_w2", "enc_b2",
    "head_w1", "head_b1", "head_w2", "head_b2", "head_w3", "head_b3",
)


def _save_run_checkpoint(path, state):
    arrays = {k: state.student[k] for k in _CHECKPOINT_KEYS}
    for k in state.teacher:
        arrays["teacher_" + k] = state.teacher[k]
    arrays["mu_l"] = state.bank.labelled_protos
    arrays["potential_pool"] = state.bank.potential_pool
    save_checkpoint(path, arrays, state.epoch)


def _student_from_checkpoint(path):
    arrays, epoch = load_checkpoint(path)
    missing = [k for k in _CHECKPOINT_KEYS if k not in arrays]
    if missing:
        raise ProtoprobeError(
            f"checkpoint lacks parameter(s): {', '.join(missing)}"
        )
    return epoch, {k: arrays[k] for k in _CHECKPOINT_KEYS}


def _report_tables(eval_rep, bias_rep):
    lines = [
        "metric        value",
        f"ACC(All)      {eval_rep.acc_all:.4f}",
        f"ACC(Old)      {eval_rep.acc_old:.4f}",
        f"ACC(New)      {eval_rep.acc_new:.4f}",
        f"K^e           {eval_rep.k_e}",
        f"instances     {eval_rep.num_instances}",
        "",
        "error case    count",
        f"false old     {bias_rep.false_old}",
        f"false new     {bias_rep.false_new}",
        f"true old      {bias_rep.true_old}",
        f"true new      {bias_rep.true_new}",
        f"intra bias    {bias_rep.intra_class_bias:.4f}",
    ]
    return "\n".join(lines) + "\n"


def cmd_train(args):
    dataset = datagen.load_dataset(args.data)
    config = resolve_train_config(args)
    os.makedirs(args.out, exist_ok=True)
    ckpt_dir = os.path.join(args.out, CHECKPOINT_DIR)
    os.makedirs(ckpt_dir, exist_ok=True)
    _echo_config(os.path.join(args.out, CONFIG_ECHO), config)

    state = init_state(dataset, config)
    with open(os.path.join(args.out, METRICS_STREAM), "w") as stream:
        for epoch in range(config.epochs):
            metrics = train_epoch(state, dataset, config, epoch)
            stream.write(json.dumps(metrics, sort_keys=True) + "\n")
            stream.flush()
            if not args.quiet:
                print(f"epoch {epoch:4d}  K^e {metrics['k_e']:3d}  "
                      f"total {metrics['total']:+.4f}  lr {metrics['lr']:.4f}")
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                _save_run_checkpoint(
                    os.path.join(ckpt_dir, f"epoch-{epoch + 1:04d}.ckpt"), state
                )
    _save_run_checkpoint(os.path.join(ckpt_dir, FINAL_CHECKPOINT), state)

    result, assignment = infer(state, dataset.unlabelled_x, config)
    eval_rep = clustering_accuracy(
        dataset.unlabelled_hidden_y, assignment, dataset.old_classes
    )
    bias_rep = bias_report(
        dataset.unlabelled_hidden_y, assignment, eval_rep.matching,
        dataset.old_classes
    )
    report = {"eval": eval_rep.as_dict(), "bias": bias_rep.as_dict()}
    with open(os.path.join(args.out, REPORT_JSON), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = _report_tables(eval_rep, bias_rep)
    with open(os.path.join(args.out, REPORT_TEXT), "w") as fh:
        fh.write(table)
    if not args.quiet:
        print(table, end="")
    return EXIT_OK


def _eval_features(args, dataset):
    """Unlabelled-instance features: encoded by a checkpoint's student
    when one is given, otherwise the raw rows unit-normalized."""
    if args.checkpoint:
        _, student = _student_from_checkpoint(args.checkpoint)
        from .trainer import encoder_forward

        v, _, _ = encoder_forward(student, dataset.unlabelled_x)
        return v
    return l2_normalize_rows(dataset.unlabelled_x)


def _parse_sweep(text):
    if "=" not in text:
        raise _UsageError(f"--sweep expects name=v1,v2,..., got {text!r}")
    name, _, values = text.partition("=")
    if name.strip() != "k":
        raise _UsageError(f"only k sweeps are supported, got {name.strip()!r}")
    try:
        parsed = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise _UsageError(f"bad sweep values: {values!r}") from None
    if not parsed:
        raise _UsageError("sweep needs at least one value")
    return parsed


def cmd_eval(args):
    dataset = datagen.load_dataset(args.data)
    config = resolve_train_config(args)
    features = _eval_features(args, dataset)

    if args.sweep:
        ks = _parse_sweep(args.sweep)
        rows = []
        for k in ks:
            result = estimate_k(features, config.tau_f, k, config.seed,
                                num_restarts=config.num_restarts)
            rows.append({"k": k, "k_e": result.num_clusters,
                         "codelength": result.codelength})
        print("k     K^e   codelength")
        for row in rows:
            print(f"{row['k']:<6d}{row['k_e']:<6d}{row['codelength']:.4f}")
        print(json.dumps({"sweep": rows}, sort_keys=True))
        return EXIT_OK

    result = estimate_k(features, config.tau_f, config.knn_k, config.seed,
                        num_restarts=config.num_restarts)
    eval_rep = clustering_accuracy(
        dataset.unlabelled_hidden_y, result.assignment, dataset.old_classes
    )
    bias_rep = bias_report(
        dataset.unlabelled_hidden_y, result.assignment, eval_rep.matching,
        dataset.old_classes
    )
    print(_report_tables(eval_rep, bias_rep), end="")
    print(json.dumps({"eval": eval_rep.as_dict(), "bias": bias_rep.as_dict()},
                     sort_keys=True))
    return EXIT_OK


def cmd_bench(args):
    dataset = datagen.load_dataset(args.data)
    config = resolve_train_config(args)
    if args.repeats < 5:
        print(f"warning: {args.repeats} repeat(s) gives noisy timings; "
              "5+ recommended", file=sys.stderr)
    full = l2_normalize_rows(
        np.concatenate([dataset.labelled_x, dataset.unlabelled_x])
    )
    unlab = l2_normalize_rows(dataset.unlabelled_x)
    result = bench_clustering(full, unlab, config.tau_f, config.knn_k,
                              seed=config.seed, repeats=args.repeats,
                              num_restarts=config.num_restarts)
    print("input              median ms")
    print(f"labelled+unlabelled  {result.full_ms:10.2f}")
    print(f"unlabelled only      {result.unlabelled_ms:10.2f}")
    print(f"speedup              {result.speedup:10.2f}x")
    out = result.as_dict()

    if args.compare_kernels:
        out["kernels"] = _compare_kernels(unlab, config, args.repeats)
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _compare_kernels(features, config, repeats):
    """Time the active kernel against the pure-Python twin."""
    from .fastcluster import _map_core_py, graph, mapeq, search

    g = graph.build_pruned_graph(features, config.tau_f, config.knn_k)
    kernels = {kernel_name(): search._kernel.partition_search}
    if kernel_name() != "python":
        kernels["python"] = _map_core_py.partition_search
    node_flow, arc_flow = mapeq.flow_arrays(g)
    zeros = np.zeros(g.num_nodes)
    rows = {}
    for name, fn in kernels.items():
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(g.indptr, g.indices, arc_flow, node_flow, zeros,
               config.seed, config.num_restarts, 1e-12)
            times.append((time.perf_counter() - t0) * 1000.0)
        rows[name] = float(median(times))
        print(f"kernel {name:8s} median {rows[name]:10.2f} ms")
    return rows


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    parser = _Parser(
        prog="protoprobe",
        description="Generalized-category-discovery pipeline: generate "
        "planted datasets, train the cluster-and-distill model, evaluate "
        "matched accuracy, and benchmark the graph clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a planted GCD dataset")
    p_gen.add_argument("--classes", type=int, required=True)
    p_gen.add_argument("--old", type=int, required=True,
                       help="number of labelled (old) classes")
    p_gen.add_argument("--per-class", dest="per_class", type=int, required=True)
    p_gen.add_argument("--dim", type=int, required=True)
    p_gen.add_argument("--class-sep", dest="class_sep", type=float, default=6.0)
    p_gen.add_argument("--noise-sd", dest="noise_sd", type=float, default=1.0)
    p_gen.add_argument("--labelled-fraction", dest="labelled_fraction",
                       type=float, default=0.5)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", default="d.gcd")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train on a dataset file")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", default="run-train",
                         help="run directory (created if missing)")
    p_train.add_argument("--ablate", choices=("no-pp", "frozen-pp"),
                         help="no-pp: no potential prototypes; "
                         "frozen-pp: pool never trained")
    p_train.add_argument("--checkpoint-every", dest="checkpoint_every",
                         type=int)
    p_train.add_argument("--quiet", action="store_true")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="cluster + score a dataset")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--checkpoint",
                        help="encode with this checkpoint's student first")
    p_eval.add_argument("--sweep", help="e.g. k=5,10,20,40")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="time clustering, full vs unlabelled")
    p_bench.add_argument("--data", required=True)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--compare-kernels", action="store_true",
                         help="also time the compiled kernel against the "
                         "pure-Python twin")
    _add_config_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ProtoprobeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
