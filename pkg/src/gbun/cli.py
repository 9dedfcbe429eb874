"""``gbun`` command line: train, predict, eval, comm-report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/solver error,
4 network error. ``GBUN_LOG`` (error|info|debug) sets stderr verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import booster, collective
from .booster import ModelFormatError, TrainConfig
from .collective import CollectiveError, CommLedger, TcpCommunicator, TcpCoordinator
from .dataset import LibsvmParseError, load_libsvm, partition
from .metrics import evaluate
from .solver import SolverError

log = logging.getLogger("gbun")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_NETWORK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def _log_line(entry: dict) -> str:
    parts = [f"round={entry['round']}", f"train_loss={_fmt(entry['train_loss'])}"]
    parts += [f"{k}={_fmt(v)}" for k, v in entry.items() if k.startswith("valid_")]
    parts.append(f"comm_values={entry.get('comm_values', 0)}")
    if "jitter" in entry:
        parts.append(f"jitter={_fmt(entry['jitter'])}")
    return " ".join(parts)


def _config_from_args(a) -> TrainConfig:
    transport = a.transport
    if transport == "auto":
        transport = "none" if a.partitions == 1 else "inprocess"
    return TrainConfig(
        objective=a.objective, K=a.k, rounds=a.rounds, eta=a.eta, lam=a.lam,
        mode=a.mode, seed=a.seed, sparsify_fraction=a.sparsify, num_classes=a.num_classes,
        partitions=a.partitions, partition_strategy=a.partition_strategy,
        transport=transport, batches=a.batches, eval_every=a.eval_every, timeout=a.timeout,
    )


def _print_entry(entry):
    print(_log_line(entry), flush=True)


def cmd_train(a) -> int:
    if a.role == "coordinator":
        if not a.coordinator or not a.world_size:
            raise UsageError("--role coordinator needs --coordinator host:port and --world-size")
        host, port = collective.parse_address(a.coordinator)
        coord = TcpCoordinator(host, port, a.world_size, a.timeout)
        log.info("coordinator listening on %s for %d workers", coord.address_str, a.world_size)
        coord.serve()
        return EXIT_OK

    if not a.data or not a.model:
        raise UsageError("train needs --data and --model")
    if a.role == "worker":
        if not a.coordinator or not a.world_size or a.rank is None:
            raise UsageError("--role worker needs --coordinator, --world-size and --rank")
        if a.pre_sharded and (a.n_features is None or a.mode == "auto"):
            raise UsageError("--pre-sharded needs --n-features and an explicit --mode")
    cfg = _config_from_args(a)
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None

    ds = load_libsvm(a.data, a.n_features)
    valid = load_libsvm(a.valid, ds.num_features) if a.valid else None
    ledger = CommLedger()

    if a.role == "worker":
        model = booster.new_model(cfg, ds)
        part = ds if a.pre_sharded else partition(ds, a.world_size, cfg.partition_strategy)[a.rank]
        ledger.meta.update(K=model.K, num_classes=model.n_outputs, world_size=a.world_size)
        comm = TcpCommunicator(a.coordinator, a.rank, a.world_size, a.timeout, ledger)
        failed = True
        try:
            booster.train_worker(cfg, model, part, comm, valid if a.rank == 0 else None,
                                 _print_entry if a.rank == 0 else None)
            failed = False
        finally:
            comm.close(abort=failed)
    else:
        model = booster.train(cfg, ds, valid, callback=_print_entry, ledger=ledger)
        ledger.meta.update(K=model.K, num_classes=model.n_outputs, world_size=cfg.partitions)

    booster.save_model(model, a.model)
    if a.comm_ledger:
        ledger.dump(a.comm_ledger)
    return EXIT_OK


def cmd_predict(a) -> int:
    model = booster.load_model(a.model)
    n_features = a.n_features
    if n_features is None and not model.mode.hashed:
        n_features = model.num_features
    ds = load_libsvm(a.data, n_features)
    if not model.mode.hashed and ds.num_features > model.num_features:
        raise ValueError(
            f"data has {ds.num_features} features but the dense model expects {model.num_features}"
        )
    preds = booster.predict(model, ds, output=a.output, batches=a.batches)
    out = open(a.out, "w") if a.out and a.out != "-" else sys.stdout
    try:
        for row in preds.reshape(len(preds), -1):
            out.write("\t".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def read_predictions(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split("\t")])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad prediction line") from None
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"{path}: rows have different column counts")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def cmd_eval(a) -> int:
    preds = read_predictions(a.predictions)
    ds = load_libsvm(a.data)
    if len(preds) != ds.num_samples:
        raise ValueError(f"{len(preds)} predictions for {ds.num_samples} samples")
    res = evaluate(a.metric, preds, ds.labels)
    print(f"{res.metric}={res.value:.6f}")
    return EXIT_OK


def analytic_lines(K: int, C: int, S: int) -> list[str]:
    norm = collective.norm_stats_length(K)
    ab = collective.system_ab_length(K)
    per_worker = collective.predicted_comm_values(K, C)
    return [
        f"K={K} C={C} S={S}",
        f"norm_stats_values=2K+1={norm}",
        f"system_ab_values=C*(K^2+K)={C}*{ab}={C * ab}",
        f"values_per_worker_per_round={per_worker}",
        f"payload_bytes_per_worker_per_round={8 * per_worker}",
        f"values_all_workers_per_round={S * per_worker}",
    ]


def cmd_comm_report(a) -> int:
    if a.analytic:
        K, C, S = a.analytic
        if K < 1 or C < 1 or S < 1:
            raise UsageError("--analytic needs positive K C S")
        print("\n".join(analytic_lines(K, C, S)))
        return EXIT_OK
    if not a.ledger:
        raise UsageError("comm-report needs --ledger PATH or --analytic K C S")
    ledger = CommLedger.load(a.ledger)
    K, C = ledger.meta.get("K"), ledger.meta.get("num_classes", 1)
    predicted = collective.predicted_comm_values(K, C) if K else None
    for row in collective.ledger_report(ledger):
        for w, sent in row["payload_values_sent"].items():
            line = (f"round={row['round']} worker={w} payload_values_sent={sent} "
                    f"payload_values_received={row['payload_values_received'][w]} "
                    f"frames={row['frames'][w]} bytes_on_wire={row['bytes_on_wire'][w]}")
            if predicted is not None:
                line += f" predicted={predicted} match={'yes' if sent == predicted else 'no'}"
            print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gbun", description="Gradient boosting over untrained random networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", help="libsvm training file (gzip allowed)")
    t.add_argument("--valid", help="libsvm validation file, evaluated every --eval-every rounds")
    t.add_argument("--model", help="output model path")
    t.add_argument("--objective", default="binary:logistic",
                   choices=["binary:logistic", "multi:softmax", "reg:squared"])
    t.add_argument("--k", type=int, default=64, help="output neurons per network (default 64)")
    t.add_argument("--rounds", type=int, default=300, help="boosting rounds T (default 300)")
    t.add_argument("--eta", type=float, default=0.1, help="shrinkage (default 0.1)")
    t.add_argument("--lambda", dest="lam", type=float, default=1.0, help="L2 weight (default 1)")
    t.add_argument("--mode", default="auto", choices=["auto", "dense", "hashed"],
                   help="weight generation; auto picks hashed for wide or sparse data")
    t.add_argument("--seed", type=int, default=0, help="dense-mode base seed (default 0)")
    t.add_argument("--sparsify", type=float, default=0.9,
                   help="fraction of dense weights forced to zero (default 0.9)")
    t.add_argument("--num-classes", type=int, help="class count for multi:softmax")
    t.add_argument("--n-features", type=int, help="feature-count override")
    t.add_argument("--partitions", type=int, default=1, help="worker count in standalone mode")
    t.add_argument("--partition-strategy", default="contiguous",
                   choices=["contiguous", "round_robin"])
    t.add_argument("--transport", default="auto", choices=["auto", "none", "inprocess", "tcp"],
                   help="auto: none for one partition, inprocess otherwise")
    t.add_argument("--batches", type=int, default=1, help="forward the data in this many batches")
    t.add_argument("--eval-every", type=int, default=1, help="log interval in rounds")
    t.add_argument("--role", default="standalone", choices=["standalone", "coordinator", "worker"])
    t.add_argument("--coordinator", help="coordinator host:port (tcp roles)")
    t.add_argument("--world-size", type=int, help="number of workers (tcp roles)")
    t.add_argument("--rank", type=int, help="this worker's id in [0, world size)")
    t.add_argument("--pre-sharded", action="store_true",
                   help="--data already holds only this worker's rows")
    t.add_argument("--timeout", type=float, default=collective.DEFAULT_TIMEOUT,
                   help="network timeout in seconds (default 30)")
    t.add_argument("--comm-ledger", help="write the communication ledger (JSON) here")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="score a dataset")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", help="output file (default stdout)")
    pr.add_argument("--output", default="probability", choices=["probability", "raw"],
                   help="probabilities (sigmoid/softmax) or raw scores")
    pr.add_argument("--n-features", type=int, help="feature-count override")
    pr.add_argument("--batches", type=int, default=1)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", help="score predictions against labels")
    ev.add_argument("--predictions", required=True, help="file written by predict")
    ev.add_argument("--data", required=True, help="labeled libsvm file")
    ev.add_argument("--metric", required=True, choices=["auc", "map", "logloss"])
    ev.set_defaults(func=cmd_eval)

    cr = sub.add_parser("comm-report", help="predicted vs measured communication")
    cr.add_argument("--ledger", help="ledger written by train --comm-ledger")
    cr.add_argument("--analytic", type=int, nargs=3, metavar=("K", "C", "S"))
    cr.set_defaults(func=cmd_comm_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get("GBUN_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gbun: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as e:
        print(f"gbun: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CollectiveError as e:
        print(f"gbun: network error: {e}", file=sys.stderr)
        return EXIT_NETWORK
    except (LibsvmParseError, ModelFormatError, OSError, ValueError) as e:
        print(f"gbun: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
