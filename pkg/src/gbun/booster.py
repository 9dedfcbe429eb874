"""Boosting over untrained random networks: training, prediction, persistence.

Each round draws a fresh random single-layer network, softly assigns every
sample to its ``K`` outputs (normalize, then softmax) and fits one score per
output by a closed-form second-order step. In distributed training a worker
only exchanges two reductions per round, both sized by ``K``: the
normalization sums and the ``(A, B)`` system (once per class).
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import collective
from .collective import (
    METRICS,
    NORM_STATS,
    SYSTEM_AB,
    CommLedger,
    Communicator,
    InProcessGroup,
    ReducePayload,
    TcpCommunicator,
    TcpCoordinator,
)
from .dataset import SparseDataset, iter_batches, partition, plan_batches
from .forward import NormStats, UntrainedNetSpec, assignments, forward_raw, norm_sums
from .hashwgen import DENSE_PRNG, WeightMode
from .metrics import auc, mean_average_precision
from .objective import get_objective
from .solver import accumulate_AB, solve_weights

log = logging.getLogger(__name__)

MODEL_FORMAT = "gbun-model"
MODEL_VERSION = 1
_BLOB_MAGIC = b"GBUNMDL"

HASHED_MIN_FEATURES = 10_000
HASHED_MAX_DENSITY = 0.10


class ModelFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    objective: str = "binary:logistic"
    K: int = 64
    rounds: int = 300
    eta: float = 0.1
    lam: float = 1.0
    mode: str = "auto"  # auto | dense | hashed
    seed: int = 0
    sparsify_fraction: float = 0.9
    num_classes: int | None = None
    partitions: int = 1
    partition_strategy: str = "contiguous"
    transport: str = "none"  # none | inprocess | tcp
    batches: int = 1
    eval_every: int = 1
    timeout: float = collective.DEFAULT_TIMEOUT

    def validate(self):
        get_objective(self.objective)
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.mode not in ("auto", "dense", "hashed"):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if self.transport not in ("none", "inprocess", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.transport == "none" and self.partitions != 1:
            raise ValueError("partitions > 1 needs the inprocess or tcp transport")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if not 0.0 <= self.sparsify_fraction < 1.0:
            raise ValueError("sparsify_fraction must be in [0, 1)")
        return self


@dataclass
class RoundModel:
    round_index: int
    norm_stats: NormStats
    weights: np.ndarray  # C x K
    jitter: float | None = None


@dataclass
class BoosterModel:
    objective: str
    K: int
    eta: float
    lam: float
    mode: WeightMode
    num_features: int
    num_classes: int
    rounds: list[RoundModel] = field(default_factory=list)
    history: list[dict] = field(default_factory=list, repr=False, compare=False)
    train_scores: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def T(self) -> int:
        return len(self.rounds)

    @property
    def n_outputs(self) -> int:
        return get_objective(self.objective).n_outputs(self.num_classes)

    def net(self, round_index: int) -> UntrainedNetSpec:
        return UntrainedNetSpec(round_index, self.K, self.num_features, self.mode)


def select_mode(config: TrainConfig, ds: SparseDataset) -> WeightMode:
    """Hashed for wide or sparse data, dense otherwise, unless forced."""
    variant = config.mode
    if variant == "auto":
        wide = ds.num_features > HASHED_MIN_FEATURES
        sparse = ds.density() < HASHED_MAX_DENSITY
        variant = "hashed" if wide or sparse else "dense"
    if variant == "hashed":
        return WeightMode("hashed")
    return WeightMode("dense", config.seed, config.sparsify_fraction, DENSE_PRNG)


def _num_classes(config: TrainConfig, labels) -> int:
    obj = get_objective(config.objective)
    if not obj.multiclass:
        return 1
    if config.num_classes is not None:
        return config.num_classes
    return int(np.max(labels)) + 1 if len(labels) else 2


def new_model(config: TrainConfig, ds: SparseDataset) -> BoosterModel:
    """Empty model whose global settings (mode, m, C) come from the full dataset."""
    config.validate()
    C = _num_classes(config, ds.labels)
    get_objective(config.objective).check_labels(ds.labels, C)
    return BoosterModel(
        objective=config.objective, K=config.K, eta=config.eta, lam=config.lam,
        mode=select_mode(config, ds), num_features=ds.num_features, num_classes=C,
    )


def _forward(X: SparseDataset, net: UntrainedNetSpec, batches: int) -> np.ndarray:
    if batches == 1 or X.num_samples <= 1:
        return forward_raw(X, net)
    plan = plan_batches(X, batches)
    return np.concatenate([forward_raw(b, net) for b in iter_batches(X, plan)])


def _contribution(P: np.ndarray, W: np.ndarray, eta: float) -> np.ndarray:
    return eta * (P @ W.T)


def _reduce(comm: Communicator | None, opcode: int, rnd: int, values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if comm is None:
        return values
    return comm.allreduce_sum(ReducePayload(opcode, rnd, values)).values


@dataclass
class _Validation:
    ds: SparseDataset
    metric: str
    scores: np.ndarray


def _valid_metric(model: BoosterModel, v: _Validation) -> float:
    obj = get_objective(model.objective)
    if v.metric == "auc":
        return auc(v.scores[:, 0], v.ds.labels)
    if v.metric == "map":
        return mean_average_precision(obj.transform(v.scores), v.ds.labels)
    return obj.loss_sum(v.scores, v.ds.labels) / max(v.ds.num_samples, 1)


def default_metric(objective: str) -> str:
    return {"binary:logistic": "auc", "multi:softmax": "map"}.get(objective, "loss")


def train_worker(
    config: TrainConfig,
    model: BoosterModel,
    part: SparseDataset,
    comm: Communicator | None = None,
    valid: SparseDataset | None = None,
    callback: Callable[[dict], None] | None = None,
) -> np.ndarray:
    """Run all rounds for one data partition, appending rounds to ``model``.

    ``comm=None`` is the transport-free single-node path. Returns the tracked
    training scores of this partition.
    """
    obj = get_objective(model.objective)
    C = model.n_outputs
    y = part.labels
    scores = np.zeros((part.num_samples, C))
    v = None
    if valid is not None:
        v = _Validation(valid, default_metric(model.objective), np.zeros((valid.num_samples, C)))
    rank = comm.rank if comm is not None else 0

    for t in range(model.T + 1, model.T + config.rounds + 1):
        net = model.net(t)
        gh = obj.grad_hess(scores, y)
        Z = _forward(part, net, config.batches)

        a, b, n = norm_sums(Z)
        sums = _reduce(comm, NORM_STATS, t, np.concatenate([a, b, [n]]))
        K = model.K
        stats = NormStats.from_sums(sums[:K], sums[K:2 * K], sums[2 * K])
        P = assignments(Z, stats)

        W = np.empty((C, K))
        jitter = None
        for c in range(C):
            A, B = accumulate_AB(P, gh.g[:, c], gh.h[:, c])
            AB = _reduce(comm, SYSTEM_AB, t, np.concatenate([A.reshape(-1), B]))
            W[c], info = solve_weights(AB[:K * K].reshape(K, K), AB[K * K:], model.lam,
                                       return_info=True)
            if info["jitter"] is not None:
                jitter = max(jitter or 0.0, info["jitter"])
        model.rounds.append(RoundModel(t, stats, W, jitter))
        scores += _contribution(P, W, model.eta)

        if config.eval_every and (t % config.eval_every == 0 or t == config.rounds):
            loss = _reduce(comm, METRICS, t, [obj.loss_sum(scores, y), part.num_samples])
            entry = {"round": t, "train_loss": float(loss[0] / loss[1])}
            if v is not None:
                Pv = assignments(_forward(v.ds, net, config.batches), stats)
                v.scores += _contribution(Pv, W, model.eta)
                entry[f"valid_{v.metric}"] = _valid_metric(model, v)
            if comm is not None and comm.ledger is not None:
                c = comm.ledger.rounds.get(t, {}).get(rank)
                entry["comm_values"] = c.payload_values_sent if c else 0
            else:
                entry["comm_values"] = 0
            if jitter is not None:
                entry["jitter"] = jitter
            if rank == 0:
                model.history.append(entry)
                if callback is not None:
                    callback(entry)
        elif v is not None:
            Pv = assignments(_forward(v.ds, net, config.batches), stats)
            v.scores += _contribution(Pv, W, model.eta)
    return scores


def _run_workers(config, parts, make_comm, abort, model_proto, valid, callback):
    S = len(parts)
    models = [replace(model_proto, rounds=list(model_proto.rounds), history=[]) for _ in range(S)]
    scores: list = [None] * S
    errors: list = [None] * S

    def work(r):
        comm = None
        failed = False
        try:
            comm = make_comm(r)
            scores[r] = train_worker(config, models[r], parts[r], comm,
                                     valid if r == 0 else None,
                                     callback if r == 0 else None)
        except BaseException as e:
            failed = True
            errors[r] = e
            abort()
        finally:
            if comm is not None:
                comm.close(abort=failed)

    threads = [threading.Thread(target=work, args=(r,), name=f"gbun-worker-{r}") for r in range(S)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for e in errors:
        if e is not None and not isinstance(e, collective.CollectiveError):
            raise e
    for e in errors:
        if e is not None:
            raise e
    return models, scores


def train(
    config: TrainConfig,
    train_ds: SparseDataset,
    valid_ds: SparseDataset | None = None,
    callback: Callable[[dict], None] | None = None,
    ledger: CommLedger | None = None,
) -> BoosterModel:
    """Train a model; ``config.transport`` picks single-node or S-worker training.

    Multi-worker runs use threads in this process (in-process barrier or a
    localhost TCP coordinator); all workers end with the same model and
    worker 0's copy is returned. ``model.train_scores`` holds the tracked
    training scores in original row order.
    """
    config.validate()
    if train_ds.num_samples == 0:
        raise ValueError("training data is empty")
    model = new_model(config, train_ds)
    if valid_ds is not None and valid_ds.num_features != model.num_features:
        valid_ds = valid_ds.with_num_features(max(valid_ds.num_features, model.num_features))

    if config.transport == "none":
        scores = train_worker(config, model, train_ds, None, valid_ds, callback)
        model.train_scores = scores
        return model

    S = config.partitions
    parts = partition(train_ds, S, config.partition_strategy)
    if config.transport == "inprocess":
        group = InProcessGroup(S, config.timeout, ledger)
        models, scores = _run_workers(config, parts, group.communicator, group.abort,
                                      model, valid_ds, callback)
    else:
        coord = TcpCoordinator("127.0.0.1", 0, S, config.timeout).start()

        def make_comm(r):
            return TcpCommunicator(coord.address, r, S, config.timeout, ledger)

        models, scores = _run_workers(config, parts, make_comm, lambda: None,
                                      model, valid_ds, callback)
        coord.join(config.timeout)
        if coord.error is not None:
            raise coord.error
    for other in models[1:]:
        for r0, r1 in zip(models[0].rounds, other.rounds):
            if not np.array_equal(r0.weights, r1.weights):
                raise RuntimeError(f"workers disagree on round {r0.round_index} weights")
    out = models[0]
    out.train_scores = _unpartition(scores, train_ds.num_samples, S, config.partition_strategy)
    return out


def _unpartition(scores, n, S, strategy):
    from .dataset import partition_rows

    out = np.empty((n, scores[0].shape[1]))
    for rows, s in zip(partition_rows(n, S, strategy), scores):
        out[rows] = s
    return out


def predict_raw(model: BoosterModel, X, batches: int = 1) -> np.ndarray:
    """Summed round scores, shape ``(n, C)``, using the stored normalization."""
    if not isinstance(X, SparseDataset):
        X = SparseDataset.from_csr(X, np.zeros(X.shape[0]))
    scores = np.zeros((X.num_samples, model.n_outputs))
    for r in model.rounds:
        P = assignments(_forward(X, model.net(r.round_index), batches), r.norm_stats)
        scores += _contribution(P, r.weights, model.eta)
    return scores


def predict(model: BoosterModel, X, output: str = "raw", batches: int = 1) -> np.ndarray:
    """Scores (``output='raw'``) or probabilities (``'probability'``)."""
    scores = predict_raw(model, X, batches)
    if output == "raw":
        return scores
    if output == "probability":
        obj = get_objective(model.objective)
        out = obj.transform(scores)
        return out.reshape(len(scores), -1)
    raise ValueError(f"unknown output type {output!r}")


# -- persistence -------------------------------------------------------------

_ROUND_HEAD = struct.Struct("<Id")
_BLOB_HEAD = struct.Struct("<7sBIII")

LAYOUT_DOC = (
    "payload = base64(blob); blob = b'GBUNMDL' | version u8 | num_rounds u32 | K u32 | C u32, "
    "then per round: round_index u32 | jitter f64 (0 = none) | mean K*f64 | std K*f64 | "
    "count f64 | weights C*K*f64 (row-major, class-major); all little-endian"
)


def _encode_rounds(model: BoosterModel) -> bytes:
    K, C = model.K, model.n_outputs
    chunks = [_BLOB_HEAD.pack(_BLOB_MAGIC, MODEL_VERSION, model.T, K, C)]
    for r in model.rounds:
        chunks.append(_ROUND_HEAD.pack(r.round_index, r.jitter or 0.0))
        chunks.append(np.asarray(r.norm_stats.mean, dtype="<f8").tobytes())
        chunks.append(np.asarray(r.norm_stats.std, dtype="<f8").tobytes())
        chunks.append(np.asarray([r.norm_stats.count], dtype="<f8").tobytes())
        chunks.append(np.asarray(r.weights, dtype="<f8").reshape(C, K).tobytes())
    return b"".join(chunks)


def _decode_rounds(blob: bytes, K: int, C: int) -> list[RoundModel]:
    if len(blob) < _BLOB_HEAD.size:
        raise ModelFormatError("model payload truncated")
    magic, version, T, k, c = _BLOB_HEAD.unpack_from(blob)
    if magic != _BLOB_MAGIC:
        raise ModelFormatError("bad model payload magic")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model payload version {version}")
    if (k, c) != (K, C):
        raise ModelFormatError("payload shape disagrees with the model header")
    per_round = _ROUND_HEAD.size + 8 * (2 * K + 1 + C * K)
    if len(blob) != _BLOB_HEAD.size + T * per_round:
        raise ModelFormatError("model payload truncated or oversized")
    rounds = []
    off = _BLOB_HEAD.size
    for _ in range(T):
        t, jitter = _ROUND_HEAD.unpack_from(blob, off)
        off += _ROUND_HEAD.size
        vals = np.frombuffer(blob, dtype="<f8", count=2 * K + 1 + C * K, offset=off).astype(np.float64)
        off += 8 * len(vals)
        stats = NormStats(vals[:K].copy(), vals[K:2 * K].copy(), int(vals[2 * K]))
        W = vals[2 * K + 1:].reshape(C, K).copy()
        rounds.append(RoundModel(t, stats, W, jitter or None))
    return rounds


def model_to_json(model: BoosterModel) -> str:
    blob = _encode_rounds(model)
    doc = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_VERSION,
        "objective": model.objective,
        "K": model.K,
        "T": model.T,
        "eta": model.eta,
        "lambda": model.lam,
        "mode": model.mode.to_dict(),
        "num_features": model.num_features,
        "num_classes": model.num_classes,
        "layout": LAYOUT_DOC,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "payload": base64.b64encode(blob).decode("ascii"),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def model_from_json(text: str) -> BoosterModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"model file is not valid JSON (truncated?): {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a GBUN model file")
    if doc.get("format_version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {doc.get('format_version')!r} "
            f"(this build reads version {MODEL_VERSION})"
        )
    try:
        blob = base64.b64decode(doc["payload"], validate=True)
        if hashlib.sha256(blob).hexdigest() != doc["sha256"]:
            raise ModelFormatError("model payload checksum mismatch")
        model = BoosterModel(
            objective=doc["objective"], K=int(doc["K"]), eta=float(doc["eta"]),
            lam=float(doc["lambda"]), mode=WeightMode.from_dict(doc["mode"]),
            num_features=int(doc["num_features"]), num_classes=int(doc["num_classes"]),
        )
        model.rounds = _decode_rounds(blob, model.K, model.n_outputs)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {e}") from None
    if len(model.rounds) != doc["T"]:
        raise ModelFormatError("round count disagrees with the model header")
    return model


def save_model(model: BoosterModel, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> BoosterModel:
    with open(path, encoding="ascii") as fh:
        return model_from_json(fh.read())
