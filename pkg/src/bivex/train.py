"""Training loop: teacher-forced cross-entropy under RMSProp with gradient
clipping, plateau-triggered learning-rate decay, and best-checkpoint
retention. Deterministic in single-worker mode for a fixed seed."""

from __future__ import annotations

import csv
import io
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from bivex import _tuning
from bivex import decoder as D
from bivex import model as M
from bivex import pgm
from bivex.datagen import Manifest, load_manifest
from bivex.model import ModelConfig, ModelParams
from bivex.optim import RmsPropState, clip_gradients, rmsprop_step, zero_grads
from bivex.routing import Direction, route
from bivex.tensor import Tape, Tensor


class NonFiniteLossError(RuntimeError):
    def __init__(self, iteration: int, batch_indices):
        self.iteration = iteration
        self.batch_indices = list(map(int, batch_indices))
        super().__init__(f"non-finite loss at iteration {iteration}, batch indices {self.batch_indices}")


@dataclass
class TrainConfig:
    """Desk-scale defaults. The paper-scale run (batch 512, 100k iterations,
    512 LSTM units) is documented but deliberately not the default."""

    iters: int = 3000
    batch: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.9
    patience: int = 10  # validation checks without improvement before decay
    clip_norm: float = 5.0
    val_interval: int = 100
    seed: int = 0
    use_dem: bool = False
    use_san: bool = False
    dem_kernel_swap: bool = False
    d_h: int = 128
    d_a: int = 128
    dtype: str = "float32"
    workers: int = 1
    out_dir: str | None = None
    stop_at_val_acc: float | None = None  # early exit for overfit-style runs
    verbose: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0,1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.val_interval < 1:
            raise ValueError("val_interval must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            use_dem=self.use_dem,
            use_san=self.use_san,
            dem_kernel_swap=self.dem_kernel_swap,
            d_h=self.d_h,
            d_a=self.d_a,
            dtype=self.dtype,
        )


@dataclass
class ReportRow:
    iteration: int
    loss: float  # mean train loss since the previous row
    val_acc: float
    lr: float
    clip_scale: float  # scale applied at this row's iteration


@dataclass
class TrainReport:
    rows: list[ReportRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["iteration", "loss", "val_acc", "lr", "clip_scale"])
        for r in self.rows:
            w.writerow([r.iteration, repr(r.loss), repr(r.val_acc), repr(r.lr), repr(r.clip_scale)])
        return buf.getvalue()

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @property
    def best_val_acc(self) -> float:
        return max((r.val_acc for r in self.rows), default=0.0)


@dataclass
class LoadedSet:
    """A manifest materialized as routed network inputs."""

    inputs: np.ndarray  # (N, C_in, H, W)
    horiz: np.ndarray  # (N,) bool
    labels: list[str]


def load_set(manifest: Manifest | str, config: ModelConfig) -> LoadedSet:
    if isinstance(manifest, str):
        manifest = load_manifest(manifest)
    inputs = []
    horiz = []
    labels = []
    for s in manifest.samples:
        img = pgm.read_pgm(manifest.resolve(s))
        routed = route(img, target=(config.h_net, config.w_net))
        inputs.append(M.model_input(routed, config))
        horiz.append(routed.direction is Direction.HORIZONTAL)
        labels.append(s.label.lower())
    return LoadedSet(
        inputs=np.stack(inputs).astype(config.np_dtype),
        horiz=np.asarray(horiz, dtype=bool),
        labels=labels,
    )


def _batch_loss_and_grads(params: ModelParams, data: LoadedSet, idx: np.ndarray, workers: int = 1) -> float:
    """Forward+backward over one batch; gradients land on ``params``.

    With ``workers > 1`` the batch is sharded, each shard runs on its own
    tape against a data-shared parameter clone, and the per-shard gradients
    are summed (determinism is only guaranteed single-worker).
    """
    if workers <= 1 or len(idx) < 2 * workers:
        with Tape() as tape:
            feats = M.encode_features(params, Tensor(data.inputs[idx]))
            loss = D.teacher_loss_batch(
                feats,
                data.horiz[idx],
                [data.labels[i] for i in idx],
                params.decoder,
                vocab=params.vocab,
                t_max=params.config.t_max,
            )
        tape.backward(loss)
        return loss.item()

    shards = np.array_split(idx, workers)
    clones = [M.params_from_named(params.config, {k: t.data for k, t in params.named().items()}) for _ in shards]

    def run(shard, clone):
        with Tape() as tape:
            feats = M.encode_features(clone, Tensor(data.inputs[shard]))
            loss = D.teacher_loss_batch(
                feats,
                data.horiz[shard],
                [data.labels[i] for i in shard],
                clone.decoder,
                vocab=clone.vocab,
                t_max=clone.config.t_max,
            )
        tape.backward(loss)
        return loss.item() * len(shard)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        totals = list(pool.map(run, shards, clones))
    # coordinator sums shard gradients weighted by shard size
    named = params.named()
    for name, master in named.items():
        parts = []
        for shard, clone in zip(shards, clones):
            g = clone.named()[name].grad
            if g is not None:
                parts.append(g * (len(shard) / len(idx)))
        if parts:
            master.grad = sum(parts[1:], parts[0])
    return float(sum(totals) / len(idx))


def evaluate_accuracy(params: ModelParams, data: LoadedSet | Manifest | str) -> float:
    """Lexicon-free sequence accuracy: exact case-insensitive match."""
    if not isinstance(data, LoadedSet):
        data = load_set(data, params.config)
    if not data.labels:
        return 0.0
    preds = M.predict_texts(params, data.inputs, data.horiz)
    hits = sum(p == l for p, l in zip(preds, data.labels))
    return hits / len(data.labels)


@dataclass
class TrainOutcome:
    params: ModelParams  # best-validation weights
    report: TrainReport
    best_val_acc: float
    best_iteration: int
    final_params: ModelParams
    rmsprop: RmsPropState
    rng_state: dict
    iteration: int


def train(
    config: TrainConfig,
    train_manifest: Manifest | str,
    val_manifest: Manifest | str,
    resume: "TrainState | None" = None,
) -> TrainOutcome:
    _tuning.apply(blas_threads=1)
    mconfig = config.model_config()
    train_data = load_set(train_manifest, mconfig)
    val_data = load_set(val_manifest, mconfig)
    if not len(train_data.labels):
        raise ValueError("training manifest is empty")
    if not len(val_data.labels):
        raise ValueError("validation manifest is empty")

    if resume is not None:
        params = resume.params
        state = resume.rmsprop
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_iter = resume.iteration
        best_acc = resume.best_val_acc
        best_iter = resume.best_iteration
        bad_checks = resume.bad_checks
        best_params = params.copy()
    else:
        params = M.init_model(mconfig, seed=config.seed)
        state = RmsPropState(learning_rate=config.lr)
        rng = np.random.default_rng(config.seed)
        start_iter = 0
        best_acc = -1.0
        best_iter = -1
        bad_checks = 0
        best_params = params.copy()

    named = params.named()
    report = TrainReport()
    loss_accum: list[float] = []
    n = len(train_data.labels)
    t0 = time.perf_counter()
    last_iter = start_iter

    for it in range(start_iter + 1, config.iters + 1):
        last_iter = it
        idx = rng.integers(0, n, size=config.batch)
        loss = _batch_loss_and_grads(params, train_data, idx, workers=config.workers)
        if not np.isfinite(loss):
            raise NonFiniteLossError(it, idx)
        loss_accum.append(loss)
        scale = clip_gradients(named.values(), config.clip_norm)
        rmsprop_step(named, state)
        zero_grads(named.values())

        if it % config.val_interval == 0 or it == config.iters:
            acc = evaluate_accuracy(params, val_data)
            report.rows.append(
                ReportRow(
                    iteration=it,
                    loss=float(np.mean(loss_accum)),
                    val_acc=acc,
                    lr=state.learning_rate,
                    clip_scale=scale,
                )
            )
            loss_accum.clear()
            if config.verbose:
                print(
                    f"[bivex] iter {it}/{config.iters} loss {report.rows[-1].loss:.4f} "
                    f"val_acc {acc:.4f} lr {state.learning_rate:.2e} ({time.perf_counter() - t0:.1f}s)",
                    file=sys.stderr,
                )
            if acc > best_acc:
                best_acc = acc
                best_iter = it
                bad_checks = 0
                best_params = params.copy()
            else:
                bad_checks += 1
                if bad_checks >= config.patience:
                    state.learning_rate *= config.lr_decay
                    bad_checks = 0
            if config.stop_at_val_acc is not None and acc >= config.stop_at_val_acc:
                break

    return TrainOutcome(
        params=best_params,
        report=report,
        best_val_acc=best_acc,
        best_iteration=best_iter,
        final_params=params,
        rmsprop=state,
        rng_state=rng.bit_generator.state,
        iteration=last_iter,
    )


@dataclass
class TrainState:
    """Mid-training snapshot sufficient to resume the exact trajectory."""

    params: ModelParams
    rmsprop: RmsPropState
    rng_state: dict
    iteration: int
    best_val_acc: float
    best_iteration: int
    bad_checks: int
