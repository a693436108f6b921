"""Adam optimization and the three-phase pruning pipeline.

Phase one trains the dense model on the prediction loss alone. Phase two
continues on the mixed loss, prediction plus the reweighted group-Lasso
penalty, with the penalty weight lambda ramped linearly from zero and
the gamma coefficients refreshed at milestone steps. After hard pruning,
phase three retrains on the prediction loss while forcing pruned entries
back to zero after every single optimizer step.

Batches are cycled in dataset order, never reshuffled, so a run is a
pure function of (config, seed). With lambda_max = 0 and no milestones
the reweighted loop takes exactly the same arithmetic path as
`plain_train`, which the test suite checks bit for bit.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import BlockpruneError, MaskError, NonFiniteError, ShapeError
from .model import (
    ArchConfig,
    Batch,
    ModelParams,
    build_model,
    evaluate,
    loss_and_gradients,
    make_synthetic_dataset,
)
from .numerics import make_rng
from .pruner import (
    PruneMask,
    PruneSpec,
    model_compression_rate,
    model_compression_rate_all,
    prune_model,
)
from .regularizer import (
    BlockPartition,
    GammaWeights,
    gamma_update,
    make_partition,
    penalty,
    penalty_grad,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def param_keys(params: ModelParams) -> list[str]:
    """All optimizable keys in registry order, biases as '<name>.bias'."""
    keys = []
    for name, t in params.items():
        keys.append(name)
        if t.bias is not None:
            keys.append(f"{name}.bias")
    return keys


def param_array(params: ModelParams, key: str) -> np.ndarray:
    if key.endswith(".bias"):
        bias = params.tensor(key[: -len(".bias")]).bias
        if bias is None:
            raise ShapeError(f"tensor {key!r} has no bias")
        return bias
    return params.tensor(key).matrix


def make_adam(params: ModelParams, learning_rate: float) -> AdamState:
    if not learning_rate > 0:
        raise ShapeError(f"learning rate must be positive, got {learning_rate}")
    state = AdamState(learning_rate=learning_rate)
    for key in param_keys(params):
        arr = param_array(params, key)
        state.m[key] = np.zeros_like(arr)
        state.v[key] = np.zeros_like(arr)
    return state


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place, over every known key."""
    state.step += 1
    t = state.step
    for key in param_keys(params):
        if key not in grads:
            raise ShapeError(f"gradient missing for {key!r}")
        arr = param_array(params, key)
        g = grads[key]
        if g.shape != arr.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match {key!r} {arr.shape}"
            )
        m, v = state.m[key], state.v[key]
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        arr -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    params.bump()


@dataclass
class TrainConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    train_samples: int = 20000
    eval_samples: int = 2000
    batch_size: int = 32
    seed: int = 42
    baseline_steps: int = 3750
    learning_rate: float = 3e-5  # baseline and retraining
    reweighted_learning_rate: float | None = None  # defaults to learning_rate
    t1: int = 8000
    t2: int = 2500
    milestones: tuple[int, ...] = ()
    lambda_max: float = 1e-4
    lambda_warmup_steps: int = 200
    eval_every: int = 500
    prune_spec: PruneSpec = field(default_factory=lambda: PruneSpec(entries=()))
    prunable_overrides: dict[str, bool] = field(default_factory=dict)

    def validate(self) -> None:
        self.arch.validate()
        if self.arch.classes < self.arch.vocab:
            # synthetic labels are token ids, so every id needs a class
            raise ShapeError(
                f"classes ({self.arch.classes}) must cover the vocab "
                f"({self.arch.vocab}) for the modal-token task"
            )
        if self.train_samples < 1 or self.eval_samples < 1:
            raise ShapeError("sample counts must be positive")
        if self.batch_size < 1:
            raise ShapeError("batch_size must be positive")
        if min(self.baseline_steps, self.t1, self.t2) < 0:
            raise ShapeError("step counts must be >= 0")
        if self.lambda_max < 0:
            raise ShapeError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.lambda_warmup_steps < 1:
            raise ShapeError("lambda_warmup_steps must be >= 1")
        if not self.learning_rate > 0:
            raise ShapeError("learning_rate must be positive")
        ms = self.milestones
        if any(ms[i] >= ms[i + 1] for i in range(len(ms) - 1)):
            raise ShapeError("milestones must be strictly increasing")
        if ms and (ms[0] < 1 or ms[-1] >= self.t1):
            raise ShapeError("milestones must lie in [1, t1)")

    @property
    def rw_learning_rate(self) -> float:
        if self.reweighted_learning_rate is None:
            return self.learning_rate
        return self.reweighted_learning_rate


@dataclass
class RunReport:
    phase: str
    hyper: dict = field(default_factory=dict)
    # one row per step: (step, lambda, prediction_loss, penalty, mixed_loss)
    steps: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    accuracy_at: list[tuple[int, float]] = field(default_factory=list)
    compression: float | None = None
    wall_clock: float = 0.0
    # retraining only, one entry per step
    masked_abs_max: list[float] = field(default_factory=list)
    masked_sparsity: list[float] = field(default_factory=list)


def save_report(report: RunReport, path: str, meta: dict | None = None) -> None:
    lines = ["# blockprune run report v1", f"# phase={report.phase}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    for key in sorted(report.hyper):
        lines.append(f"# {key}={report.hyper[key]!r}")
    acc = dict(report.accuracy_at)
    for step, lam, pred, pen, mixed in report.steps:
        row = (
            f"step={step} lambda={lam!r} prediction_loss={pred!r} "
            f"penalty={pen!r} mixed_loss={mixed!r}"
        )
        if step in acc:
            row += f" accuracy={acc[step]!r}"
        lines.append(row)
    if report.compression is not None:
        lines.append(f"# compression={report.compression!r}")
    lines.append(f"# wall_clock_seconds={report.wall_clock!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _check_finite(value: float, params: ModelParams, step: int) -> None:
    if np.isfinite(value):
        return
    for name, t in params.items():
        if not np.isfinite(t.matrix).all():
            raise NonFiniteError(
                f"non-finite loss at step {step}; tensor {name!r} has "
                f"non-finite entries"
            )
    raise NonFiniteError(f"non-finite loss at step {step}")


def _maybe_eval(params, eval_dataset, step, every, total, out):
    if eval_dataset is None or every < 1:
        return
    if step % every == 0 or step == total:
        out.append((step, evaluate(params, eval_dataset)))


def plain_train(params: ModelParams, dataset: list[Batch], steps: int,
                learning_rate: float, batch_size: int | None = None,
                eval_dataset: list[Batch] | None = None,
                eval_every: int = 0) -> RunReport:
    """Reference Adam loop on the prediction loss alone."""
    if not dataset:
        raise ShapeError("dataset is empty")
    started = time.perf_counter()
    report = RunReport(
        phase="plain",
        hyper={
            "learning_rate": learning_rate,
            "beta1": ADAM_BETA1,
            "beta2": ADAM_BETA2,
            "eps_adam": ADAM_EPS,
            "batch_size": batch_size or dataset[0].labels.size,
        },
    )
    state = make_adam(params, learning_rate)
    n_batches = len(dataset)
    for s in range(1, steps + 1):
        batch = dataset[(s - 1) % n_batches]
        pred, grads = loss_and_gradients(params, batch)
        _check_finite(pred, params, s)
        adam_step(params, grads, state)
        report.steps.append((s, 0.0, pred, 0.0, pred))
        _maybe_eval(params, eval_dataset, s, eval_every, steps, report.accuracy_at)
    report.wall_clock = time.perf_counter() - started
    return report


def _spec_partitions(params: ModelParams,
                     spec: PruneSpec) -> dict[str, BlockPartition]:
    parts = {}
    for entry in spec.entries:
        t = params.tensor(entry.layer_name)
        if not t.prunable:
            raise ShapeError(
                f"penalty targets non-prunable layer {entry.layer_name!r}"
            )
        rows, cols = t.matrix.shape
        parts[entry.layer_name] = make_partition(
            rows, cols, entry.axis, entry.num_blocks, entry.layer_name
        )
    return parts


def reweighted_train(
    params: ModelParams, dataset: list[Batch], config: TrainConfig,
    eval_dataset: list[Batch] | None = None,
) -> tuple[ModelParams, list[dict[str, GammaWeights]], RunReport]:
    """Mixed-loss training: prediction loss plus the reweighted penalty.

    Gamma is computed once at the start and refreshed at each milestone
    step before that step's losses; in between it is a constant. Returns
    the gamma history (initial values plus one snapshot per milestone).
    """
    config.validate()
    if not dataset:
        raise ShapeError("dataset is empty")
    started = time.perf_counter()
    lr = config.rw_learning_rate
    report = RunReport(
        phase="reweighted",
        hyper={
            "learning_rate": lr,
            "beta1": ADAM_BETA1,
            "beta2": ADAM_BETA2,
            "eps_adam": ADAM_EPS,
            "batch_size": config.batch_size,
            "lambda_max": config.lambda_max,
            "lambda_warmup_steps": config.lambda_warmup_steps,
        },
    )
    parts = _spec_partitions(params, config.prune_spec)
    gammas = {
        name: gamma_update(params.tensor(name).matrix, part)
        for name, part in parts.items()
    }
    history = [dict(gammas)]
    milestones = set(config.milestones)
    state = make_adam(params, lr)
    n_batches = len(dataset)
    for s in range(1, config.t1 + 1):
        if s in milestones:
            gammas = {
                name: gamma_update(
                    params.tensor(name).matrix, part, prev=gammas[name]
                )
                for name, part in parts.items()
            }
            history.append(dict(gammas))
        lam = config.lambda_max * min(1.0, s / config.lambda_warmup_steps)
        batch = dataset[(s - 1) % n_batches]
        pred, grads = loss_and_gradients(params, batch)
        pen = 0.0
        if lam > 0.0:
            # guard keeps the lambda_max=0 path arithmetically identical
            # to plain_train
            for name, part in parts.items():
                w = params.tensor(name).matrix
                pen += penalty(w, part, gammas[name], lam)
                grads[name] = grads[name] + penalty_grad(
                    w, part, gammas[name], lam
                )
        mixed = pred + pen
        _check_finite(mixed, params, s)
        adam_step(params, grads, state)
        report.steps.append((s, lam, pred, pen, mixed))
        _maybe_eval(
            params, eval_dataset, s, config.eval_every, config.t1,
            report.accuracy_at,
        )
    report.wall_clock = time.perf_counter() - started
    return params, history, report


def make_masks_and_prune(params: ModelParams,
                         spec: PruneSpec) -> dict[str, PruneMask]:
    return prune_model(params, spec)


def retrain(params: ModelParams, masks: dict[str, PruneMask],
            dataset: list[Batch], config: TrainConfig,
            eval_dataset: list[Batch] | None = None) -> tuple[ModelParams, RunReport]:
    """Masked fine-tuning: after every Adam step, W <- W * mask.

    Gradients are computed on the full matrices; the mask multiply after
    the step is what discards pruned updates, so masked entries are
    exactly zero at every step boundary. The report records, per step,
    the max |value| over masked entries and the realized sparsity of the
    masked tensors.
    """
    config.validate()
    if not dataset:
        raise ShapeError("dataset is empty")
    for name, mask in masks.items():
        t = params.tensor(name)
        if mask.bits.shape != t.matrix.shape:
            raise MaskError(
                f"mask shape {mask.bits.shape} does not match layer "
                f"{name!r} {t.matrix.shape}"
            )
    started = time.perf_counter()
    report = RunReport(
        phase="retrain",
        hyper={
            "learning_rate": config.learning_rate,
            "beta1": ADAM_BETA1,
            "beta2": ADAM_BETA2,
            "eps_adam": ADAM_EPS,
            "batch_size": config.batch_size,
        },
    )
    zero_idx = {name: masks[name].bits == 0.0 for name in masks}
    # apply once up front so a not-yet-pruned matrix cannot leak through;
    # assignment writes +0.0 rather than the -0.0 a multiply can leave
    for name, z in zero_idx.items():
        params.tensor(name).matrix[z] = 0.0
    masked_total = sum(int(z.sum()) for z in zero_idx.values())
    all_total = sum(masks[name].bits.size for name in masks)
    state = make_adam(params, config.learning_rate)
    n_batches = len(dataset)
    for s in range(1, config.t2 + 1):
        batch = dataset[(s - 1) % n_batches]
        pred, grads = loss_and_gradients(params, batch)
        _check_finite(pred, params, s)
        adam_step(params, grads, state)
        for name, z in zero_idx.items():
            params.tensor(name).matrix[z] = 0.0
        worst = 0.0
        for name, z in zero_idx.items():
            if z.any():
                worst = max(
                    worst, float(np.abs(params.tensor(name).matrix[z]).max())
                )
        report.masked_abs_max.append(worst)
        report.masked_sparsity.append(masked_total / all_total if all_total else 0.0)
        report.steps.append((s, 0.0, pred, 0.0, pred))
        _maybe_eval(
            params, eval_dataset, s, config.eval_every, config.t2,
            report.accuracy_at,
        )
    report.wall_clock = time.perf_counter() - started
    return params, report


@dataclass
class PipelineResult:
    params: ModelParams
    masks: dict[str, PruneMask]
    baseline_accuracy: float
    pruned_accuracy: float
    final_accuracy: float
    compression: float
    compression_all: float
    reports: dict[str, RunReport]
    gamma_history: list[dict[str, GammaWeights]]
    wall_clock: float


def derive_seeds(seed: int, n: int) -> list[int]:
    """Deterministic child seeds for init / train data / eval data."""
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(n)]


@contextmanager
def _phase(name: str):
    """Tag escaping errors with the pipeline phase they came from."""
    try:
        yield
    except BlockpruneError as exc:
        raise exc.__class__(f"{name} phase: {exc}") from exc


def run_pipeline(config: TrainConfig, out_dir: str | None = None,
                 verbose: bool = False) -> PipelineResult:
    """Full run: build, baseline train, reweight, prune, retrain, evaluate.

    A fixed seed makes the whole run bit-reproducible. When out_dir is
    given, reports, masks, and checkpoints are written there.
    """
    config.validate()
    started = time.perf_counter()
    init_seed, train_seed, eval_seed = derive_seeds(config.seed, 3)
    params = build_model(
        config.arch, make_rng(init_seed),
        prunable_overrides=config.prunable_overrides,
    )
    train_ds = make_synthetic_dataset(
        train_seed, config.train_samples, config.arch.seq_len,
        config.arch.vocab, config.batch_size,
    )
    eval_ds = make_synthetic_dataset(
        eval_seed, config.eval_samples, config.arch.seq_len,
        config.arch.vocab, config.batch_size,
    )

    def say(msg):
        if verbose:
            print(msg, flush=True)

    say(f"baseline: {config.baseline_steps} steps at lr {config.learning_rate}")
    with _phase("baseline"):
        baseline_report = plain_train(
            params, train_ds, config.baseline_steps, config.learning_rate,
            batch_size=config.batch_size, eval_dataset=eval_ds,
            eval_every=config.eval_every,
        )
        baseline_accuracy = evaluate(params, eval_ds)
    say(f"baseline accuracy {baseline_accuracy:.4f}")

    say(f"reweighted: {config.t1} steps at lr {config.rw_learning_rate}")
    with _phase("reweighted"):
        params, gamma_history, rw_report = reweighted_train(
            params, train_ds, config, eval_dataset=eval_ds
        )

    with _phase("prune"):
        masks = make_masks_and_prune(params, config.prune_spec)
        pruned_accuracy = evaluate(params, eval_ds)
        compression = model_compression_rate(params, masks) if masks else 1.0
        compression_all = model_compression_rate_all(params, masks)
    say(
        f"pruned: compression {compression:.3f}x over prunable tensors, "
        f"accuracy {pruned_accuracy:.4f} before retraining"
    )

    say(f"retrain: {config.t2} steps at lr {config.learning_rate}")
    with _phase("retrain"):
        params, rt_report = retrain(
            params, masks, train_ds, config, eval_dataset=eval_ds
        )
        final_accuracy = evaluate(params, eval_ds)
    say(f"final accuracy {final_accuracy:.4f}")
    rt_report.compression = compression

    result = PipelineResult(
        params=params,
        masks=masks,
        baseline_accuracy=baseline_accuracy,
        pruned_accuracy=pruned_accuracy,
        final_accuracy=final_accuracy,
        compression=compression,
        compression_all=compression_all,
        reports={
            "baseline": baseline_report,
            "reweighted": rw_report,
            "retrain": rt_report,
        },
        gamma_history=gamma_history,
        wall_clock=time.perf_counter() - started,
    )
    if out_dir is not None:
        _emit(result, config, out_dir)
    return result


def _emit(result: PipelineResult, config: TrainConfig, out_dir: str) -> None:
    import os

    from .model import save_checkpoint
    from .pruner import save_masks

    os.makedirs(out_dir, exist_ok=True)
    meta = {"seed": config.seed}
    for phase, report in result.reports.items():
        save_report(report, os.path.join(out_dir, f"report_{phase}.txt"), meta)
    if result.masks:
        save_masks(result.masks, os.path.join(out_dir, "masks.txt"), meta)
    save_checkpoint(result.params, os.path.join(out_dir, "checkpoint_final"), meta)
    lines = [
        "# blockprune run summary v1",
        f"# seed={config.seed}",
        f"baseline_accuracy={result.baseline_accuracy!r}",
        f"pruned_accuracy={result.pruned_accuracy!r}",
        f"final_accuracy={result.final_accuracy!r}",
        f"compression_prunable={result.compression!r}",
        f"compression_all={result.compression_all!r}",
        f"# wall_clock_seconds={result.wall_clock!r}",
    ]
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
