"""Training loops: structured meta-learning and the three baselines.

Randomness is derived from ``cfg.seed`` only. Task ``t`` is initialised with
seed ``cfg.seed + t``; the meta-train/meta-test split draws from stream
``[seed, 10]`` and meta-test batches from stream ``[seed, 11]``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..autodiff import Tensor, grad
from ..errors import ConfigError, DataError, SpecError
from ..models import MULTICLASS, ArchSpec, ParamSet, build, loss
from ..taskgen.data import Dataset, TaskDatabase
from .config import MetaConfig
from .core import StepResult, check_finite, evaluate, meta_gradient

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    arch: ArchSpec
    paramsets: list
    split: tuple
    iter: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        train, test = self.split
        if set(train) & set(test) or sorted([*train, *test]) != list(range(len(self.paramsets))):
            raise DataError("meta-train and meta-test sets must partition the tasks")

    def swap(self) -> None:
        self.split = (self.split[1], self.split[0])


def initial_split(K: int, cfg: MetaConfig) -> tuple[tuple, tuple]:
    rng = np.random.default_rng([cfg.seed, 10])
    perm = rng.permutation(K)
    k = cfg.n_train(K)
    return tuple(sorted(perm[:k].tolist())), tuple(sorted(perm[k:].tolist()))


def init_paramsets(arch: ArchSpec, K: int, seed: int) -> list:
    return [build(arch, seed + t, task_id=t) for t in range(K)]


def _eval_sets(db: TaskDatabase) -> list:
    return db.heldout if db.heldout else db.datasets


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def meta_step(
    state: TrainState,
    db: TaskDatabase,
    i: int,
    cfg: MetaConfig,
    batch=None,
    rng: np.random.Generator | None = None,
) -> StepResult:
    """Structured meta-update of task ``i`` against a batch of meta-test tasks.

    Returns the updated ParamSet (inside a ``StepResult``); ``state`` is not
    modified, the caller commits.
    """
    train_set, test_set = state.split
    if i not in train_set:
        raise ValueError(f"task {i} is not in the meta-train set")
    if batch is None:
        if rng is None:
            rng = np.random.default_rng([cfg.seed, 11, state.iter, i])
        batch = sorted(rng.choice(test_set, size=cfg.meta_test_batch, replace=False).tolist())
    theta = state.paramsets[i]
    tests = [db.datasets[j] for j in batch]
    gvec, L, G, etas, weights = meta_gradient(
        state.arch, theta.flat, db.datasets[i], tests, cfg.alpha, cfg.beta, cfg.weight_mode, cfg.grad_order
    )
    check_finite(L, cfg.divergence_limit, "meta-train loss", task=i, iteration=state.iter)
    check_finite(G, cfg.divergence_limit, "meta-test loss", task=i, iteration=state.iter)
    if not np.all(np.isfinite(gvec)):
        check_finite(float("nan"), cfg.divergence_limit, "meta-gradient", task=i, iteration=state.iter)
    new = theta.copy(theta.flat - cfg.delta * gvec)
    return StepResult(new, L, G, list(zip(batch, etas)), list(np.asarray(weights).tolist()), gvec)


def run_invenio(
    db: TaskDatabase,
    cfg: MetaConfig,
    arch: ArchSpec,
    threads: int = 1,
    on_record: Callable[[dict], None] | None = None,
    on_checkpoint: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Structured meta-learning with per-task parameters and similarity weights."""
    cfg.check_tasks(db.K)
    state = TrainState(arch, init_paramsets(arch, db.K, cfg.seed), initial_split(db.K, cfg))
    batch_rng = np.random.default_rng([cfg.seed, 11])

    def emit(rec):
        state.history.append(rec)
        if on_record is not None:
            on_record(rec)

    for it in range(cfg.n_iter):
        state.iter = it
        train_set, test_set = state.split
        batches = [
            sorted(batch_rng.choice(test_set, size=cfg.meta_test_batch, replace=False).tolist())
            for _ in train_set
        ]
        results = _map(
            lambda job: meta_step(state, db, job[0], cfg, batch=job[1]),
            list(zip(train_set, batches)),
            threads,
        )
        for i, res in zip(train_set, results):
            state.paramsets[i] = res.params
            emit({
                "type": "step",
                "iteration": it,
                "task": i,
                "loss": res.loss,
                "meta_test_loss": res.meta_test_loss,
                "etas": [[int(j), e] for j, e in res.etas],
                "weights": res.weights,
            })
        state.swap()
        _maybe_eval(state, db, cfg, it, emit, on_checkpoint)
    state.iter = cfg.n_iter
    return state


def _maybe_eval(state, db, cfg, it, emit, on_checkpoint):
    if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
        accs = [evaluate(state.arch, p, d) for p, d in zip(state.paramsets, _eval_sets(db))]
        emit({"type": "eval", "iteration": it, "accuracy": accs, "median": float(np.median(accs))})
        if on_checkpoint is not None:
            on_checkpoint(state)


def run_independent(
    db: TaskDatabase,
    cfg: MetaConfig,
    arch: ArchSpec,
    threads: int = 1,
    on_record: Callable[[dict], None] | None = None,
) -> TrainState:
    """Plain per-task gradient descent with step size ``delta``.

    Each task takes one step for every outer iteration in which the
    alternating split would have placed it in the meta-train set, so the step
    budget matches the structured run.
    """
    if db.K < 2:
        raise ConfigError("need at least 2 tasks")
    train0, test0 = initial_split(db.K, cfg)
    paramsets = init_paramsets(arch, db.K, cfg.seed)
    first = set(train0)

    def train_task(t):
        theta = paramsets[t].flat.copy()
        recs = []
        for it in range(cfg.n_iter):
            if (t in first) != (it % 2 == 0):
                continue
            x = Tensor(theta, requires_grad=True)
            L = loss(arch, x, db.datasets[t])
            check_finite(L.item(), cfg.divergence_limit, "training loss", task=t, iteration=it)
            theta = theta - cfg.delta * grad(L, x).data
            recs.append({"type": "step", "iteration": it, "task": t, "loss": L.item()})
        return paramsets[t].copy(theta), recs

    results = _map(train_task, list(range(db.K)), threads)
    state = TrainState(arch, [r[0] for r in results], (train0, test0), cfg.n_iter)
    records = sorted((rec for r in results for rec in r[1]), key=lambda r: (r["iteration"], r["task"]))
    for rec in records:
        state.history.append(rec)
        if on_record is not None:
            on_record(rec)
    if cfg.n_iter % 2:
        state.swap()
    return state


def run_shared_maml(
    db: TaskDatabase,
    cfg: MetaConfig,
    arch: ArchSpec,
    on_record: Callable[[dict], None] | None = None,
) -> ParamSet:
    """One shared parameter vector trained on averaged meta-train / meta-test losses.

    With a single task there is no meta-test set and the loop reduces to plain
    gradient descent on that task.
    """
    if db.K < 1:
        raise ConfigError("need at least one task")
    shared = build(arch, cfg.seed, task_id=-1)
    if db.K == 1:
        split = ((0,), ())
    else:
        split = initial_split(db.K, cfg)
    theta = shared.flat.copy()
    exact = cfg.grad_order == "exact" and cfg.beta > 0
    for it in range(cfg.n_iter):
        train_set, test_set = split
        x = Tensor(theta, requires_grad=True)
        L = _mean_loss(arch, x, [db.datasets[i] for i in train_set])
        g = grad(L, x, create_graph=exact)
        G_val = 0.0
        if cfg.beta > 0 and test_set:
            tests = [db.datasets[j] for j in test_set]
            if exact:
                G = _mean_loss(arch, x - g * cfg.alpha, tests)
                gvec = grad(L + G * cfg.beta, x).data
            else:
                xh = Tensor(x.data - cfg.alpha * g.data, requires_grad=True)
                G = _mean_loss(arch, xh, tests)
                gvec = g.data + cfg.beta * grad(G, xh).data
            G_val = G.item()
        else:
            gvec = g.data
        check_finite(L.item(), cfg.divergence_limit, "shared meta-train loss", iteration=it)
        check_finite(G_val, cfg.divergence_limit, "shared meta-test loss", iteration=it)
        theta = theta - cfg.delta * gvec
        if on_record is not None:
            on_record({"type": "step", "iteration": it, "loss": L.item(), "meta_test_loss": G_val})
        if db.K > 1:
            split = (split[1], split[0])
    return shared.copy(theta)


def _mean_loss(arch, theta, datasets):
    total = None
    for d in datasets:
        term = loss(arch, theta, d)
        total = term if total is None else total + term
    return total * (1.0 / len(datasets))


def pretrain_arch(arch: ArchSpec, n_classes: int) -> ArchSpec:
    """Same trunk, final linear layer resized to ``n_classes`` outputs."""
    last = arch.layers[-1]
    if last.kind != "linear":
        raise SpecError("transfer needs an architecture ending in a linear layer")
    layers = (*arch.layers[:-1], replace(last, out_dim=n_classes))
    return ArchSpec(layers, arch.input_shape, MULTICLASS, arch.final_relu)


def head_size(arch: ArchSpec) -> int:
    last = arch.layers[-1]
    return last.out_dim * last.in_dim + last.out_dim


def run_transfer(
    db: TaskDatabase,
    pretrain: Dataset,
    cfg: MetaConfig,
    arch: ArchSpec,
    pretrain_steps: int | None = None,
    finetune_steps: int | None = None,
    lr: float | None = None,
    threads: int = 1,
) -> list:
    """Pretrain once on a multiclass corpus, then fine-tune a copy per task.

    The trunk (every layer but the last) is copied from the pretrained model;
    each task gets a fresh head initialised with seed ``cfg.seed + t``.
    Defaults: ``pretrain_steps = n_iter``, ``finetune_steps = n_iter // 2``
    (the number of updates each task receives in the structured run), step
    size ``delta``.
    """
    if pretrain.sample_shape != arch.input_shape:
        raise DataError(f"pretraining inputs {pretrain.sample_shape} do not match {arch.input_shape}")
    lr = cfg.delta if lr is None else lr
    pretrain_steps = cfg.n_iter if pretrain_steps is None else pretrain_steps
    finetune_steps = cfg.n_iter // 2 if finetune_steps is None else finetune_steps
    p_arch = pretrain_arch(arch, pretrain.n_classes)
    theta = build(p_arch, cfg.seed).flat
    for step in range(pretrain_steps):
        x = Tensor(theta, requires_grad=True)
        L = loss(p_arch, x, pretrain)
        check_finite(L.item(), cfg.divergence_limit, "pretraining loss", iteration=step)
        theta = theta - lr * grad(L, x).data
    trunk = theta[: p_arch.n_params - head_size(p_arch)]

    def finetune(t):
        fresh = build(arch, cfg.seed + t, task_id=t)
        flat = np.concatenate([trunk, fresh.flat[trunk.size:]])
        for step in range(finetune_steps):
            x = Tensor(flat, requires_grad=True)
            L = loss(arch, x, db.datasets[t])
            check_finite(L.item(), cfg.divergence_limit, "fine-tuning loss", task=t, iteration=step)
            flat = flat - lr * grad(L, x).data
        return fresh.copy(flat)

    return _map(finetune, list(range(db.K)), threads)


def accuracies(arch: ArchSpec, paramsets, db: TaskDatabase) -> list:
    """Held-out accuracy per task (training data if the database is unsplit)."""
    sets = _eval_sets(db)
    if isinstance(paramsets, ParamSet):
        paramsets = [paramsets] * len(sets)
    return [evaluate(arch, p, d) for p, d in zip(paramsets, sets)]
