"""Protocol runners: the heterogeneous-rank engine and the comparison
strategies (homogeneous-rank, full fine-tuning, reconstruct-then-refactor).

All strategies consume the same task, seeds, selection schedule, and local
SGD machinery, so their metric curves are comparable round by round. Each
runner returns a :class:`RunResult` stream; divergence aborts the run with
the partial stream flagged incomplete.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from .client import ClientState, LocalTrainConfig, TrainingError, local_train
from .config import ExperimentConfig
from .linalg import Matrix, seeded_rng
from .lora import LoraPair, reconstruct, refactor_svd, truncate
from .records import RoundRecord, RunResult
from .server import (
    SIMPLE,
    ServerState,
    aggregate,
    assign_ranks,
    distribute,
    select_clients,
)
from .tasks import SyntheticTask, dense_grad, dense_loss, generate_task, loss


def lora_params(rank: int, d: int, l: int) -> int:
    """Parameters communicated one way for a rank-r adapter."""
    return rank * (d + l)


def lora_param_fraction(rank: int, d: int, l: int) -> float:
    """Adapter size relative to the dense base weight: r(d+l) / (d*l)."""
    return lora_params(rank, d, l) / (d * l)


def _client_seed(run_seed: int, client_id: int) -> int:
    # stable per-client derivation, independent of participation history
    return int(
        np.random.SeedSequence([run_seed, 0x636C69, client_id]).generate_state(1)[0]
    )


def _initial_pair(task: SyntheticTask, rank: int, init_std: float,
                  run_seed: int) -> LoraPair:
    """Standard adapter init: left factor zero, right factor gaussian, so the
    initial update is exactly zero."""
    rng = seeded_rng(run_seed).child("init")
    return LoraPair(
        b=Matrix.zeros(task.spec.d, rank),
        a=rng.gaussian(rank, task.spec.l, std=init_std),
    )


def _make_clients(task: SyntheticTask, ranks, run_seed: int) -> list[ClientState]:
    return [
        ClientState(
            id=k,
            current_rank=ranks[k],
            dataset=task.clients[k],
            seed=_client_seed(run_seed, k),
        )
        for k in range(task.spec.num_clients)
    ]


def _local_cfg(cfg: ExperimentConfig, reg_weight: float, decay: float,
               ) -> LocalTrainConfig:
    return LocalTrainConfig(
        local_iters=cfg.local_iters,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        reg_weight=reg_weight,
        decay=decay,
    )


def run_hetlora(cfg: ExperimentConfig, task: SyntheticTask, run_seed: int,
                *, reg_weight: float | None = None, decay: float | None = None,
                aggregation: str | None = None, ranks=None,
                strategy_tag: str = "hetlora") -> RunResult:
    """The heterogeneous-rank engine. The homogeneous baseline is this with
    r_min == r_max, no regularizer, decay 1, and simple averaging."""
    spec = task.spec
    reg_weight = cfg.reg_weight if reg_weight is None else reg_weight
    decay = cfg.decay if decay is None else decay
    aggregation = cfg.aggregation if aggregation is None else aggregation
    if ranks is None:
        ranks = assign_ranks(
            spec.num_clients, cfg.r_min, cfg.r_max, cfg.rank_alpha, run_seed
        ).ranks
    clients = _make_clients(task, ranks, run_seed)
    lcfg = _local_cfg(cfg, reg_weight, decay)
    w0 = task.base.w0

    global_pair = _initial_pair(task, max(ranks), cfg.init_std, run_seed)
    server = ServerState(
        global_pair=global_pair,
        round_index=0,
        aggregation=aggregation,
        client_ranks={c.id: c.current_rank for c in clients},
    )
    run = RunResult(
        seed=run_seed,
        strategy=strategy_tag,
        initial_eval_loss=loss(global_pair, w0, task.eval_set),
    )
    cumulative = 0
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        selected = select_clients(spec.num_clients, cfg.clients_per_round, t, run_seed)
        updates = []
        sizes = []
        down = up = 0
        try:
            for k in selected:
                received = distribute(server, clients[k].current_rank)
                down += lora_params(received.rank, spec.d, spec.l)
                trained, _ = local_train(clients[k], received, w0, lcfg, round_index=t)
                up += lora_params(trained.rank, spec.d, spec.l)
                updates.append((k, trained))
                sizes.append(clients[k].dataset.size)
        except TrainingError as exc:
            run.completed = False
            run.failure = str(exc)
            break
        server = aggregate(server, updates, sizes=sizes if cfg.size_weighted else None)
        cumulative += down + up
        run.records.append(
            RoundRecord(
                round_index=t,
                eval_loss=loss(server.global_pair, w0, task.eval_set),
                client_ranks=tuple(c.current_rank for c in clients),
                down_params=down,
                up_params=up,
                cumulative_params=cumulative,
                wall_clock=time.perf_counter() - start,
            )
        )
    return run


def run_homlora(rank: int, cfg: ExperimentConfig, task: SyntheticTask,
                run_seed: int) -> RunResult:
    """Homogeneous-rank baseline: every client trains the same rank, plain
    averaging, no pruning."""
    return run_hetlora(
        cfg,
        task,
        run_seed,
        reg_weight=0.0,
        decay=1.0,
        aggregation=SIMPLE,
        ranks=(rank,) * task.spec.num_clients,
        strategy_tag=f"homlora_r{rank}",
    )


def run_full_ft(cfg: ExperimentConfig, task: SyntheticTask, run_seed: int) -> RunResult:
    """FedAvg on a dense additive update with the base weight frozen.

    Communication is d*l per direction per client."""
    spec = task.spec
    w0 = task.base.w0
    dense_cost = spec.d * spec.l
    delta = np.zeros((spec.d, spec.l))
    run = RunResult(
        seed=run_seed,
        strategy="full_ft",
        initial_eval_loss=dense_loss(Matrix._wrap(delta), w0, task.eval_set),
    )
    cumulative = 0
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        selected = select_clients(spec.num_clients, cfg.clients_per_round, t, run_seed)
        m = len(selected)
        acc = np.zeros_like(delta)
        diverged = None
        for k in selected:
            local = delta.copy()
            rng = seeded_rng(_client_seed(run_seed, k)).child("round", t)
            data = task.clients[k]
            for step in range(cfg.local_iters):
                idx = rng.batch_indices(data.size, cfg.batch_size)
                x = data.inputs.array[idx]
                y = data.targets.array[idx]
                resid = x @ (w0.array + local).T - y
                local -= cfg.learning_rate * (resid.T @ x / len(idx))
                if not np.isfinite(local).all():
                    diverged = f"client {k} diverged at local step {step}"
                    break
            if diverged:
                break
            acc += local / m
        if diverged:
            run.completed = False
            run.failure = diverged
            break
        delta = acc
        cumulative += 2 * m * dense_cost
        run.records.append(
            RoundRecord(
                round_index=t,
                eval_loss=dense_loss(Matrix._wrap(delta), w0, task.eval_set),
                client_ranks=tuple(0 for _ in range(spec.num_clients)),
                down_params=m * dense_cost,
                up_params=m * dense_cost,
                cumulative_params=cumulative,
                wall_clock=time.perf_counter() - start,
            )
        )
    return run


def run_recon_svd(cfg: ExperimentConfig, task: SyntheticTask, run_seed: int) -> RunResult:
    """Reconstruct-first baseline: the server keeps a dense global update,
    averages reconstructed client products uniformly, and redistributes
    per-client factors by truncated SVD.

    The first round distributes truncations of the standard factored init
    (refactoring the zero matrix would hand every client an all-zero pair,
    which SGD can never leave). No self-pruning: ranks stay at their
    initial assignment.
    """
    spec = task.spec
    w0 = task.base.w0
    ranks = assign_ranks(
        spec.num_clients, cfg.r_min, cfg.r_max, cfg.rank_alpha, run_seed
    ).ranks
    clients = _make_clients(task, ranks, run_seed)
    lcfg = _local_cfg(cfg, 0.0, 1.0)
    init_pair = _initial_pair(task, max(ranks), cfg.init_std, run_seed)
    dense = np.zeros((spec.d, spec.l))
    run = RunResult(
        seed=run_seed,
        strategy="recon_svd",
        initial_eval_loss=dense_loss(Matrix._wrap(dense), w0, task.eval_set),
    )
    cumulative = 0
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        selected = select_clients(spec.num_clients, cfg.clients_per_round, t, run_seed)
        m = len(selected)
        acc = np.zeros_like(dense)
        down = up = 0
        try:
            for k in selected:
                r_k = clients[k].current_rank
                if t == 1:
                    received = truncate(init_pair, r_k)
                else:
                    received = refactor_svd(Matrix._wrap(dense), r_k, cfg.svd_split)
                down += lora_params(r_k, spec.d, spec.l)
                trained, _ = local_train(clients[k], received, w0, lcfg, round_index=t)
                up += lora_params(trained.rank, spec.d, spec.l)
                acc += reconstruct(trained).array / m
        except TrainingError as exc:
            run.completed = False
            run.failure = str(exc)
            break
        dense = acc
        cumulative += down + up
        run.records.append(
            RoundRecord(
                round_index=t,
                eval_loss=dense_loss(Matrix._wrap(dense), w0, task.eval_set),
                client_ranks=tuple(c.current_rank for c in clients),
                down_params=down,
                up_params=up,
                cumulative_params=cumulative,
                wall_clock=time.perf_counter() - start,
            )
        )
    return run


def run_strategy(cfg: ExperimentConfig, run_seed: int,
                 task: SyntheticTask | None = None) -> RunResult:
    """Dispatch on cfg.strategy; the task is regenerated with the run seed
    unless supplied."""
    if task is None:
        task = generate_task(replace(cfg.task, seed=run_seed))
    if cfg.strategy == "hetlora":
        return run_hetlora(cfg, task, run_seed)
    if cfg.strategy == "homlora":
        return run_homlora(cfg.homlora_rank, cfg, task, run_seed)
    if cfg.strategy == "full_ft":
        return run_full_ft(cfg, task, run_seed)
    if cfg.strategy == "recon_svd":
        return run_recon_svd(cfg, task, run_seed)
    raise ValueError(f"unknown strategy {cfg.strategy!r}")
