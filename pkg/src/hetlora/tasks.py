"""Synthetic federated regression tasks with controllable per-client data
complexity.

Each task is a linear model with a frozen base weight w0 and a hidden
exactly-rank-rho* target update. Client k's inputs live in a fixed
rho_k-dimensional subspace of the input space, so rho_k is the rank its
local data actually requires of an adapter. Loss is mean squared error,
which keeps exact gradient and least-squares oracles available while
preserving the protocol-relevant structure (low-rank targets, noise
overfitting, heterogeneous complexity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import Matrix, Rng, seeded_rng
from .lora import LoraPair


@dataclass(frozen=True)
class SyntheticTaskSpec:
    d: int
    l: int
    true_rank: int
    num_clients: int
    samples_per_client: int | tuple[int, ...] = 30
    noise_std: float = 0.1
    # per-client intrinsic rank: an int (same for all), an explicit tuple,
    # or "uniform" for i.i.d. uniform over [1, true_rank]
    client_complexity: int | tuple[int, ...] | str = "uniform"
    seed: int = 0
    eval_samples: int = 512
    # Frobenius norm of the hidden update; with noise_std fixed this sets the
    # signal-to-noise ratio of the benchmark
    target_norm: float = 0.4
    # geometric decay of the update's singular values (1.0 = flat spectrum)
    target_spectrum_decay: float = 0.5

    def __post_init__(self):
        if self.d <= 0 or self.l <= 0:
            raise ValueError("base dimensions must be positive")
        if not 1 <= self.true_rank <= min(self.d, self.l):
            raise ValueError("true_rank must be in [1, min(d, l)]")
        if self.num_clients < 1:
            raise ValueError("need at least one client")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.eval_samples < 1:
            raise ValueError("eval_samples must be positive")
        if self.target_norm <= 0:
            raise ValueError("target_norm must be positive")
        if not 0 < self.target_spectrum_decay <= 1:
            raise ValueError("target_spectrum_decay must be in (0, 1]")

    def sample_counts(self) -> tuple[int, ...]:
        if isinstance(self.samples_per_client, int):
            return (self.samples_per_client,) * self.num_clients
        counts = tuple(self.samples_per_client)
        if len(counts) != self.num_clients:
            raise ValueError("samples_per_client list length must equal num_clients")
        return counts


@dataclass(frozen=True)
class ClientDataset:
    """Samples as rows: inputs is n x l, targets is n x d."""

    inputs: Matrix
    targets: Matrix

    def __post_init__(self):
        if self.inputs.rows != self.targets.rows:
            raise ValueError("inputs and targets must have equal sample counts")

    @property
    def size(self) -> int:
        return self.inputs.rows

    def subset(self, idx) -> "ClientDataset":
        return ClientDataset(
            inputs=Matrix._wrap(self.inputs.array[idx].copy()),
            targets=Matrix._wrap(self.targets.array[idx].copy()),
        )


@dataclass(frozen=True)
class FrozenBaseModel:
    """The pre-trained weight; never modified by any training path."""

    w0: Matrix


@dataclass(frozen=True)
class SyntheticTask:
    spec: SyntheticTaskSpec
    base: FrozenBaseModel
    target_delta: Matrix  # the hidden rank-rho* update, Frobenius norm 1
    clients: tuple[ClientDataset, ...]
    complexities: tuple[int, ...]
    eval_set: ClientDataset  # full input distribution, noiseless targets


def _resolve_complexities(spec: SyntheticTaskSpec, rng: Rng) -> tuple[int, ...]:
    if isinstance(spec.client_complexity, int):
        ranks = (spec.client_complexity,) * spec.num_clients
    elif spec.client_complexity == "uniform":
        ranks = tuple(
            1 + rng.sample_discrete([1.0] * spec.true_rank)
            for _ in range(spec.num_clients)
        )
    elif isinstance(spec.client_complexity, str):
        raise ValueError(f"unknown client_complexity {spec.client_complexity!r}")
    else:
        ranks = tuple(spec.client_complexity)
        if len(ranks) != spec.num_clients:
            raise ValueError("client_complexity list length must equal num_clients")
    for r in ranks:
        if not 1 <= r <= spec.true_rank:
            raise ValueError(f"client complexity {r} outside [1, {spec.true_rank}]")
    return ranks


def generate_task(spec: SyntheticTaskSpec) -> SyntheticTask:
    """Build a reproducible task from the spec's seed.

    The hidden update is a product of random rank-rho* factors with a
    geometric singular spectrum, scaled to target_norm in Frobenius norm,
    so the initial held-out loss is 0.5 * target_norm^2. Eval targets are
    noiseless, so held-out loss measures the squared recovery error of the
    update directly.
    """
    root = seeded_rng(spec.seed)
    w0 = root.child("base").gaussian(spec.d, spec.l, std=1.0 / np.sqrt(spec.l))
    fr = root.child("target")
    left, _ = np.linalg.qr(fr.normal_array((spec.d, spec.true_rank)))
    right, _ = np.linalg.qr(fr.normal_array((spec.l, spec.true_rank)))
    sigma = spec.target_spectrum_decay ** np.arange(spec.true_rank)
    delta = (left * sigma) @ right.T
    delta *= spec.target_norm / np.linalg.norm(delta)
    target = Matrix._wrap(delta)

    complexities = _resolve_complexities(spec, root.child("complexity"))
    counts = spec.sample_counts()
    w_full = w0.array + delta

    clients = []
    for k in range(spec.num_clients):
        crng = root.child("client", k)
        rho = complexities[k]
        basis, _ = np.linalg.qr(crng.normal_array((spec.l, rho)))
        z = crng.normal_array((counts[k], rho))
        x = z @ basis.T
        y = x @ w_full.T
        if spec.noise_std > 0:
            y = y + crng.normal_array((counts[k], spec.d), std=spec.noise_std)
        clients.append(
            ClientDataset(inputs=Matrix._wrap(x), targets=Matrix._wrap(y))
        )

    er = root.child("eval")
    ex = er.normal_array((spec.eval_samples, spec.l))
    ey = ex @ w_full.T
    eval_set = ClientDataset(inputs=Matrix._wrap(ex), targets=Matrix._wrap(ey))

    return SyntheticTask(
        spec=spec,
        base=FrozenBaseModel(w0=w0),
        target_delta=target,
        clients=tuple(clients),
        complexities=complexities,
        eval_set=eval_set,
    )


def dense_loss(delta: Matrix, w0: Matrix, batch: ClientDataset) -> float:
    """Mean over the batch of 0.5 * ||(w0 + delta) x - y||^2."""
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    resid = batch.inputs.array @ (w0.array + delta.array).T - batch.targets.array
    return float(0.5 * np.sum(resid * resid) / batch.size)


def dense_grad(delta: Matrix, w0: Matrix, batch: ClientDataset) -> Matrix:
    """Gradient of dense_loss with respect to delta (d x l)."""
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    resid = batch.inputs.array @ (w0.array + delta.array).T - batch.targets.array
    return Matrix._wrap(resid.T @ batch.inputs.array / batch.size)


def loss(p: LoraPair, w0: Matrix, batch: ClientDataset) -> float:
    """Mean squared-error loss of the adapted model w0 + b @ a on the batch."""
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    w = w0.array + p.b.array @ p.a.array
    resid = batch.inputs.array @ w.T - batch.targets.array
    return float(0.5 * np.sum(resid * resid) / batch.size)


def grad(p: LoraPair, w0: Matrix, batch: ClientDataset) -> tuple[Matrix, Matrix]:
    """Gradients of `loss` with respect to the two factors.

    With mean residual matrix R (n x d rows of (w0 + ba) x - y):
    g_b = R' X A' / n and g_a = B' R' X / n.
    """
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    x = batch.inputs.array
    w = w0.array + p.b.array @ p.a.array
    resid = x @ w.T - batch.targets.array
    g_dense = resid.T @ x / batch.size  # d x l
    return (
        Matrix._wrap(g_dense @ p.a.array.T),
        Matrix._wrap(p.b.array.T @ g_dense),
    )
