"""Expert-action estimates at arbitrary states.

Two propagators are available: k-nearest-neighbour locally weighted
regression with an exponential kernel over the demonstration states, and a
behaviour-cloning network fitted to the same data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .envs import Episodes
from .errors import ConfigurationError, UsageError
from .nn import AdamState, MlpSpec, adam_step, init_params, mlp_backward, mlp_forward


def euclidean(q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Distances between query rows and candidate rows; broadcasts over leading axes."""
    diff = X - q
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass
class DemoDataset:
    states: np.ndarray  # (N, state_dim): observation ++ desired goal
    actions: np.ndarray  # (N, action_dim)
    env_name: str = ""

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float64)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float64)
        if len(self.states) < 1 or len(self.states) != len(self.actions):
            raise ConfigurationError("demonstration states and actions must be non-empty and aligned")

    @classmethod
    def from_episodes(cls, demos: Episodes) -> "DemoDataset":
        return cls(demos.states(), demos.actions(), demos.env_name)

    def __len__(self):
        return len(self.states)


class KdIndex:
    """Exact k-NN over a fixed point set with ties broken by lower row index.

    Backed by scipy's cKDTree built over the distinct states; each distinct
    state expands to its (sorted) original rows. A query asks the tree for a
    few extra distinct candidates, recomputes their distances and re-sorts by
    (distance, row). If ties might extend past the candidate window the query
    falls back to an exhaustive scan.
    """

    PAD = 2

    def __init__(self, states: np.ndarray, leaf_size: int = 16):
        self.states = np.ascontiguousarray(states, dtype=np.float64)
        self.unique, inverse = np.unique(self.states, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.tree = cKDTree(self.unique, leafsize=leaf_size, balanced_tree=True)
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=len(self.unique))
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self._order, self._starts, self._counts = order, starts, counts
        self._groups = {}

    def __len__(self):
        return len(self.states)

    @property
    def dim(self):
        return self.states.shape[1]

    def _group_rows(self, k: int) -> np.ndarray:
        """(n_unique, k) lowest rows per distinct state, padded with n."""
        if k not in self._groups:
            n = len(self.states)
            offs = np.arange(k)
            pos = self._starts[:, None] + offs
            valid = offs < self._counts[:, None]
            rows = np.where(valid, self._order[np.minimum(pos, n - 1)], n)
            self._groups[k] = rows
        return self._groups[k]

    def query(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched query: returns (rows, distances), each of shape (m, k)."""
        Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n, u = len(self.states), len(self.unique)
        if Q.shape[1] != self.dim:
            raise UsageError(f"query dimension {Q.shape[1]} != index dimension {self.dim}")
        if not 1 <= k <= n:
            raise UsageError(f"k={k} must lie in [1, {n}]")
        kk = min(u, k + self.PAD)
        tree_d, cand = self.tree.query(Q, k=kk)
        tree_d = tree_d.reshape(len(Q), kk)
        cand = cand.reshape(len(Q), kk)
        d = euclidean(Q[:, None, :], self.unique[cand])  # (m, kk)
        rows = self._group_rows(k)[cand]  # (m, kk, k)
        d_rows = np.where(rows < n, d[:, :, None], np.inf)
        rows, dists = _take_k(rows.reshape(len(Q), -1), d_rows.reshape(len(Q), -1), k)
        if kk < u:
            # every distinct state closer than or tied with the k-th must be a candidate
            unsafe = tree_d[:, -1] <= dists[:, -1] * (1 + 1e-9) + 1e-12
            for i in np.flatnonzero(unsafe):
                rows[i], dists[i] = brute_force_knn(self.states, Q[i], k)
        return rows, dists


def _take_k(cand: np.ndarray, d: np.ndarray, k: int):
    order = np.lexsort((cand, d), axis=-1)[..., :k]
    return np.take_along_axis(cand, order, -1), np.take_along_axis(d, order, -1)


def brute_force_knn(states: np.ndarray, query: np.ndarray, k: int):
    d = euclidean(query, states)
    order = np.lexsort((np.arange(len(states)), d))[:k]
    return order, d[order]


def knn(index: KdIndex, query, k: int) -> list[tuple[int, float]]:
    rows, dists = index.query(np.asarray(query)[None, :], k)
    return [(int(r), float(d)) for r, d in zip(rows[0], dists[0])]


def lwr_weights(distances: np.ndarray) -> np.ndarray:
    """Normalised exp(-distance) weights along the last axis.

    Shifting by the row minimum leaves the ratio unchanged and keeps the
    denominator away from underflow.
    """
    d = np.asarray(distances, dtype=np.float64)
    w = np.exp(-(d - d.min(axis=-1, keepdims=True)))
    return w / w.sum(axis=-1, keepdims=True)


def lwr_estimate(neighbors, query) -> np.ndarray:
    """Kernel-weighted mean of neighbour actions.

    ``neighbors`` is a sequence of (state, action) or (state, action, distance);
    the kernel distance is recomputed from the states.
    """
    if len(neighbors) == 0:
        raise UsageError("lwr_estimate needs at least one neighbour")
    S = np.array([nb[0] for nb in neighbors], dtype=np.float64)
    A = np.array([nb[1] for nb in neighbors], dtype=np.float64)
    w = lwr_weights(euclidean(np.asarray(query, dtype=np.float64), S))
    return w @ A


@dataclass
class Propagator:
    kind: str  # "nonparametric_lwr" | "parametric_bc"
    dataset: DemoDataset
    k: int = 5
    candidate_pool: int | None = None
    bc_spec: MlpSpec | None = None
    bc_params: np.ndarray | None = field(default=None, repr=False)
    index: KdIndex | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "nonparametric_lwr":
            n = len(self.dataset)
            if not 1 <= self.k <= n:
                raise ConfigurationError(f"k={self.k} must lie in [1, {n}]")
            if self.candidate_pool is not None and not self.k <= self.candidate_pool <= n:
                raise ConfigurationError("candidate_pool must lie in [k, dataset size]")
            if self.index is None:
                self.index = KdIndex(self.dataset.states)
        elif self.kind != "parametric_bc":
            raise ConfigurationError(f"unknown propagator kind {self.kind!r}")

    @classmethod
    def lwr(cls, dataset: DemoDataset, k: int = 5, candidate_pool: int | None = None) -> "Propagator":
        return cls("nonparametric_lwr", dataset, k=k, candidate_pool=candidate_pool)

    def __call__(self, queries, rng=None) -> np.ndarray:
        return propagate(self, queries, rng)


def propagate(prop: Propagator, queries, rng: np.random.Generator | None = None) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != prop.dataset.states.shape[1]:
        raise ConfigurationError(
            f"query dimension {Q.shape[1]} != demonstration state dimension {prop.dataset.states.shape[1]}"
        )
    if prop.kind == "parametric_bc":
        if prop.bc_params is None:
            raise UsageError("BC propagator has not been fitted")
        out = mlp_forward(prop.bc_spec, prop.bc_params, Q)[0]
        return np.clip(out, -1.0, 1.0)
    if prop.candidate_pool is None:
        rows, dists = prop.index.query(Q, prop.k)
    else:
        if rng is None:
            raise UsageError("a generator is required when candidate_pool is set")
        n = len(prop.dataset)
        pool = rng.choice(n, size=prop.candidate_pool, replace=False)
        d = euclidean(Q[:, None, :], prop.dataset.states[pool][None, :, :])
        cand = np.broadcast_to(pool, d.shape)
        rows, dists = _take_k(cand, d, prop.k)
    w = lwr_weights(dists)
    out = np.einsum("mk,mka->ma", w, prop.dataset.actions[rows])
    return np.clip(out, -1.0, 1.0)


def fit_bc_propagator(
    dataset: DemoDataset,
    epochs: int,
    rng: np.random.Generator,
    hidden=(256, 256, 256),
    batch_size: int = 256,
    lr: float = 1e-3,
    return_losses: bool = False,
):
    """Fit a tanh MLP to the demonstration actions by minibatch MSE + Adam."""
    n, sd = dataset.states.shape
    spec = MlpSpec.actor(sd, dataset.actions.shape[1], hidden)
    params = init_params(spec, rng)
    opt = AdamState.zeros(spec.n_params, lr)
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            out, cache = mlp_forward(spec, params, dataset.states[idx])
            err = out - dataset.actions[idx]
            total += float(np.sum(err * err))
            grads, _ = mlp_backward(spec, cache, 2.0 * err / err.size)
            params, opt = adam_step(params, grads, opt)
        losses.append(total / dataset.actions.size)
    prop = Propagator("parametric_bc", dataset, bc_spec=spec, bc_params=params)
    return (prop, losses) if return_losses else prop


def bc_loss(prop: Propagator) -> float:
    out = mlp_forward(prop.bc_spec, prop.bc_params, prop.dataset.states)[0]
    return float(np.mean((out - prop.dataset.actions) ** 2))
