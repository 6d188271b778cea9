"""Collaborative-filtering representation training.

Two model families: WALS matrix factorization (exact alternating ridge
solves under item-oriented confidence weights) and a small two-tower
feed-forward network trained with Adam, whose per-layer item activations
feed the nonlinear CAV path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class LinearEmbeddingModel:
    user_vecs: np.ndarray
    item_vecs: np.ndarray
    d: int
    kappa: float
    objective_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)

    def predict(self, user: int, item: int) -> float:
        return float(self.user_vecs[user] @ self.item_vecs[item])

    def to_json(self) -> dict:
        return {"format_version": 1, "kind": "wals",
                "d": self.d, "kappa": self.kappa,
                "user_vecs": self.user_vecs.tolist(),
                "item_vecs": self.item_vecs.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LinearEmbeddingModel":
        if obj.get("kind") != "wals":
            raise ValueError(f"not a wals checkpoint: {obj.get('kind')!r}")
        return cls(user_vecs=np.asarray(obj["user_vecs"], dtype=np.float64),
                   item_vecs=np.asarray(obj["item_vecs"], dtype=np.float64),
                   d=obj["d"], kappa=obj["kappa"])


def _confidence_weights(dataset: Dataset, beta: float) -> np.ndarray:
    """c_i = 1 + beta * (1 - pop(i)) with pop(i) the min-max-normalized
    rating mass of item i; less popular / lower-rated items weigh more."""
    mass = np.zeros(dataset.num_items)
    np.add.at(mass, dataset.rating_items, dataset.rating_values)
    lo, hi = mass.min(), mass.max()
    pop = (mass - lo) / (hi - lo) if hi > lo else np.zeros_like(mass)
    c = 1.0 + beta * (1.0 - pop)
    observed = c[dataset.rating_items]
    return c * (observed.size / observed.sum())  # mean observed weight = 1


def wals_objective(users, items, values, weights, U, X, kappa) -> float:
    pred = np.sum(U[users] * X[items], axis=1)
    err = np.sum(weights * (pred - values) ** 2)
    return float(err + kappa * (np.sum(U * U) + np.sum(X * X)))


def train_wals(dataset: Dataset, d: int, kappa: float = 1.0,
               iterations: int = 20, rng: np.random.Generator | None = None,
               beta: float = 1.0, val_fraction: float = 0.1) -> LinearEmbeddingModel:
    """Alternating exact ridge solves; returns the iterate with the best
    validation RMSE.  The weighted training objective is recorded after every
    half-step (user solve, item solve) in ``objective_history``."""
    if dataset.num_ratings == 0:
        raise ValueError("cannot train on an empty ratings set")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, m = dataset.num_users, dataset.num_items

    conf = _confidence_weights(dataset, beta)
    users, items, values = dataset.rating_users, dataset.rating_items, dataset.rating_values
    nr = values.size
    val_mask = np.zeros(nr, dtype=bool)
    if val_fraction > 0 and nr >= 10:
        k = max(1, int(round(val_fraction * nr)))
        val_mask[rng.choice(nr, size=k, replace=False)] = True
    tr = ~val_mask
    tu, ti, tv = users[tr], items[tr], values[tr]
    tw = conf[ti]
    vu, vi, vv = users[val_mask], items[val_mask], values[val_mask]

    U = rng.normal(0.0, 0.1 / np.sqrt(d), size=(n, d))
    X = rng.normal(0.0, 0.1 / np.sqrt(d), size=(m, d))

    u_order = np.argsort(tu, kind="stable")
    u_bounds = np.searchsorted(tu[u_order], np.arange(n + 1))
    i_order = np.argsort(ti, kind="stable")
    i_bounds = np.searchsorted(ti[i_order], np.arange(m + 1))

    def solve_side(target, fixed, order, bounds, cols, vals, weights, count):
        eye = kappa * np.eye(d)
        for r in range(count):
            lo, hi = bounds[r], bounds[r + 1]
            if hi == lo:
                target[r] = 0.0
                continue
            idx = order[lo:hi]
            F = fixed[cols[idx]]
            w = weights[idx]
            A = (F * w[:, None]).T @ F + eye
            b = F.T @ (w * vals[idx])
            target[r] = np.linalg.solve(A, b)

    model = LinearEmbeddingModel(U.copy(), X.copy(), d, kappa)
    best_val = np.inf
    history, val_history = [], []
    for _ in range(iterations):
        solve_side(U, X, u_order, u_bounds, ti, tv, tw, n)
        history.append(wals_objective(tu, ti, tv, tw, U, X, kappa))
        solve_side(X, U, i_order, i_bounds, tu, tv, tw, m)
        history.append(wals_objective(tu, ti, tv, tw, U, X, kappa))
        if vv.size:
            pred = np.sum(U[vu] * X[vi], axis=1)
            val = float(np.sqrt(np.mean((pred - vv) ** 2)))
        else:
            val = history[-1]
        val_history.append(val)
        if val < best_val:
            best_val = val
            model.user_vecs = U.copy()
            model.item_vecs = X.copy()
    model.objective_history = history
    model.val_history = val_history
    return model


# --- two-tower network -----------------------------------------------------

@dataclass
class DeepEmbeddingModel:
    """Two equal-width towers: an id-embedding first layer (no bias,
    mathematically a one-hot linear layer), ReLU hidden layers, linear
    output.  Layers are numbered 1..num_layers for activation probing."""

    params: dict
    d: int
    num_layers: int
    kappa: float
    rho: float
    loss_history: list = field(default_factory=list)

    def _tower(self, prefix: str, idx: np.ndarray):
        acts = []
        h = self.params[f"{prefix}_W1"][idx]
        if self.num_layers > 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
        for layer in range(2, self.num_layers + 1):
            h = h @ self.params[f"{prefix}_W{layer}"] + self.params[f"{prefix}_b{layer}"]
            if layer < self.num_layers:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def user_embeddings(self, users: np.ndarray) -> np.ndarray:
        return self._tower("U", np.asarray(users))[-1]

    def item_embeddings(self, items: np.ndarray) -> np.ndarray:
        return self._tower("I", np.asarray(items))[-1]

    def item_activations(self, items: np.ndarray, layer: int) -> np.ndarray:
        if not 1 <= layer <= self.num_layers:
            raise ValueError(f"layer {layer} out of range [1, {self.num_layers}]")
        return self._tower("I", np.asarray(items))[layer - 1]

    def predict(self, user: int, item: int) -> float:
        eu = self.user_embeddings(np.asarray([user]))[0]
        ei = self.item_embeddings(np.asarray([item]))[0]
        return float(eu @ ei)

    def to_json(self) -> dict:
        return {"format_version": 1, "kind": "two_tower", "d": self.d,
                "num_layers": self.num_layers, "kappa": self.kappa, "rho": self.rho,
                "params": {k: v.tolist() for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> "DeepEmbeddingModel":
        if obj.get("kind") != "two_tower":
            raise ValueError(f"not a two-tower checkpoint: {obj.get('kind')!r}")
        params = {k: np.asarray(v, dtype=np.float64) for k, v in obj["params"].items()}
        return cls(params=params, d=obj["d"], num_layers=obj["num_layers"],
                   kappa=obj["kappa"], rho=obj["rho"])


def init_two_tower(n: int, m: int, d: int, num_layers: int, kappa: float,
                   rho: float, rng: np.random.Generator,
                   warm_start: LinearEmbeddingModel | None = None) -> DeepEmbeddingModel:
    scale = 0.1 / np.sqrt(d)
    params = {}
    params["U_W1"] = rng.normal(0.0, scale, size=(n, d))
    params["I_W1"] = rng.normal(0.0, scale, size=(m, d))
    if warm_start is not None:
        params["U_W1"] = warm_start.user_vecs.copy()
        params["I_W1"] = warm_start.item_vecs.copy()
    for prefix in ("U", "I"):
        for layer in range(2, num_layers + 1):
            params[f"{prefix}_W{layer}"] = rng.normal(0.0, scale, size=(d, d))
            params[f"{prefix}_b{layer}"] = np.zeros(d)
    return DeepEmbeddingModel(params=params, d=d, num_layers=num_layers,
                              kappa=kappa, rho=rho)


def two_tower_loss_and_grads(model: DeepEmbeddingModel, users, items, values):
    """Batch loss and analytic gradients for every parameter tensor.

    loss = mean squared error
         + kappa * batch-mean of (||phi_U||^2 + ||phi_I||^2)
         + rho * sum of squared tower weights
    """
    p = model.params
    L = model.num_layers
    B = values.size
    acts = {}
    for prefix, idx in (("U", users), ("I", items)):
        acts[prefix] = model._tower(prefix, idx)
    eu, ei = acts["U"][-1], acts["I"][-1]
    pred = np.sum(eu * ei, axis=1)
    resid = pred - values
    mse = float(np.mean(resid ** 2))
    act_reg = float(np.mean(np.sum(eu * eu, axis=1) + np.sum(ei * ei, axis=1)))
    w_reg = float(sum(np.sum(v * v) for v in p.values()))
    loss = mse + model.kappa * act_reg + model.rho * w_reg

    grads = {k: model.rho * 2.0 * v for k, v in p.items()}
    dpred = 2.0 * resid / B
    d_out = {"U": dpred[:, None] * ei + (2.0 * model.kappa / B) * eu,
             "I": dpred[:, None] * eu + (2.0 * model.kappa / B) * ei}
    for prefix, idx in (("U", users), ("I", items)):
        g = d_out[prefix]
        for layer in range(L, 1, -1):
            h_prev = acts[prefix][layer - 2]
            grads[f"{prefix}_W{layer}"] += h_prev.T @ g
            grads[f"{prefix}_b{layer}"] += g.sum(axis=0)
            g = g @ p[f"{prefix}_W{layer}"].T
            g = g * (h_prev > 0.0)
        np.add.at(grads[f"{prefix}_W1"], idx, g)
    return loss, grads


def train_two_tower(dataset: Dataset, d: int, num_layers: int = 3,
                    kappa: float = 1.0, rho: float = 1e-4, lr: float = 1e-3,
                    batch_size: int = 1024, epochs: int = 30,
                    rng: np.random.Generator | None = None,
                    warm_start: LinearEmbeddingModel | None = None) -> DeepEmbeddingModel:
    if dataset.num_ratings == 0:
        raise ValueError("cannot train on an empty ratings set")
    rng = rng if rng is not None else np.random.default_rng(0)
    model = init_two_tower(dataset.num_users, dataset.num_items, d, num_layers,
                           kappa, rho, rng, warm_start)
    users, items, values = (dataset.rating_users, dataset.rating_items,
                            dataset.rating_values)
    nr = values.size
    mom = {k: np.zeros_like(v) for k, v in model.params.items()}
    vel = {k: np.zeros_like(v) for k, v in model.params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(epochs):
        perm = rng.permutation(nr)
        epoch_loss = 0.0
        nb = 0
        for start in range(0, nr, batch_size):
            sel = perm[start:start + batch_size]
            loss, grads = two_tower_loss_and_grads(model, users[sel], items[sel],
                                                   values[sel])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, step {step}")
            step += 1
            for k in model.params:
                mom[k] = b1 * mom[k] + (1 - b1) * grads[k]
                vel[k] = b2 * vel[k] + (1 - b2) * grads[k] ** 2
                mhat = mom[k] / (1 - b1 ** step)
                vhat = vel[k] / (1 - b2 ** step)
                model.params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
            epoch_loss += loss
            nb += 1
        model.loss_history.append(epoch_loss / max(nb, 1))
    return model


# --- shared accessors -------------------------------------------------------

EmbeddingModel = LinearEmbeddingModel | DeepEmbeddingModel


def item_representations(model: EmbeddingModel, layer: int | None = None) -> np.ndarray:
    """Matrix of item representations: embeddings for linear models (and the
    final layer of deep models), or the requested hidden-layer activations."""
    if isinstance(model, LinearEmbeddingModel):
        return model.item_vecs
    all_items = np.arange(model.params["I_W1"].shape[0])
    if layer is None:
        layer = model.num_layers
    return model.item_activations(all_items, layer)


def item_representation(model: EmbeddingModel, item: int,
                        layer: int | None = None) -> np.ndarray:
    if isinstance(model, LinearEmbeddingModel):
        return model.item_vecs[item]
    if layer is None:
        layer = model.num_layers
    return model.item_activations(np.asarray([item]), layer)[0]


def user_embeddings(model: EmbeddingModel) -> np.ndarray:
    if isinstance(model, LinearEmbeddingModel):
        return model.user_vecs
    all_users = np.arange(model.params["U_W1"].shape[0])
    return model.user_embeddings(all_users)


def predict_rating(model: EmbeddingModel, user: int, item: int) -> float:
    return model.predict(user, item)


def save_model(model: EmbeddingModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh)


def load_model(path) -> EmbeddingModel:
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("kind") == "wals":
        return LinearEmbeddingModel.from_json(obj)
    if obj.get("kind") == "two_tower":
        return DeepEmbeddingModel.from_json(obj)
    raise ValueError(f"unknown checkpoint kind {obj.get('kind')!r}")
