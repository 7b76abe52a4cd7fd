"""Feed-forward dynamics approximators trained by ADAM.

Networks map (x, u) to the next state through one of four output forms:
the raw network prediction, the network plus an identity skip on the
state, the network around a fixed nominal linear model, or the network
plus a diagonal shift of the state.  Gradients and input-output Jacobians
are computed analytically in closed form; no autodiff framework is used.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .benchmarks import JacobianMatrix
from .linalg import DimensionError

__all__ = [
    "ACTIVATIONS",
    "DEFAULT_ENSEMBLE_ACTIVATIONS",
    "ObjectiveForm",
    "MLPModel",
    "Ensemble",
    "TrainConfig",
    "AdamState",
    "TrainingDivergedError",
    "init_mlp",
    "init_ensemble",
    "predict",
    "net_output",
    "net_jacobian",
    "model_jacobian",
    "loss_and_grad",
    "adam_step",
    "train",
    "train_ensemble",
    "ensemble_predict",
    "ensemble_jacobian",
    "save_model",
    "load_model",
    "save_ensemble",
    "load_ensemble",
]


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


def _relu(x):
    return np.maximum(x, 0.0)


def _drelu(x):
    return (x > 0).astype(np.float64)


def _leaky(x):
    return np.where(x > 0, x, 0.01 * x)


def _dleaky(x):
    return np.where(x > 0, 1.0, 0.01)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _delu(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _dsigmoid(x):
    s = expit(x)
    return s * (1.0 - s)


def _dtanh(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _swish(x):
    return x * expit(x)


def _dswish(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "leaky_relu": (_leaky, _dleaky),
    "elu": (_elu, _delu),
    "sigmoid": (expit, _dsigmoid),
    "tanh": (np.tanh, _dtanh),
    "swish": (_swish, _dswish),
}

DEFAULT_ENSEMBLE_ACTIVATIONS = ("elu", "sigmoid", "tanh", "swish")


@dataclass
class ObjectiveForm:
    """Output form of the dynamics map.

    kind "f": prediction is the raw network output.
    kind "g": network output plus the current state (learns the increment).
    kind "generalized": network output plus a fixed nominal A0 x + B0 u.
    kind "tau": network output plus a diagonal state shift tau * x.
    """

    kind: str
    A0: np.ndarray | None = None
    B0: np.ndarray | None = None
    tau: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("f", "g", "generalized", "tau"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "generalized":
            if self.A0 is None or self.B0 is None:
                raise ValueError("generalized form needs A0 and B0")
            self.A0 = np.asarray(self.A0, dtype=np.float64)
            self.B0 = np.asarray(self.B0, dtype=np.float64)
        if self.kind == "tau":
            if self.tau is None:
                raise ValueError("tau form needs the diagonal shift")
            self.tau = np.atleast_1d(np.asarray(self.tau, dtype=np.float64))

    def validate_dims(self, n, m):
        if self.kind == "generalized":
            if self.A0.shape != (n, n) or self.B0.shape != (n, m):
                raise DimensionError(
                    f"nominal model shapes {self.A0.shape}, {self.B0.shape} "
                    f"do not match n={n}, m={m}"
                )
        if self.kind == "tau" and self.tau.shape not in ((n,), (1,)):
            raise DimensionError(f"tau must be scalar or length {n}")

    def skip(self, x, u):
        """Skip-term contribution for a single point or a batch."""
        if self.kind == "f":
            return 0.0
        if self.kind == "g":
            return x
        if self.kind == "generalized":
            return x @ self.A0.T + u @ self.B0.T
        tau = self.tau if self.tau.shape != (1,) else self.tau[0]
        return x * tau

    def skip_jacobian(self, n, m):
        J = np.zeros((n, n + m))
        if self.kind == "g":
            J[:, :n] = np.eye(n)
        elif self.kind == "generalized":
            J[:, :n] = self.A0
            J[:, n:] = self.B0
        elif self.kind == "tau":
            tau = self.tau if self.tau.shape == (n,) else np.full(n, self.tau[0])
            J[:, :n] = np.diag(tau)
        return J

    def default_epochs(self):
        """Baseline epoch budget: 2000 for the raw form, 1000 with a skip."""
        return 2000 if self.kind == "f" else 1000

    def to_dict(self):
        return {
            "kind": self.kind,
            "A0": None if self.A0 is None else self.A0.tolist(),
            "B0": None if self.B0 is None else self.B0.tolist(),
            "tau": None if self.tau is None else self.tau.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            A0=None if d.get("A0") is None else np.asarray(d["A0"]),
            B0=None if d.get("B0") is None else np.asarray(d["B0"]),
            tau=None if d.get("tau") is None else np.asarray(d["tau"]),
        )


@dataclass
class MLPModel:
    """Multilayer perceptron with a linear output layer.

    ``weights[l]`` has shape (fan_out, fan_in); hidden layers all use the
    same activation.  ``input_mean``/``input_scale`` standardize the raw
    (x, u) vector before the first layer; targets stay raw so the output
    keeps next-state units.
    """

    weights: list
    biases: list
    activation: str
    objective: ObjectiveForm
    dropout_rate: float = 0.0
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise DimensionError("layer dimensions do not chain")

    @property
    def n(self):
        return self.weights[-1].shape[0]

    @property
    def m(self):
        return self.weights[0].shape[1] - self.n

    def parameters(self):
        return list(self.weights) + list(self.biases)

    def clone(self):
        return copy.deepcopy(self)


@dataclass
class Ensemble:
    """Networks trained on the same data; predictions and Jacobians average."""

    members: list

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble must have at least one member")
        first = self.members[0]
        for mdl in self.members[1:]:
            if (mdl.n, mdl.m) != (first.n, first.m):
                raise DimensionError("ensemble members disagree on dimensions")
            if mdl.objective.kind != first.objective.kind:
                raise ValueError("ensemble members must share the objective form")

    @property
    def n(self):
        return self.members[0].n

    @property
    def m(self):
        return self.members[0].m

    @property
    def objective(self):
        return self.members[0].objective

    def clone(self):
        return Ensemble(members=[mdl.clone() for mdl in self.members])


@dataclass
class TrainConfig:
    epochs: int = 1000
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1, beta2 must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _derived_seed(*keys):
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def init_mlp(
    n,
    m,
    activation="tanh",
    objective=None,
    hidden=(20,),
    dropout_rate=0.0,
    seed=0,
) -> MLPModel:
    """Glorot-uniform weights, zero biases; ``hidden=()`` gives a linear map."""
    objective = objective or ObjectiveForm("g")
    objective.validate_dims(n, m)
    rng = np.random.default_rng(seed)
    dims = [n + m] + list(hidden) + [n]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPModel(
        weights=weights,
        biases=biases,
        activation=activation,
        objective=objective,
        dropout_rate=dropout_rate,
    )


def init_ensemble(
    n,
    m,
    objective=None,
    size=4,
    activations=None,
    hidden=(20,),
    dropout_rate=0.0,
    seed=0,
) -> Ensemble:
    """Independent members cycling through the default activation set."""
    activations = activations or DEFAULT_ENSEMBLE_ACTIVATIONS
    objective = objective or ObjectiveForm("g")
    members = []
    for i in range(size):
        members.append(
            init_mlp(
                n,
                m,
                activation=activations[i % len(activations)],
                objective=copy.deepcopy(objective),
                hidden=hidden,
                dropout_rate=dropout_rate,
                seed=_derived_seed(seed, i, 0xA11),
            )
        )
    return Ensemble(members=members)


def _standardized(model, Z):
    if model.input_mean is None:
        return Z
    return (Z - model.input_mean) / model.input_scale


def _forward(model, Z, dropout_rng=None):
    """Net output plus per-layer caches (pre-activations, layer inputs, masks)."""
    act, _ = ACTIVATIONS[model.activation]
    h = _standardized(model, Z)
    inputs, preacts, masks = [h], [], []
    n_hidden = len(model.weights) - 1
    for l in range(n_hidden):
        a = h @ model.weights[l].T + model.biases[l]
        preacts.append(a)
        h = act(a)
        if dropout_rng is not None and model.dropout_rate > 0.0:
            keep = 1.0 - model.dropout_rate
            mask = (dropout_rng.random(a.shape) < keep) / keep
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        inputs.append(h)
    y = h @ model.weights[-1].T + model.biases[-1]
    return y, inputs, preacts, masks


def net_output(model: MLPModel, x, u):
    """Raw network output, before any skip term."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    single = x.ndim == 1
    Z = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
    y, *_ = _forward(model, Z)
    return y[0] if single else y


def predict(model: MLPModel, x, u):
    """Next-state prediction through the objective's output form."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    U = np.atleast_2d(u)
    if X.shape[1] != model.n or U.shape[1] != model.m:
        raise DimensionError(
            f"expected x in R^{model.n}, u in R^{model.m}, got {X.shape[1]}, {U.shape[1]}"
        )
    y, *_ = _forward(model, np.hstack([X, U]))
    out = y + model.objective.skip(X, U)
    return out[0] if single else out


def net_jacobian(model: MLPModel, x, u):
    """Analytic Jacobian of the raw network output w.r.t. (x, u)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _, dact = ACTIVATIONS[model.activation]
    Z = np.concatenate([x, u])[None, :]
    _, _, preacts, _ = _forward(model, Z)
    J = model.weights[-1]
    for l in range(len(preacts) - 1, -1, -1):
        J = (J * dact(preacts[l][0])[None, :]) @ model.weights[l]
    if model.input_mean is not None:
        J = J / model.input_scale[None, :]
    return J


def model_jacobian(model: MLPModel, x, u) -> JacobianMatrix:
    """Input-output Jacobian of the full prediction map, including the skip."""
    J = net_jacobian(model, x, u) + model.objective.skip_jacobian(model.n, model.m)
    return JacobianMatrix(J, n=model.n)


def loss_and_grad(model: MLPModel, batch, cfg: TrainConfig, dropout_rng=None):
    """Quadratic one-step loss and its exact parameter gradient.

    ``batch`` is an (X, U, Y) triple of arrays.  The returned loss includes
    the L2 weight penalty (biases excluded); the gradient covers every
    trainable array in ``model.parameters()`` order.
    """
    X, U, Y = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in batch)
    if len(X) == 0:
        raise ValueError("batch must be nonempty")
    Z = np.hstack([X, U])
    y, inputs, preacts, masks = _forward(model, Z, dropout_rng=dropout_rng)
    r = y + model.objective.skip(X, U) - Y
    V = 0.5 * float(np.sum(r * r))

    _, dact = ACTIVATIONS[model.activation]
    n_layers = len(model.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    delta = r
    gW[-1] = delta.T @ inputs[-1]
    gb[-1] = delta.sum(axis=0)
    dh = delta @ model.weights[-1]
    for l in range(n_layers - 2, -1, -1):
        if masks[l] is not None:
            dh = dh * masks[l]
        da = dh * dact(preacts[l])
        gW[l] = da.T @ inputs[l]
        gb[l] = da.sum(axis=0)
        if l > 0:
            dh = da @ model.weights[l]

    eta = cfg.weight_decay
    if eta > 0.0:
        for l in range(n_layers):
            V += 0.5 * eta * float(np.sum(model.weights[l] ** 2))
            gW[l] = gW[l] + eta * model.weights[l]
    return V, gW + gb


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_model(cls, model):
        params = model.parameters()
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected ADAM update, in place on ``params``."""
    state.t += 1
    c1 = 1.0 - cfg.beta1**state.t
    c2 = 1.0 - cfg.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.step_size * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


def _dataset_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 3:
        X, U, Y = dataset
    else:
        X = np.array([t[0] for t in dataset], dtype=np.float64)
        U = np.array([t[1] for t in dataset], dtype=np.float64)
        Y = np.array([t[2] for t in dataset], dtype=np.float64)
    return (
        np.atleast_2d(np.asarray(X, dtype=np.float64)),
        np.atleast_2d(np.asarray(U, dtype=np.float64)),
        np.atleast_2d(np.asarray(Y, dtype=np.float64)),
    )


def train(model: MLPModel, dataset, cfg: TrainConfig, epoch_data=None):
    """Minibatch ADAM for a fixed number of epochs; deterministic per seed.

    Returns the trained model and the per-epoch mean data loss.  The model
    is updated in place; standardization statistics are refreshed from the
    dataset before the first step.  ``epoch_data(epoch)``, when given,
    supplies a fresh dataset at each epoch (resampled augmentation targets);
    standardization stays pinned to the initial dataset.
    """
    X, U, Y = _dataset_arrays(dataset)
    if len(X) == 0:
        raise ValueError("dataset must be nonempty")
    if cfg.epochs == 0:
        return model, []

    if cfg.standardize:
        Z = np.hstack([X, U])
        model.input_mean = Z.mean(axis=0)
        model.input_scale = np.maximum(Z.std(axis=0), 1e-8)
    else:
        model.input_mean = None
        model.input_scale = None

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_model(model)
    curve = []
    use_dropout = model.dropout_rate > 0.0
    for epoch in range(cfg.epochs):
        if epoch_data is not None:
            X, U, Y = _dataset_arrays(epoch_data(epoch))
        N = len(X)
        perm = rng.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            V, grads = loss_and_grad(
                model,
                (X[idx], U[idx], Y[idx]),
                cfg,
                dropout_rng=rng if use_dropout else None,
            )
            if cfg.weight_decay > 0.0:
                V -= 0.5 * cfg.weight_decay * sum(
                    float(np.sum(W**2)) for W in model.weights
                )
            total += V
            adam_step(model.parameters(), grads, state, cfg)
        mean_loss = total / N
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(
                f"training loss became non-finite at epoch {epoch}", epoch
            )
        curve.append(mean_loss)
    return model, curve


def train_ensemble(ens: Ensemble, dataset, cfg: TrainConfig, epoch_data=None):
    """Train every member on the same data with member-derived seeds."""
    curves = []
    for i, member in enumerate(ens.members):
        member_cfg = replace(cfg, seed=_derived_seed(cfg.seed, i, 0x7E41))
        _, curve = train(member, dataset, member_cfg, epoch_data=epoch_data)
        curves.append(curve)
    return ens, curves


def ensemble_predict(ens: Ensemble, x, u):
    """Arithmetic mean of member predictions, fixed summation order."""
    total = predict(ens.members[0], x, u)
    for member in ens.members[1:]:
        total = total + predict(member, x, u)
    return total / len(ens.members)


def ensemble_jacobian(ens: Ensemble, x, u) -> JacobianMatrix:
    """Arithmetic mean of member Jacobians, fixed summation order."""
    total = model_jacobian(ens.members[0], x, u).entries
    for member in ens.members[1:]:
        total = total + model_jacobian(member, x, u).entries
    return JacobianMatrix(total / len(ens.members), n=ens.n)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: MLPModel):
    return {
        "n": model.n,
        "m": model.m,
        "activation": model.activation,
        "objective": model.objective.to_dict(),
        "dropout_rate": model.dropout_rate,
        "input_mean": None if model.input_mean is None else model.input_mean.tolist(),
        "input_scale": None if model.input_scale is None else model.input_scale.tolist(),
        "layers": [
            {"W": W.tolist(), "b": b.tolist()}
            for W, b in zip(model.weights, model.biases)
        ],
    }


def model_from_dict(d) -> MLPModel:
    model = MLPModel(
        weights=[np.asarray(layer["W"], dtype=np.float64) for layer in d["layers"]],
        biases=[np.asarray(layer["b"], dtype=np.float64) for layer in d["layers"]],
        activation=d["activation"],
        objective=ObjectiveForm.from_dict(d["objective"]),
        dropout_rate=d.get("dropout_rate", 0.0),
    )
    if d.get("input_mean") is not None:
        model.input_mean = np.asarray(d["input_mean"], dtype=np.float64)
        model.input_scale = np.asarray(d["input_scale"], dtype=np.float64)
    return model


def save_model(model: MLPModel, path):
    with open(Path(path), "w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path) -> MLPModel:
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh))


def save_ensemble(ens: Ensemble, path):
    with open(Path(path), "w") as fh:
        json.dump({"members": [model_to_dict(mdl) for mdl in ens.members]}, fh)
        fh.write("\n")


def load_ensemble(path) -> Ensemble:
    with open(Path(path)) as fh:
        payload = json.load(fh)
    return Ensemble(members=[model_from_dict(d) for d in payload["members"]])
