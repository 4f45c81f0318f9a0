# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Feedforward intrusion detection model written directly in numpy.

 Hidden layers use the rectifier, the head is logistic for two classes
 (benign / attack) and softmax for more. Training is mini-batch Adam on
 binary or categorical cross-entropy. The per-feature standardization of the
 training data is part of the model, so raw feature rows go in everywhere.
-------------------------------------------------------------------------------
'''
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit, log_softmax, softmax

from pcapbd.errors import ContractError, TrainingDivergedError
from pcapbd.logger import debug, info

HEAD_BINARY = "binary"
HEAD_MULTICLASS = "multiclass"
LOSS_FOR_HEAD = {HEAD_BINARY: "binary-ce", HEAD_MULTICLASS: "categorical-ce"}

DNN_3 = (64, 32, 16)
DNN_5 = (128, 64, 32, 16, 8)

BENIGN = "benign"
BINARY_CLASSES = [BENIGN, "attack"]

MODEL_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss: Optional[str] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError(f"learning rate must be > 0, got {self.learning_rate}")
        if int(self.epochs) < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")
        if self.loss is not None and self.loss not in LOSS_FOR_HEAD.values():
            raise ContractError(f"unknown loss '{self.loss}'")


@dataclass
class IdsModel:
    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head: str
    classes: List[str]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    loss_history: List[float] = field(default_factory=list, compare=False)

    @property
    def input_width(self):
        return self.layer_dims[0]

    @property
    def hidden_widths(self):
        return list(self.layer_dims[1:-1])

    @property
    def benign_index(self):
        return self.classes.index(BENIGN) if BENIGN in self.classes else 0


def head_for(classes):
    return HEAD_BINARY if len(classes) == 2 else HEAD_MULTICLASS


def initialize_model(input_width, hidden_dims=DNN_3, classes=None, seed=0):
    '''
    Uniform fan-in initialization U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero
    biases, identity standardization.
    '''
    classes = list(classes or BINARY_CLASSES)
    if len(classes) < 2:
        raise ContractError("a classifier needs at least two classes")
    head = head_for(classes)
    outputWidth = 1 if head == HEAD_BINARY else len(classes)
    dims = [int(input_width)] + [int(h) for h in hidden_dims] + [outputWidth]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fanIn, fanOut in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fanIn)
        weights.append(rng.uniform(-limit, limit, size=(fanIn, fanOut)))
        biases.append(np.zeros(fanOut))
    return IdsModel(dims, weights, biases, head, classes, np.zeros(dims[0]), np.ones(dims[0]))


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# FORWARD / BACKWARD
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def as_matrix(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2 or X.shape[1] != model.input_width:
        raise ContractError(f"rows of width {X.shape[-1]} given to a model expecting {model.input_width}")
    return X


def standardize(model, X):
    return (as_matrix(model, X) - model.feature_mean) / model.feature_std


def forward(model, Xs):
    '''
    Pre-activations and activations of every layer for standardized input.
    activations[0] is the input, the last pre-activation holds the logits.
    '''
    activations = [Xs]
    preActivations = []
    a = Xs
    last = len(model.weights) - 1
    for layer, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        preActivations.append(z)
        if layer < last:
            a = np.maximum(z, 0.0)
            activations.append(a)
    return preActivations, activations


def probabilities_from_logits(model, logits):
    if model.head == HEAD_BINARY:
        p = expit(logits[:, 0])
        return np.column_stack([1.0 - p, p])
    return softmax(logits, axis=1)


def loss_and_gradients(model, X, y):
    '''
    Mean cross-entropy of raw rows X with class indices y and its gradient
    with respect to every weight matrix and bias vector.
    '''
    Xs = standardize(model, X)
    y = np.asarray(y, dtype=int)
    n = len(Xs)
    preActivations, activations = forward(model, Xs)
    logits = preActivations[-1]
    if model.head == HEAD_BINARY:
        z = logits[:, 0]
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = ((expit(z) - y) / n)[:, np.newaxis]
    else:
        logp = log_softmax(logits, axis=1)
        loss = float(-np.mean(logp[np.arange(n), y]))
        dz = np.exp(logp)
        dz[np.arange(n), y] -= 1.0
        dz /= n

    gradW = [None] * len(model.weights)
    gradB = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        gradW[layer] = activations[layer].T @ dz
        gradB[layer] = dz.sum(axis=0)
        if layer > 0:
            dz = (dz @ model.weights[layer].T) * (preActivations[layer - 1] > 0)
    return loss, gradW, gradB


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# TRAINING
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def labels_to_indices(labels, classes):
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[str(l)] for l in labels], dtype=int)
    except KeyError as e:
        raise ContractError(f"label {e} is not one of {classes}") from e


def train(X, y, cfg=None, hidden_dims=DNN_3, classes=None):
    '''
    Train a fresh model.

    Parameters
    ----------
    X: numpy.array
       (n, width) raw feature rows.
    y: numpy.array
       (n,) class indices into `classes`.
    cfg: TrainConfig
    hidden_dims: sequence of int
       Hidden layer widths, DNN_3 or DNN_5 for the usual depths.
    classes: list of str
       Class names, benign first. Two classes give the logistic head.

    Returns
    -------
    model: IdsModel
    '''
    cfg = cfg or TrainConfig()
    classes = list(classes or BINARY_CLASSES)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or len(X) == 0:
        raise ContractError("training needs a non-empty 2-D feature matrix")
    if len(y) != len(X):
        raise ContractError(f"{len(X)} rows but {len(y)} labels")
    if y.min() < 0 or y.max() >= len(classes):
        raise ContractError(f"labels must be class indices in [0, {len(classes) - 1}]")
    head = head_for(classes)
    if cfg.loss is not None and cfg.loss != LOSS_FOR_HEAD[head]:
        raise ContractError(f"loss {cfg.loss} does not fit a {head} head")

    model = initialize_model(X.shape[1], hidden_dims, classes, seed=cfg.seed)
    model.feature_mean = X.mean(axis=0)
    std = X.std(axis=0)
    model.feature_std = np.where(std > 0, std, 1.0)

    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)).spawn(1)[0])
    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    info(f"Training {head} model {model.layer_dims} on {len(X)} rows, {cfg.epochs} epochs")
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        epochLoss = 0.0
        for batch, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, gradW, gradB = loss_and_gradients(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, batch, loss)
            step += 1
            for i, grad in enumerate(gradW + gradB):
                m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * grad
                v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * grad**2
                mHat = m[i] / (1 - cfg.beta1**step)
                vHat = v[i] / (1 - cfg.beta2**step)
                params[i] -= cfg.learning_rate * mHat / (np.sqrt(vHat) + cfg.epsilon)
            epochLoss += loss * len(idx)
        model.loss_history.append(epochLoss / len(X))
        debug(f"epoch {epoch + 1}/{cfg.epochs}: loss {model.loss_history[-1]:.6f}")
    info(f"Final training loss {model.loss_history[-1]:.6f}")
    return model


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# INFERENCE
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def predict_proba(model, X):
    preActivations, _ = forward(model, standardize(model, X))
    return probabilities_from_logits(model, preActivations[-1])


def predict_classes(model, X):
    return np.argmax(predict_proba(model, X), axis=1)


def predict(model, row):
    '''
    (class index, probability vector) for a single row.
    '''
    row = np.asarray(getattr(row, "values", row), dtype=float)
    if row.ndim != 1:
        raise ContractError("predict takes a single row, use predict_proba for batches")
    probs = predict_proba(model, row)[0]
    return int(np.argmax(probs)), probs


def hidden_activations(model, X):
    '''
    Rectified output of the last hidden layer, one row per input row.
    '''
    _, activations = forward(model, standardize(model, X))
    return activations[-1]


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# SERIALIZATION
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def save_model(model, path):
    '''
    numpy .npz container: format_version, layer_dims, head, classes,
    standardization vectors, W0..Wn, b0..bn.
    '''
    arrays = {
        "format_version": np.array(MODEL_FORMAT_VERSION),
        "layer_dims": np.array(model.layer_dims, dtype=np.int64),
        "head": np.array(model.head),
        "classes": np.array(model.classes),
        "feature_mean": model.feature_mean,
        "feature_std": model.feature_std,
    }
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    info(f"Writing model: {path}")


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise ContractError(f"{path}: model format {version}, expected {MODEL_FORMAT_VERSION}")
        dims = [int(d) for d in data["layer_dims"]]
        nLayers = len(dims) - 1
        return IdsModel(
            layer_dims=dims,
            weights=[data[f"W{i}"] for i in range(nLayers)],
            biases=[data[f"b{i}"] for i in range(nLayers)],
            head=str(data["head"]),
            classes=[str(c) for c in data["classes"]],
            feature_mean=data["feature_mean"],
            feature_std=data["feature_std"])
