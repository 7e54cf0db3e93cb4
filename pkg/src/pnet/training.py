"""Gradient computation and batch training for p-networks.

Backpropagation treats each neuron's shape exponent p as a trainable
parameter alongside the weights: sensitivities flow back through dv/da,
and each p collects dv/dp weighted by the same back-propagated sum.  On a
classification net the softmax output layer contributes the elementwise
delta (yhat - y) * yhat * (1 - yhat) and carries no p gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activation import (
    P_MAX,
    P_MIN,
    _dv_da_scalar,
    _dv_dp_scalar,
    _solve_scalar,
    dv_da_many,
    dv_dp_many,
)
from .data import Dataset
from .network import ForwardTrace, PNetwork, forward_batch

__all__ = [
    "UPDATE_MODES",
    "TrainConfig",
    "TrainLog",
    "TrainingDivergedError",
    "mse",
    "backprop",
    "backprop_batch",
    "train",
    "classification_error",
]


UPDATE_MODES = ("batch", "incremental")


@dataclass(frozen=True)
class TrainConfig:
    """Step sizes, stopping rules, and update mode for gradient descent.

    ``update`` selects how the gradient step is applied: ``"batch"``
    averages gradients over the whole training set before each update,
    ``"incremental"`` applies one update per training pair, cycling
    through the set in order once per iteration.  ``seed`` is carried
    alongside the step sizes so a saved config fully reproduces a run;
    the descent itself draws no randomness (initialization and data
    generation consume it upstream).
    """

    alpha_w: float
    alpha_p: float
    max_iters: int
    max_error: float
    inner_iters: int = 100
    seed: int = 0
    update: str = "batch"

    def __post_init__(self):
        if not (np.isfinite(self.alpha_w) and self.alpha_w > 0):
            raise ValueError(f"alpha_w must be finite and > 0, got {self.alpha_w}")
        if not (np.isfinite(self.alpha_p) and self.alpha_p >= 0):
            raise ValueError(f"alpha_p must be finite and >= 0, got {self.alpha_p}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (np.isfinite(self.max_error) and self.max_error > 0):
            raise ValueError(f"max_error must be finite and > 0, got {self.max_error}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")
        if self.update not in UPDATE_MODES:
            raise ValueError(f"update must be one of {UPDATE_MODES}, got {self.update!r}")


@dataclass
class TrainLog:
    """Per-iteration training error and (for p-networks) p snapshots.

    ``errors[t]`` is the batch error measured after the t-th update.
    ``p_history`` has one row per iteration and one column per p value,
    ordered as ``p_labels`` (layer index from 1, neuron index from 0);
    it is None for networks without trainable p.
    """

    errors: np.ndarray
    p_history: np.ndarray | None = None
    p_labels: list[tuple[int, int]] | None = None


class TrainingDivergedError(RuntimeError):
    """Raised when the batch error or a parameter becomes non-finite."""


def mse(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Half mean squared error over the batch: sum of squares / (2N)."""
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape != targets.shape or outputs.ndim != 2:
        raise ValueError(f"outputs {outputs.shape} and targets {targets.shape} must be matching N x r")
    diff = outputs - targets
    return float(np.sum(diff * diff) / (2.0 * outputs.shape[0]))


def backprop_batch(
    net: PNetwork,
    trace: ForwardTrace,
    targets: np.ndarray,
    compute_p: bool = True,
) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    """Batch-mean gradients of the half-MSE with respect to weights and p.

    Returns (weight_grads, p_grads); ``weight_grads[k]`` matches
    ``net.weights[k]`` (bias column first) and ``p_grads[k]`` matches
    ``net.p_values[k]``, with None where the layer has no p or when
    ``compute_p`` is false.
    """
    Y = np.asarray(targets, dtype=float)
    m = net.n_layers
    yhat = trace.outputs[-1]
    if Y.shape != yhat.shape:
        raise ValueError(f"targets {Y.shape} do not match outputs {yhat.shape}")
    n = Y.shape[0]
    err = yhat - Y

    weight_grads: list[np.ndarray] = [None] * m  # type: ignore[list-item]
    p_grads: list[np.ndarray | None] = [None] * m

    if net.head == "classification":
        delta = err * yhat * (1.0 - yhat)
    else:
        p_out = net.p_values[-1]
        delta = err * dv_da_many(yhat, p_out[None, :], net.lam)
        if compute_p:
            p_grads[-1] = np.mean(err * dv_dp_many(yhat, p_out[None, :], net.lam), axis=0)

    for k in range(m - 1, -1, -1):
        V_prev = trace.outputs[k]
        weight_grads[k] = np.concatenate(
            [np.sum(delta, axis=0)[:, None], delta.T @ V_prev], axis=1
        ) / n
        if k == 0:
            break
        S = delta @ net.weights[k][:, 1:]
        V = trace.outputs[k]
        pk = net.p_values[k - 1]
        if compute_p:
            p_grads[k - 1] = np.mean(dv_dp_many(V, pk[None, :], net.lam) * S, axis=0)
        delta = dv_da_many(V, pk[None, :], net.lam) * S

    return weight_grads, p_grads


def backprop(
    net: PNetwork, trace: ForwardTrace, target
) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    """Single-sample gradients; the trace must hold exactly one row."""
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[None, :]
    if trace.outputs[-1].shape[0] != 1 or target.shape[0] != 1:
        raise ValueError("backprop expects a single-sample trace and target; use backprop_batch")
    return backprop_batch(net, trace, target)


def _p_labels(net: PNetwork) -> list[tuple[int, int]]:
    labels = []
    for k, pk in enumerate(net.p_values):
        if pk is not None:
            labels.extend((k + 1, j) for j in range(pk.size))
    return labels


def _p_snapshot(net: PNetwork) -> np.ndarray:
    return np.concatenate([pk for pk in net.p_values if pk is not None])


def _apply_batch_pass(net: PNetwork, X, Y, cfg: TrainConfig, adapt_p: bool, state: dict) -> None:
    """One full-batch update: mean gradients at the current parameters."""
    trace = state.get("trace")
    if trace is None:
        trace = forward_batch(net, X, cfg.inner_iters)
    wg, pg = backprop_batch(net, trace, Y, compute_p=adapt_p)
    for k in range(net.n_layers):
        net.weights[k] -= cfg.alpha_w * wg[k]
        if adapt_p and pg[k] is not None:
            pk = net.p_values[k]
            pk -= cfg.alpha_p * pg[k]
            np.clip(pk, P_MIN, P_MAX, out=pk)


def _apply_incremental_pass(net: PNetwork, X, Y, cfg: TrainConfig, adapt_p: bool, state: dict) -> None:
    """One cycle of per-pair updates, in dataset order.

    Each pair's gradients are all taken at the parameters it found
    (backward sweep completes before any update), then applied at once.
    Arithmetic runs in scalar form — on layers of a few neurons that is
    roughly an order of magnitude faster than array calls — and each
    pair's activation solves warm-start from that pair's solutions on
    the previous cycle.
    """
    m = net.n_layers
    n = X.shape[0]
    lam = net.lam
    aw, ap = cfg.alpha_w, cfg.alpha_p
    inner = cfg.inner_iters
    classification = net.head == "classification"
    warm = state.get("warm")
    if warm is None:
        warm = [np.full((n, net.layer_sizes[k + 1]), np.nan) for k in range(m)]
        state["warm"] = warm
    state["trace"] = None  # parameters move mid-pass; never reuse a stale trace

    outs = [None] * (m + 1)
    deltas = [None] * m
    pgs = [None] * m
    for i in range(n):
        v = X[i]
        outs[0] = v
        for k in range(m):
            W = net.weights[k]
            a = W[:, 1:] @ v + W[:, 0]
            if classification and k == m - 1:
                z = np.exp(a - a.max())
                v = z / z.sum()
            else:
                pk = net.p_values[k]
                wrow = warm[k][i]
                v = np.array(
                    [_solve_scalar(a[j], pk[j], lam, inner, wrow[j]) for j in range(a.size)]
                )
                warm[k][i] = v
            outs[k + 1] = v

        err = outs[-1] - Y[i]
        if classification:
            delta = err * outs[-1] * (1.0 - outs[-1])
            pgs[m - 1] = None
        else:
            p_out = net.p_values[-1]
            ym = outs[-1]
            delta = err * np.array(
                [_dv_da_scalar(ym[j], p_out[j], lam) for j in range(ym.size)]
            )
            if adapt_p:
                pgs[m - 1] = err * np.array(
                    [_dv_dp_scalar(ym[j], p_out[j], lam) for j in range(ym.size)]
                )
        deltas[m - 1] = delta
        for k in range(m - 1, 0, -1):
            S = deltas[k] @ net.weights[k][:, 1:]
            pk = net.p_values[k - 1]
            vk = outs[k]
            if adapt_p:
                pgs[k - 1] = S * np.array(
                    [_dv_dp_scalar(vk[j], pk[j], lam) for j in range(vk.size)]
                )
            deltas[k - 1] = S * np.array(
                [_dv_da_scalar(vk[j], pk[j], lam) for j in range(vk.size)]
            )

        for k in range(m):
            W = net.weights[k]
            d = deltas[k]
            W[:, 0] -= aw * d
            W[:, 1:] -= aw * np.outer(d, outs[k])
            if adapt_p and pgs[k] is not None:
                pk = net.p_values[k]
                pk -= ap * pgs[k]
                np.clip(pk, P_MIN, P_MAX, out=pk)


_UPDATE_PASSES = {"batch": _apply_batch_pass, "incremental": _apply_incremental_pass}


def train(net: PNetwork, data: Dataset, cfg: TrainConfig) -> tuple[PNetwork, TrainLog]:
    """Gradient-descent training; returns a trained copy and its log.

    Each iteration applies one update pass at the current parameters —
    a mean-gradient step for ``update="batch"``, a cycle of per-pair
    steps for ``update="incremental"`` — with every p clipped to its
    valid range, then measures the whole-set error at the new
    parameters.  Stops after ``max_iters`` iterations or as soon as the
    measured error drops below ``max_error``; raises
    `TrainingDivergedError` if a weight or the error becomes non-finite.
    """
    if (data.task == "classification") != (net.head == "classification"):
        raise ValueError(f"dataset task {data.task!r} does not match network head {net.head!r}")
    net = net.copy()
    X, Y = data.inputs, data.targets
    adapt_p = cfg.alpha_p > 0 and any(pk is not None for pk in net.p_values)
    track_p = any(pk is not None for pk in net.p_values)
    labels = _p_labels(net) if track_p else None
    update_pass = _UPDATE_PASSES[cfg.update]

    errors: list[float] = []
    p_rows: list[np.ndarray] = []
    state: dict = {}
    for it in range(cfg.max_iters):
        update_pass(net, X, Y, cfg, adapt_p, state)
        if not all(np.all(np.isfinite(W)) for W in net.weights):
            raise TrainingDivergedError(f"non-finite weight after iteration {it + 1}")
        trace = forward_batch(net, X, cfg.inner_iters)
        e = mse(trace.outputs[-1], Y)
        if not np.isfinite(e):
            raise TrainingDivergedError(f"non-finite training error after iteration {it + 1}")
        state["trace"] = trace
        errors.append(e)
        if track_p:
            p_rows.append(_p_snapshot(net))
        if e < cfg.max_error:
            break

    log = TrainLog(
        errors=np.array(errors),
        p_history=np.array(p_rows) if track_p else None,
        p_labels=labels,
    )
    return net, log


def classification_error(net, data: Dataset, inner_iters: int = 100) -> float:
    """Fraction of samples whose argmax output misses the argmax target.

    Ties resolve to the lowest index on both sides.  Works for any
    network exposing batch forward evaluation via `predict`-compatible
    outputs (p-networks and baselines alike).
    """
    from .baseline import BaselineNetwork, forward_batch_fixed

    if data.task != "classification":
        raise ValueError("classification_error needs a classification dataset")
    if isinstance(net, BaselineNetwork):
        yhat = forward_batch_fixed(net, data.inputs).outputs[-1]
    else:
        yhat = forward_batch(net, data.inputs, inner_iters).outputs[-1]
    pred = np.argmax(yhat, axis=1)
    truth = np.argmax(data.targets, axis=1)
    return float(np.mean(pred != truth))
