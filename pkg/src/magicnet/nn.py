"""Dense GRU numerics: forward pass, exact backprop through time, Adam,
and a finite-difference gradient oracle.

Parameters live in plain dicts of float64 numpy arrays keyed by::

    Wz, Wr, Wh : (hidden, input)   input-to-gate weights
    Uz, Ur, Uh : (hidden, hidden)  recurrent weights
    bz, br, bh : (hidden,)         gate biases
    w          : (hidden,)         output head weights
    b          : ()                output head bias

The recurrence is

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    c = tanh(Wh x + Uh (r * h) + bh)
    h' = (1 - z) * h + z * c

with a single logit read off the final hidden state, and binary
cross-entropy on that logit as the loss.  Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

GATES = ("z", "r", "h")
WEIGHT_KEYS = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh")
BIAS_KEYS = ("bz", "br", "bh")
PARAM_KEYS = WEIGHT_KEYS + BIAS_KEYS + ("w", "b")

Params = dict


def param_shapes(input_dim: int, hidden_dim: int) -> dict:
    """Shapes of every parameter tensor for the given dimensions."""
    shapes = {}
    for g in GATES:
        shapes[f"W{g}"] = (hidden_dim, input_dim)
        shapes[f"U{g}"] = (hidden_dim, hidden_dim)
        shapes[f"b{g}"] = (hidden_dim,)
    shapes["w"] = (hidden_dim,)
    shapes["b"] = ()
    return shapes


def glorot_uniform(fan_in: int, fan_out: int, shape, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases."""
    p = {}
    for g in GATES:
        p[f"W{g}"] = glorot_uniform(input_dim, hidden_dim, (hidden_dim, input_dim), rng)
        p[f"U{g}"] = glorot_uniform(hidden_dim, hidden_dim, (hidden_dim, hidden_dim), rng)
        p[f"b{g}"] = np.zeros(hidden_dim)
    p["w"] = glorot_uniform(hidden_dim, 1, (hidden_dim,), rng)
    p["b"] = np.zeros(())
    return p


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: np.array(v) for k, v in params.items()}


def check_dims(params: Params) -> tuple[int, int]:
    """Return (input_dim, hidden_dim), raising on inconsistent shapes."""
    hidden, inp = params["Wz"].shape
    expected = param_shapes(inp, hidden)
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ValueError(f"parameter {k} has shape {params[k].shape}, expected {shape}")
    return inp, hidden


@dataclass
class StepCache:
    """Per-timestep activations kept for exact backprop."""

    x: np.ndarray       # (n, input)
    h_prev: np.ndarray  # (n, hidden)
    z: np.ndarray
    r: np.ndarray
    rh: np.ndarray      # r * h_prev
    c: np.ndarray       # candidate state, tanh output
    h_new: np.ndarray


@dataclass
class SequenceCache:
    steps: list
    h_final: np.ndarray  # (n, hidden)
    logit: np.ndarray    # (n,)
    params: Params       # parameters the pass was run with


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == dim:
        return x[None, ...], True
    return x, False


def gru_cell_forward(x, h_prev, params: Params):
    """One GRU step.  Accepts a single vector or an (n, input) batch.

    Returns (h_new, cache); h_new matches the batch-ness of the inputs.
    """
    x, squeezed = _as_batch(x, 1)
    h_prev, _ = _as_batch(h_prev, 1)
    if x.shape[1] != params["Wz"].shape[1] or h_prev.shape[1] != params["Uz"].shape[1]:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, h {h_prev.shape}, "
            f"Wz {params['Wz'].shape}"
        )
    z = sigmoid(x @ params["Wz"].T + h_prev @ params["Uz"].T + params["bz"])
    r = sigmoid(x @ params["Wr"].T + h_prev @ params["Ur"].T + params["br"])
    rh = r * h_prev
    c = np.tanh(x @ params["Wh"].T + rh @ params["Uh"].T + params["bh"])
    h_new = (1.0 - z) * h_prev + z * c
    cache = StepCache(x=x, h_prev=h_prev, z=z, r=r, rh=rh, c=c, h_new=h_new)
    return (h_new[0] if squeezed else h_new), cache


def forward_sequence(seq, params: Params):
    """Run a window through the GRU and the linear head.

    ``seq`` is (W, input) for one sequence or (n, W, input) for a batch.
    The initial hidden state is zero.  Returns (logit, SequenceCache);
    the logit is a scalar for a single sequence, an (n,) array for a batch.
    """
    seq, squeezed = _as_batch(seq, 2)
    n, steps, _ = seq.shape
    if steps < 1:
        raise ValueError("empty sequence")
    hidden = params["Uz"].shape[0]
    h = np.zeros((n, hidden))
    caches = []
    for t in range(steps):
        h, cache = gru_cell_forward(seq[:, t, :], h, params)
        caches.append(cache)
    logit = h @ params["w"] + params["b"]
    sc = SequenceCache(steps=caches, h_final=h, logit=logit, params=params)
    return (float(logit[0]) if squeezed else logit), sc


def forward_states(seq, params: Params) -> list:
    """Inference-only hidden states for one (W, input) sequence, as a list
    of per-step vectors.  Matvec formulation without caches; noticeably
    faster than forward_sequence for the per-point prediction loop."""
    Wz, Uz, bz = params["Wz"], params["Uz"], params["bz"]
    Wr, Ur, br = params["Wr"], params["Ur"], params["br"]
    Wh, Uh, bh = params["Wh"], params["Uh"], params["bh"]
    h = np.zeros(Uz.shape[0])
    states = []
    for x in seq:
        z = sigmoid(Wz @ x + Uz @ h + bz)
        r = sigmoid(Wr @ x + Ur @ h + br)
        c = np.tanh(Wh @ x + Uh @ (r * h) + bh)
        h = (1.0 - z) * h + z * c
        states.append(h)
    return states


def forward_logit(seq, params: Params) -> float:
    """Inference-only forward pass for one (W, input) sequence.

    Every prediction path shares this function, so learners that are
    supposed to emit identical probability streams do so bit for bit.
    """
    h = forward_states(seq, params)[-1]
    return float(params["w"] @ h + params["b"])


def bce_loss(logit, target) -> float:
    """Mean binary cross-entropy of sigmoid(logit) against targets in {0,1}.

    Computed in the numerically stable logit form.
    """
    logit = np.atleast_1d(np.asarray(logit, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    return float(np.mean(np.logaddexp(0.0, logit) - target * logit))


def backward_sequence(cache: SequenceCache, target) -> Params:
    """Exact gradients of the mean BCE loss w.r.t. every parameter.

    ``target`` is a scalar in {0,1} for a single sequence or an (n,)
    array for a batch; gradients are of the mean loss over the batch.
    """
    params = cache.params
    target = np.atleast_1d(np.asarray(target, dtype=float))
    n = cache.logit.shape[0]
    if target.shape[0] != n:
        raise ValueError(f"{target.shape[0]} targets for {n} sequences")
    grads = zeros_like_params(params)

    dlogit = (sigmoid(cache.logit) - target) / n
    grads["w"] = cache.h_final.T @ dlogit
    grads["b"] = np.asarray(dlogit.sum())
    dh = dlogit[:, None] * params["w"][None, :]

    for step in reversed(cache.steps):
        dz = dh * (step.c - step.h_prev)
        dc = dh * step.z
        dh_prev = dh * (1.0 - step.z)

        dsc = dc * (1.0 - step.c * step.c)
        grads["Wh"] += dsc.T @ step.x
        grads["Uh"] += dsc.T @ step.rh
        grads["bh"] += dsc.sum(axis=0)
        drh = dsc @ params["Uh"]
        dh_prev += drh * step.r
        dr = drh * step.h_prev

        dsr = dr * step.r * (1.0 - step.r)
        grads["Wr"] += dsr.T @ step.x
        grads["Ur"] += dsr.T @ step.h_prev
        grads["br"] += dsr.sum(axis=0)
        dh_prev += dsr @ params["Ur"]

        dsz = dz * step.z * (1.0 - step.z)
        grads["Wz"] += dsz.T @ step.x
        grads["Uz"] += dsz.T @ step.h_prev
        grads["bz"] += dsz.sum(axis=0)
        dh_prev += dsz @ params["Uz"]

        dh = dh_prev
    return grads


def loss_and_grads(seq, target, params: Params):
    """Convenience wrapper: forward + backward in one call."""
    logit, cache = forward_sequence(seq, params)
    return bce_loss(logit, target), backward_sequence(cache, target)


@dataclass
class AdamState:
    """Adam moment accumulators; shapes mirror the parameter dict."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: Params
    v: Params


def adam_init(params: Params, lr: float = 0.01, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m=zeros_like_params(params), v=zeros_like_params(params))


def adam_step(params: Params, grads: Params, state: AdamState):
    """One Adam update with bias correction.

    Pure: returns (new_params, new_state) without touching the inputs,
    so identical calls from identical state give identical results.
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(lr=state.lr, beta1=b1, beta2=b2, eps=state.eps,
                            step=t, m=new_m, v=new_v)


def finite_difference_check(loss_fn, params: Params, eps: float = 1e-5,
                            analytic: Params | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must be deterministic.  It either returns
    ``(loss, grads)`` (the analytic gradients are taken from the first,
    unperturbed call) or, when ``analytic`` is supplied, a bare loss.
    The relative error for one entry is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if analytic is None:
        _, analytic = loss_fn(params)
        def evaluate(p):
            return loss_fn(p)[0]
    else:
        evaluate = loss_fn
    worst = 0.0
    for key in params:
        work = {k: (v.copy() if k == key else v) for k, v in params.items()}
        flat = work[key].reshape(-1)
        a_flat = np.asarray(analytic[key], dtype=float).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = evaluate(work)
            flat[i] = orig - eps
            lo = evaluate(work)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
