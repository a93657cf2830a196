"""Sigmoid-valued masks over frozen GRU weights, hidden-layer expansion,
and the composition of a winning option into a new frozen base.

A mask is a dict of real-valued pre-activation tensors mirroring the
parameter shapes.  The effective weight for a frozen entry is
``frozen * sigmoid(pre_activation)``, which keeps every effective mask
value strictly inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from . import nn
from .nn import GATES, PARAM_KEYS

MASK_INIT_RANGE = 0.1
# Pre-activation used where a mask entry has no predecessor to copy from
# (weights that carried an implicit mask of 1 before composition).  Keeps
# sigmoid near 1 while leaving a usable gradient, unlike full saturation.
MASK_NEAR_ONE = 4.0


@dataclass
class FrozenBase:
    """Immutable parameter snapshot.  Arrays are write-locked copies."""

    params: dict
    input_dim: int
    hidden_dim: int

    @classmethod
    def from_params(cls, params: dict) -> "FrozenBase":
        input_dim, hidden_dim = nn.check_dims(params)
        locked = {}
        for k, v in params.items():
            arr = np.array(v)
            arr.setflags(write=False)
            locked[k] = arr
        return cls(params=locked, input_dim=input_dim, hidden_dim=hidden_dim)


def init_mask_random(base: FrozenBase, rng: np.random.Generator) -> dict:
    """Pre-activations i.i.d. uniform in [-0.1, 0.1]: effective masks start
    near 0.5 with symmetric room to amplify or suppress."""
    return {k: rng.uniform(-MASK_INIT_RANGE, MASK_INIT_RANGE, size=v.shape)
            for k, v in base.params.items()}


def init_mask_finetune(previous: dict) -> dict:
    """Deep, independently trainable copy of a previous concept's mask."""
    return {k: np.array(v) for k, v in previous.items()}


def extend_mask(mask: dict, old_hidden: int, base: FrozenBase) -> dict:
    """Embed a mask trained over an ``old_hidden``-sized base into the shapes
    of a larger ``base``, filling new entries with a near-one pre-activation.

    Used when fine-tuning continues across an expansion: the newly added
    weights carried a fixed mask of 1 when they were trained.
    """
    h = old_hidden
    out = {}
    for k, arr in base.params.items():
        full = np.full(arr.shape, MASK_NEAR_ONE)
        old = mask[k]
        if k.startswith("W"):
            full[:h, :] = old
        elif k.startswith("U"):
            full[:h, :h] = old
        elif k.startswith("b") and full.ndim == 1:
            full[:h] = old
        elif k == "w":
            full[:h] = old
        else:  # scalar output bias
            full = np.array(old)
        out[k] = full
    return out


def apply_mask(base: FrozenBase, mask: dict) -> dict:
    """Effective parameters: every entry is base * sigmoid(pre-activation)."""
    eff = {}
    for k, v in base.params.items():
        if mask[k].shape != v.shape:
            raise ValueError(f"mask {k} has shape {mask[k].shape}, base has {v.shape}")
        eff[k] = v * sigmoid(mask[k])
    return eff


def mask_pullback(base: FrozenBase, mask: dict, eff_grads: dict) -> dict:
    """Chain gradients on effective weights back to mask pre-activations:
    d(eff)/d(m) = base * sigmoid(m) * (1 - sigmoid(m))."""
    out = {}
    for k, g in eff_grads.items():
        s = sigmoid(mask[k])
        out[k] = g * base.params[k] * s * (1.0 - s)
    return out


# --------------------------------------------------------------------------
# Hidden-layer expansion
# --------------------------------------------------------------------------
#
# An expanded network is a GRU of hidden size h+e whose parameter tensors
# are tied together from blocks:
#
#   W_g  = [ base.W_g * sig(mask) ]      (h, in)   frozen x mask
#          [ Wg_new               ]      (e, in)   learnable
#   U_g  = [ base.U_g * sig(mask) | Ug_cross ]   (h, h) | (h, e)
#          [           Ug_new               ]   (e, h+e)  learnable
#   b_g  = [ base.b_g * sig(mask) ; bg_new ]
#   w    = [ base.w  * sig(mask)  ; w_new  ],   b = base.b * sig(mask)
#
# Ug_cross and w_new start at zero so the expanded network's output at
# initialization equals the masked base exactly.  The forward pass below is
# written block-wise (never materializing the big matrices) so that, with
# zero cross blocks, the old-unit computation runs through the very same
# matrix products as the un-expanded network and the equality is bit-exact.

def _new_block_keys(gates=GATES):
    keys = []
    for g in gates:
        keys += [f"W{g}_new", f"U{g}_new", f"U{g}_cross", f"b{g}_new"]
    keys.append("w_new")
    return keys


NEW_BLOCK_KEYS = tuple(_new_block_keys())


@dataclass
class ExpandedParams:
    """Frozen base + mask over it + learnable blocks for ``exp_size`` new
    hidden units."""

    base: FrozenBase
    mask: dict
    new: dict
    exp_size: int

    @property
    def hidden_dim(self) -> int:
        return self.base.hidden_dim + self.exp_size


def build_expanded(base: FrozenBase, exp_size: int,
                   rng: np.random.Generator) -> ExpandedParams:
    """New-unit rows Glorot-initialized; cross blocks and the output-head
    extension zero so new units are unobservable at initialization."""
    if exp_size < 1:
        raise ValueError("exp_size must be >= 1")
    h, d, e = base.hidden_dim, base.input_dim, exp_size
    mask = init_mask_random(base, rng)
    new = {}
    for g in GATES:
        new[f"W{g}_new"] = nn.glorot_uniform(d, e, (e, d), rng)
        new[f"U{g}_new"] = nn.glorot_uniform(h + e, e, (e, h + e), rng)
        new[f"U{g}_cross"] = np.zeros((h, e))
        new[f"b{g}_new"] = np.zeros(e)
    new["w_new"] = np.zeros(e)
    return ExpandedParams(base=base, mask=mask, new=new, exp_size=e)


@dataclass
class ExpandedCache:
    steps: list
    h_final: np.ndarray
    logit: np.ndarray
    eff: dict  # masked-base effective params used by this pass


def expanded_forward(seq, ep: ExpandedParams):
    """Forward pass of the expanded GRU.

    ``seq`` is (W, input) or (n, W, input).  Old-unit pre-activations are
    computed with the same-shaped products as the masked base plus a separate
    cross term, preserving bit-exact equality when the cross blocks are zero.
    """
    seq = np.asarray(seq, dtype=float)
    squeezed = seq.ndim == 2
    if squeezed:
        seq = seq[None, ...]
    n, steps, _ = seq.shape
    if steps < 1:
        raise ValueError("empty sequence")
    h, e = ep.base.hidden_dim, ep.exp_size
    eff = apply_mask(ep.base, ep.mask)
    new = ep.new
    H = np.zeros((n, h + e))
    caches = []
    for t in range(steps):
        x = seq[:, t, :]
        # contiguous copies so the old-block products run through the same
        # matmul path as the un-expanded network
        Ho = np.ascontiguousarray(H[:, :h])
        Hn = np.ascontiguousarray(H[:, h:])

        def gate_pre(g):
            old = x @ eff[f"W{g}"].T + Ho @ eff[f"U{g}"].T
            old = old + Hn @ new[f"U{g}_cross"].T
            old = old + eff[f"b{g}"]
            fresh = x @ new[f"W{g}_new"].T + H @ new[f"U{g}_new"].T + new[f"b{g}_new"]
            return np.concatenate([old, fresh], axis=1)

        z = sigmoid(gate_pre("z"))
        r = sigmoid(gate_pre("r"))
        rh = r * H
        RHo = np.ascontiguousarray(rh[:, :h])
        RHn = np.ascontiguousarray(rh[:, h:])
        c_old = x @ eff["Wh"].T + RHo @ eff["Uh"].T
        c_old = c_old + RHn @ new["Uh_cross"].T
        c_old = c_old + eff["bh"]
        c_new = x @ new["Wh_new"].T + rh @ new["Uh_new"].T + new["bh_new"]
        c = np.tanh(np.concatenate([c_old, c_new], axis=1))
        Hn_state = (1.0 - z) * H + z * c
        caches.append(nn.StepCache(x=x, h_prev=H, z=z, r=r, rh=rh, c=c, h_new=Hn_state))
        H = Hn_state
    logit = (np.ascontiguousarray(H[:, :h]) @ eff["w"]
             + np.ascontiguousarray(H[:, h:]) @ new["w_new"]) + eff["b"]
    cache = ExpandedCache(steps=caches, h_final=H, logit=logit, eff=eff)
    return (float(logit[0]) if squeezed else logit), cache


def expanded_backward(cache: ExpandedCache, target, ep: ExpandedParams) -> dict:
    """Gradients of the mean BCE loss w.r.t. the trainable variables of an
    expanded network: mask pre-activations (keyed like the base parameters)
    and the new blocks (keyed per ``NEW_BLOCK_KEYS``)."""
    h, e = ep.base.hidden_dim, ep.exp_size
    eff, new = cache.eff, ep.new
    target = np.atleast_1d(np.asarray(target, dtype=float))
    n = cache.logit.shape[0]

    eff_grads = {k: np.zeros_like(v) for k, v in eff.items()}
    new_grads = {k: np.zeros_like(v) for k, v in new.items()}

    dlogit = (sigmoid(cache.logit) - target) / n
    Hf = cache.h_final
    eff_grads["w"] = Hf[:, :h].T @ dlogit
    new_grads["w_new"] = Hf[:, h:].T @ dlogit
    eff_grads["b"] = np.asarray(dlogit.sum())
    dH = dlogit[:, None] * np.concatenate([eff["w"], new["w_new"]])[None, :]

    for step in reversed(cache.steps):
        Hp = step.h_prev
        dz = dH * (step.c - Hp)
        dc = dH * step.z
        dHp = dH * (1.0 - step.z)

        dsc = dc * (1.0 - step.c * step.c)
        so, sn = dsc[:, :h], dsc[:, h:]
        eff_grads["Wh"] += so.T @ step.x
        eff_grads["Uh"] += so.T @ step.rh[:, :h]
        new_grads["Uh_cross"] += so.T @ step.rh[:, h:]
        eff_grads["bh"] += so.sum(axis=0)
        new_grads["Wh_new"] += sn.T @ step.x
        new_grads["Uh_new"] += sn.T @ step.rh
        new_grads["bh_new"] += sn.sum(axis=0)
        drh = np.empty_like(dH)
        drh[:, :h] = so @ eff["Uh"] + sn @ new["Uh_new"][:, :h]
        drh[:, h:] = so @ new["Uh_cross"] + sn @ new["Uh_new"][:, h:]
        dHp += drh * step.r
        dr = drh * Hp

        for g, dgate in (("r", dr), ("z", dz)):
            ds = dgate * step.r * (1.0 - step.r) if g == "r" else dgate * step.z * (1.0 - step.z)
            so, sn = ds[:, :h], ds[:, h:]
            eff_grads[f"W{g}"] += so.T @ step.x
            eff_grads[f"U{g}"] += so.T @ Hp[:, :h]
            new_grads[f"U{g}_cross"] += so.T @ Hp[:, h:]
            eff_grads[f"b{g}"] += so.sum(axis=0)
            new_grads[f"W{g}_new"] += sn.T @ step.x
            new_grads[f"U{g}_new"] += sn.T @ Hp
            new_grads[f"b{g}_new"] += sn.sum(axis=0)
            dHp[:, :h] += so @ eff[f"U{g}"] + sn @ new[f"U{g}_new"][:, :h]
            dHp[:, h:] += so @ new[f"U{g}_cross"] + sn @ new[f"U{g}_new"][:, h:]

        dH = dHp

    grads = mask_pullback(ep.base, ep.mask, eff_grads)
    grads.update(new_grads)
    return grads


def expanded_effective(ep: ExpandedParams) -> dict:
    """Materialize the full-size parameter tensors of an expanded network."""
    h, e = ep.base.hidden_dim, ep.exp_size
    eff = apply_mask(ep.base, ep.mask)
    out = {}
    for g in GATES:
        out[f"W{g}"] = np.vstack([eff[f"W{g}"], ep.new[f"W{g}_new"]])
        top = np.hstack([eff[f"U{g}"], ep.new[f"U{g}_cross"]])
        out[f"U{g}"] = np.vstack([top, ep.new[f"U{g}_new"]])
        out[f"b{g}"] = np.concatenate([eff[f"b{g}"], ep.new[f"b{g}_new"]])
    out["w"] = np.concatenate([eff["w"], ep.new["w_new"]])
    out["b"] = np.array(eff["b"])
    return out


# --------------------------------------------------------------------------
# Mask store and composition
# --------------------------------------------------------------------------

@dataclass
class ConceptRecord:
    """One completed concept: the composed network snapshot, the raw mask
    pre-activations that produced it (None for the initial fully-plastic
    concept), and which option won."""

    concept_index: int
    option: str
    params: dict
    hidden_dim: int
    mask: dict | None = None


@dataclass
class MaskStore:
    records: list = field(default_factory=list)

    def append(self, record: ConceptRecord) -> None:
        self.records.append(record)

    def last_mask(self):
        """Raw pre-activations of the most recent record, with the hidden
        size they were trained at.  None if the last concept had no mask."""
        if not self.records:
            return None
        rec = self.records[-1]
        if rec.mask is None:
            return None
        # mask shapes correspond to the base the option trained over
        trained_hidden = rec.mask["Uz"].shape[0]
        return rec.mask, trained_hidden

    def __len__(self) -> int:
        return len(self.records)


def compose_winner(base: FrozenBase, option_kind: str, state,
                   store: MaskStore, concept_index: int) -> FrozenBase:
    """Bake the winning option's effective weights into a new frozen base
    and append the concept record.

    ``state`` is the mask dict for the mask options, or an ExpandedParams
    for the expand option.  Composing keeps each concept's network
    self-contained: a single sigmoid per concept, no stacked masks.
    """
    if option_kind in ("mask_random", "mask_finetune"):
        effective = apply_mask(base, state)
        mask_copy = init_mask_finetune(state)
    elif option_kind == "expand":
        effective = expanded_effective(state)
        mask_copy = init_mask_finetune(state.mask)
    else:
        raise ValueError(f"unknown option kind: {option_kind}")
    new_base = FrozenBase.from_params(effective)
    store.append(ConceptRecord(concept_index=concept_index, option=option_kind,
                               params=new_base.params, hidden_dim=new_base.hidden_dim,
                               mask=mask_copy))
    return new_base
