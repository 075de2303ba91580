"""Category-specific representations and per-category classifier heads.

Two ways to turn a feature map (L locations x D dims) into one vector per
category:

* ``attention``: semantic decoupling. Each category embedding scores every
  location through a small tanh layer; the softmax of those scores pools the
  locations.
* ``projection``: mean-pool the locations and scale by a learned per-category
  sigmoid gate. Much cheaper, useful for fast tests.

Gradients are written out by hand in :func:`backward`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, NamedTuple

import numpy as np

from .numerics import ParamSet, sigmoid, softmax

SCORE_EPS = 1e-7
MODES = ("attention", "projection")

# parameters that receive weight decay
DECAYED = ("att_feat", "att_embed", "att_vec", "gate", "cls_weight")


@dataclass
class ModelConfig:
    num_categories: int
    feature_dim: int
    embed_dim: int = 32
    hidden_dim: int = 64
    mode: str = "attention"
    attention_gain: float = 1.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("num_categories", "feature_dim", "embed_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def init_params(config: ModelConfig, seed) -> ParamSet:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit-norm Gaussian embeddings."""
    config.validate()
    rng = np.random.default_rng(seed)
    C, D, E, H = config.num_categories, config.feature_dim, config.embed_dim, config.hidden_dim

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    emb = rng.standard_normal((C, E))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    params = ParamSet()
    params.add("embeddings", emb)
    if config.mode == "attention":
        # the score is a product of two projections; a gain keeps it out of the flat region at init
        k = config.attention_gain
        params.add("att_feat", k * uniform((D, H), D))
        params.add("att_embed", k * uniform((E, H), E))
        params.add("att_vec", uniform((H,), H))
    else:
        params.add("gate", uniform((E, D), E))
    params.add("cls_weight", uniform((C, D), D))
    params.add("cls_bias", np.zeros(C))
    return params


def param_mode(params: ParamSet) -> str:
    return "attention" if "att_feat" in params else "projection"


class Forward(NamedTuple):
    reprs: np.ndarray  # B x C x D
    scores: np.ndarray  # B x C, clamped sigmoid
    logits: np.ndarray  # B x C
    cache: dict


def semantic_decoupling(features: np.ndarray, params: ParamSet, return_cache: bool = False):
    """Attention-pool each sample's locations once per category.

    e_l = w . tanh((W1^T x_l) * (W2^T u_c)), a = softmax_l(e), f_c = sum_l a_l x_l
    """
    x = np.asarray(features, dtype=np.float64)
    loc = x @ params["att_feat"]  # B x L x H
    cat = params["embeddings"] @ params["att_embed"]  # C x H
    t = np.tanh(loc[:, None, :, :] * cat[None, :, None, :])  # B x C x L x H
    e = t @ params["att_vec"]  # B x C x L
    a = softmax(e, axis=-1)
    f = np.einsum("bcl,bld->bcd", a, x)
    if return_cache:
        return f, {"x": x, "t": t, "a": a}
    return f


def attention_weights(features: np.ndarray, params: ParamSet) -> np.ndarray:
    return semantic_decoupling(features, params, return_cache=True)[1]["a"]


def project(features: np.ndarray, params: ParamSet, return_cache: bool = False):
    """Mean-pooled features scaled elementwise by sigmoid(V^T u_c)."""
    x = np.asarray(features, dtype=np.float64)
    m = x.mean(axis=1)  # B x D
    g = sigmoid(params["embeddings"] @ params["gate"])  # C x D
    f = m[:, None, :] * g[None, :, :]
    if return_cache:
        return f, {"x": x, "m": m, "g": g}
    return f


def predict_scores(reprs: np.ndarray, params: ParamSet, return_logits: bool = False):
    """p_c = sigmoid(w_c . f_c + b_c), clamped to [eps, 1 - eps]."""
    logits = np.einsum("bcd,cd->bc", reprs, params["cls_weight"]) + params["cls_bias"]
    p = np.clip(sigmoid(logits), SCORE_EPS, 1.0 - SCORE_EPS)
    if return_logits:
        return p, logits
    return p


def forward(params: ParamSet, features: np.ndarray) -> Forward:
    if param_mode(params) == "attention":
        reprs, cache = semantic_decoupling(features, params, return_cache=True)
    else:
        reprs, cache = project(features, params, return_cache=True)
    scores, logits = predict_scores(reprs, params, return_logits=True)
    return Forward(reprs, scores, logits, cache)


def backward(params: ParamSet, fwd: Forward, d_reprs: np.ndarray, d_scores: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of a scalar objective given its partials w.r.t. reprs and scores.

    ``d_reprs`` holds only the direct dependence of the objective on the
    representations; the path through the classifier is added here.
    """
    f = fwd.reprs
    sig = sigmoid(fwd.logits)
    unclamped = (sig > SCORE_EPS) & (sig < 1.0 - SCORE_EPS)
    d_logits = d_scores * sig * (1.0 - sig) * unclamped
    grads = {
        "cls_weight": np.einsum("bc,bcd->cd", d_logits, f),
        "cls_bias": d_logits.sum(axis=0),
    }
    df = d_reprs + d_logits[:, :, None] * params["cls_weight"][None, :, :]
    U = params["embeddings"]
    if "att_feat" in params:
        x, t, a = fwd.cache["x"], fwd.cache["t"], fwd.cache["a"]
        da = np.einsum("bcd,bld->bcl", df, x)
        de = a * (da - np.sum(a * da, axis=-1, keepdims=True))
        grads["att_vec"] = np.einsum("bcl,bclh->h", de, t)
        dz = de[..., None] * params["att_vec"] * (1.0 - t * t)  # B x C x L x H
        loc = x @ params["att_feat"]
        cat = U @ params["att_embed"]
        d_loc = np.einsum("bclh,ch->blh", dz, cat)
        grads["att_feat"] = np.einsum("bld,blh->dh", x, d_loc)
        d_cat = np.einsum("bclh,blh->ch", dz, loc)
        grads["att_embed"] = U.T @ d_cat
        grads["embeddings"] = d_cat @ params["att_embed"].T
    else:
        m, g = fwd.cache["m"], fwd.cache["g"]
        dg = np.einsum("bcd,bd->cd", df, m)
        dlin = dg * g * (1.0 - g)
        grads["gate"] = U.T @ dlin
        grads["embeddings"] = dlin @ params["gate"].T
    return {name: grads[name] for name in params}
