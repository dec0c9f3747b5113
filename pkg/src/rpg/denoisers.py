"""Desk-scale denoisers with checkable behavior.

Two denoisers implement the prediction contract:

* GmmDenoiser: cells are i.i.d. draws from a per-conditioning Gaussian
  mixture, so the optimal clean-grid prediction has a closed form. The
  mixture component is shared across a cell's channels; means and
  variances are per-channel (diagonal).
* AttnDenoiser: a miniature cross-attention network (queries from the
  grid, keys/values from prompt tokens, softmax weighting, output head,
  residual) with analytic parameter gradients, meant for gradient
  checking rather than output quality.

A GmmWorld also serves as ground truth for captioning: regions are
labeled with the conditioning whose mixture mean sits closest to the
region's empirical mean.

World file format, line-oriented, '#' comments::

    cond-id | w,mu,var ; w,mu,var ; ...

One line per conditioning; components separated by ';'. mu and var are
single decimals (same value every channel) or ':'-joined per-channel
lists, e.g. ``A | 0.5,2.0:-1.0,0.25 ; 0.5,-2.0:1.0,0.25``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import CondEmbedding
from .latents import LatentGrid
from .layout import RegionRect
from .schedule import NoiseSchedule

WEIGHT_SUM_TOL = 1e-9


class GmmWorldError(ValueError):
    pass


class UnknownCondError(KeyError):
    def __init__(self, cond_id: str):
        self.cond_id = cond_id
        super().__init__(f"conditioning {cond_id!r} is not defined in this world")


@dataclass(frozen=True)
class GmmCond:
    """One conditioning's mixture: arrays shaped (K,) / (K, C) / (K, C)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise GmmWorldError("weights must be a non-empty 1-d array")
        if mu.shape != (w.size,) + mu.shape[1:] or mu.ndim != 2:
            raise GmmWorldError(f"means must be (K, C), got {mu.shape}")
        if var.shape != mu.shape:
            raise GmmWorldError(f"variances {var.shape} must match means {mu.shape}")
        if (w <= 0).any():
            raise GmmWorldError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise GmmWorldError(f"weights sum to {w.sum()!r}, expected 1")
        if (var <= 0).any():
            raise GmmWorldError("variances must be positive")
        for arr in (w, mu, var):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def components(self) -> int:
        return self.weights.size

    @property
    def channels(self) -> int:
        return self.means.shape[1]

    @property
    def mixture_mean(self) -> np.ndarray:
        return self.weights @ self.means


@dataclass(frozen=True)
class GmmWorld:
    conds: dict[str, GmmCond]

    def __post_init__(self):
        if not self.conds:
            raise GmmWorldError("world defines no conditionings")
        widths = {c.channels for c in self.conds.values()}
        if len(widths) != 1:
            raise GmmWorldError(f"conditionings disagree on channel count: {sorted(widths)}")

    @property
    def channels(self) -> int:
        return next(iter(self.conds.values())).channels

    def cond(self, cond_id: str) -> GmmCond:
        try:
            return self.conds[cond_id]
        except KeyError:
            raise UnknownCondError(cond_id) from None

    def sample_x0(self, cond_id: str, height: int, width: int, rng: np.random.Generator) -> LatentGrid:
        """Draw a clean grid: each cell independently from the mixture."""
        mix = self.cond(cond_id)
        comp = rng.choice(mix.components, size=(height, width), p=mix.weights)
        mu = mix.means[comp]
        sigma = np.sqrt(mix.variances[comp])
        cells = mu + sigma * rng.standard_normal((height, width, mix.channels))
        return LatentGrid(cells.astype(np.float32))


def _parse_values(token: str, what: str, line_no: int) -> list[float]:
    out = []
    for piece in token.split(":"):
        try:
            out.append(float(piece.strip()))
        except ValueError:
            raise GmmWorldError(f"line {line_no}: bad {what} value {piece.strip()!r}") from None
    return out


def parse_gmm_world(text: str) -> GmmWorld:
    # Pass 1: split lines into raw component tuples so the channel
    # count can be inferred from the whole file, not the first line.
    raw_conds: list[tuple[int, str, list[float], list[list[float]], list[list[float]]]] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "|" not in line:
            raise GmmWorldError(f"line {line_no}: expected 'cond-id | components'")
        cond_id, _, body = line.partition("|")
        cond_id = cond_id.strip()
        if not cond_id:
            raise GmmWorldError(f"line {line_no}: empty conditioning id")
        if cond_id in seen:
            raise GmmWorldError(f"line {line_no}: duplicate conditioning {cond_id!r}")
        seen.add(cond_id)
        weights, means, variances = [], [], []
        for comp_text in body.split(";"):
            fields = comp_text.split(",")
            if len(fields) != 3:
                raise GmmWorldError(
                    f"line {line_no}: component {comp_text.strip()!r} is not 'w,mu,var'"
                )
            w = _parse_values(fields[0], "weight", line_no)
            if len(w) != 1:
                raise GmmWorldError(f"line {line_no}: weight must be a single number")
            weights.append(w[0])
            means.append(_parse_values(fields[1], "mean", line_no))
            variances.append(_parse_values(fields[2], "variance", line_no))
        raw_conds.append((line_no, cond_id, weights, means, variances))
    if not raw_conds:
        raise GmmWorldError("world defines no conditionings")

    channels = 1
    for _, _, _, means, variances in raw_conds:
        for row in means + variances:
            channels = max(channels, len(row))

    def _widen(rows, line_no):
        out = []
        for row in rows:
            if len(row) == 1:
                out.append(row * channels)
            elif len(row) == channels:
                out.append(row)
            else:
                raise GmmWorldError(
                    f"line {line_no}: expected 1 or {channels} values, got {len(row)}"
                )
        return out

    conds: dict[str, GmmCond] = {}
    for line_no, cond_id, weights, means, variances in raw_conds:
        try:
            conds[cond_id] = GmmCond(
                weights=np.array(weights),
                means=np.array(_widen(means, line_no)),
                variances=np.array(_widen(variances, line_no)),
            )
        except GmmWorldError as exc:
            msg = str(exc)
            if not msg.startswith(f"line {line_no}:"):
                msg = f"line {line_no}: {msg}"
            raise GmmWorldError(msg) from None
    return GmmWorld(conds=conds)


def serialize_gmm_world(world: GmmWorld) -> str:
    def fmt(values: np.ndarray) -> str:
        return ":".join(repr(float(v)) for v in values)

    lines = []
    for cond_id in sorted(world.conds):
        mix = world.conds[cond_id]
        comps = " ; ".join(
            f"{float(w)!r},{fmt(mu)},{fmt(var)}"
            for w, mu, var in zip(mix.weights, mix.means, mix.variances)
        )
        lines.append(f"{cond_id} | {comps}")
    return "\n".join(lines) + "\n"


def load_gmm_world(path) -> GmmWorld:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_gmm_world(fh.read())


def save_gmm_world(world: GmmWorld, path) -> None:
    from .ioutil import atomic_write_text

    atomic_write_text(path, serialize_gmm_world(world))


class GmmDenoiser:
    """Optimal clean-grid prediction under a GmmWorld prior.

    Observing z = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, each component's
    marginal for a cell is Gaussian, giving softmax responsibilities;
    the prediction is the responsibility-weighted mix of per-component
    posterior means. Everything is per cell, vectorized over the grid.
    """

    def __init__(self, world: GmmWorld, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule
        self._tables: dict[tuple[str, int], tuple[np.ndarray, ...]] = {}

    def _table(self, cond_id: str, t: int):
        key = (cond_id, t)
        cached = self._tables.get(key)
        if cached is not None:
            return cached
        mix = self.world.cond(cond_id)
        ab = self.schedule.alpha_bar[t]
        a = math.sqrt(ab)
        v = 1.0 - ab
        marg_var = ab * mix.variances + v  # (K, C)
        scaled_mean = a * mix.means
        log_norm = np.log(mix.weights) - 0.5 * np.log(2.0 * math.pi * marg_var).sum(axis=1)
        gain = a * mix.variances / marg_var
        inv_var = 1.0 / marg_var
        table = (scaled_mean, inv_var, log_norm, gain, mix.means)
        self._tables[key] = table
        return table

    def predict_x0_array(self, z: np.ndarray, t: int, cond: CondEmbedding) -> np.ndarray:
        scaled_mean, inv_var, log_norm, gain, means = self._table(cond.id, t)
        delta = z[None, :, :, :] - scaled_mean[:, None, None, :]
        log_resp = log_norm[:, None, None] - 0.5 * (delta * delta * inv_var[:, None, None, :]).sum(-1)
        log_resp -= log_resp.max(axis=0)
        resp = np.exp(log_resp)
        resp /= resp.sum(axis=0)
        post_mean = means[:, None, None, :] + gain[:, None, None, :] * delta
        out = (resp[:, :, :, None] * post_mean).sum(axis=0)
        return out.astype(np.float32)

    def predict_x0(self, z_t: LatentGrid, t: int, cond: CondEmbedding) -> LatentGrid:
        return LatentGrid(self.predict_x0_array(z_t.data, t, cond))


def gmm_posterior_x0(
    z_t: LatentGrid,
    t: int,
    cond: CondEmbedding,
    world: GmmWorld,
    schedule: NoiseSchedule,
) -> LatentGrid:
    """One-shot form of GmmDenoiser.predict_x0."""
    return GmmDenoiser(world, schedule).predict_x0(z_t, t, cond)


def oracle_caption(latent: LatentGrid, regions: list[RegionRect], world: GmmWorld) -> list[str]:
    """Label each region with the nearest conditioning id.

    Nearest = smallest squared distance between the region's per-channel
    cell mean and the conditioning's mixture mean; ties go to the
    lexicographically smaller id. Returns one id per region, in order
    (repeats allowed, unlike an entity list).
    """
    ids = sorted(world.conds)
    mixture_means = np.stack([world.conds[i].mixture_mean for i in ids])
    labels = []
    for rect in regions:
        window = latent.data[rect.y0 : rect.y1, rect.x0 : rect.x1, :]
        mean = window.reshape(-1, latent.channels).mean(axis=0)
        dist = ((mixture_means - mean[None, :]) ** 2).sum(axis=1)
        labels.append(ids[int(np.argmin(dist))])
    return labels


@dataclass(frozen=True)
class AttnParams:
    """Weights of the miniature cross-attention denoiser."""

    lift: np.ndarray         # (C, d) grid cells -> features
    w_q: np.ndarray          # (d, d)
    w_k: np.ndarray          # (d, d)
    w_v: np.ndarray          # (d, d)
    prompt_proj: np.ndarray  # (m, d, d) cond vector -> m prompt tokens
    head: np.ndarray         # (d, C) attention output -> cell update

    def __post_init__(self):
        for name in ("lift", "w_q", "w_k", "w_v", "prompt_proj", "head"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def channels(self) -> int:
        return self.lift.shape[0]

    @property
    def prompt_tokens(self) -> int:
        return self.prompt_proj.shape[0]

    def replace(self, name: str, value: np.ndarray) -> "AttnParams":
        fields = {n: getattr(self, n) for n in ("lift", "w_q", "w_k", "w_v", "prompt_proj", "head")}
        fields[name] = value
        return AttnParams(**fields)


def init_attn_params(
    seed: int, channels: int = 2, dim: int = 16, prompt_tokens: int = 4
) -> AttnParams:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(dim)
    return AttnParams(
        lift=rng.standard_normal((channels, dim)) * scale,
        w_q=rng.standard_normal((dim, dim)) * scale,
        w_k=rng.standard_normal((dim, dim)) * scale,
        w_v=rng.standard_normal((dim, dim)) * scale,
        prompt_proj=rng.standard_normal((prompt_tokens, dim, dim)) * scale,
        head=rng.standard_normal((dim, channels)) * scale,
    )


def _attn_forward(params: AttnParams, z: np.ndarray, cond: CondEmbedding) -> dict:
    h, w, c = z.shape
    d = params.dim
    cond_vec = np.asarray(cond.vector, dtype=np.float64)
    if cond_vec.shape != (d,):
        raise ValueError(f"cond vector has dim {cond_vec.shape}, params expect ({d},)")
    cells = z.reshape(-1, c).astype(np.float64, copy=False)
    feats = cells @ params.lift                     # (N, d)
    queries = feats @ params.w_q                    # (N, d)
    tokens = params.prompt_proj @ cond_vec          # (m, d)
    keys = tokens @ params.w_k                      # (m, d)
    values = tokens @ params.w_v                    # (m, d)
    scores = queries @ keys.T / math.sqrt(d)        # (N, m)
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    attn = expd / expd.sum(axis=1, keepdims=True)   # rows sum to 1
    mixed = attn @ values                           # (N, d)
    update = mixed @ params.head                    # (N, C)
    out = z.astype(np.float64, copy=False) + update.reshape(h, w, c)
    return {
        "cells": cells,
        "feats": feats,
        "queries": queries,
        "tokens": tokens,
        "keys": keys,
        "values": values,
        "attn": attn,
        "mixed": mixed,
        "out": out,
        "cond_vec": cond_vec,
    }


def attn_denoise(
    z_t: LatentGrid, t: int, cond: CondEmbedding, params: AttnParams
) -> LatentGrid:
    """Residual cross-attention prediction of the clean grid.

    The step index is accepted for contract parity but does not enter
    the computation.
    """
    parts = _attn_forward(params, z_t.data, cond)
    return LatentGrid(parts["out"].astype(np.float32))


def attn_attention_weights(params: AttnParams, z_t: LatentGrid, cond: CondEmbedding) -> np.ndarray:
    """Softmax attention matrix, one row per grid cell."""
    return _attn_forward(params, z_t.data, cond)["attn"]


def attn_loss_and_grads(
    params: AttnParams,
    z_t: LatentGrid,
    cond: CondEmbedding,
    target: LatentGrid,
) -> tuple[float, dict[str, np.ndarray]]:
    """Squared-error loss against target and its parameter gradients.

    loss = 0.5 * sum((prediction - target)^2). Gradients are exact
    (float64 throughout), keyed by AttnParams field name.
    """
    z = z_t.data
    parts = _attn_forward(params, z, cond)
    diff = parts["out"] - target.data.astype(np.float64)
    loss = 0.5 * float((diff * diff).sum())

    d = params.dim
    d_update = diff.reshape(-1, params.channels)             # (N, C)
    d_head = parts["mixed"].T @ d_update                     # (d, C)
    d_mixed = d_update @ params.head.T                       # (N, d)
    d_attn = d_mixed @ parts["values"].T                     # (N, m)
    d_values = parts["attn"].T @ d_mixed                     # (m, d)
    inner = (d_attn * parts["attn"]).sum(axis=1, keepdims=True)
    d_scores = parts["attn"] * (d_attn - inner)              # (N, m)
    d_queries = d_scores @ parts["keys"] / math.sqrt(d)      # (N, d)
    d_keys = d_scores.T @ parts["queries"] / math.sqrt(d)    # (m, d)
    d_tokens = d_keys @ params.w_k.T + d_values @ params.w_v.T
    d_w_k = parts["tokens"].T @ d_keys
    d_w_v = parts["tokens"].T @ d_values
    d_prompt_proj = np.einsum("mi,j->mij", d_tokens, parts["cond_vec"])
    d_feats = d_queries @ params.w_q.T
    d_w_q = parts["feats"].T @ d_queries
    d_lift = parts["cells"].T @ d_feats

    return loss, {
        "lift": d_lift,
        "w_q": d_w_q,
        "w_k": d_w_k,
        "w_v": d_w_v,
        "prompt_proj": d_prompt_proj,
        "head": d_head,
    }


class AttnDenoiser:
    """Prediction-contract wrapper around attn_denoise."""

    def __init__(self, params: AttnParams):
        self.params = params

    def predict_x0_array(self, z: np.ndarray, t: int, cond: CondEmbedding) -> np.ndarray:
        return _attn_forward(self.params, z, cond)["out"].astype(np.float32)

    def predict_x0(self, z_t: LatentGrid, t: int, cond: CondEmbedding) -> LatentGrid:
        return LatentGrid(self.predict_x0_array(z_t.data, t, cond))
