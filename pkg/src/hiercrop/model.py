"""Crop-type classifiers over crop history (CR), remote sensing (RS) and crop distribution (CD).

Eight variants share the same building blocks:

* ``IntraYE_*`` read the target season only: a bidirectional LSTM with
  self-attention pools the 24 RS windows; the MM flavour appends a
  bag-of-crops count of past seasons.
* ``InterYE_*`` run a unidirectional stacked LSTM over seasons, fed with crop
  embeddings and/or a projection of the flat 672-dim RS vector.
* ``HierE_*`` do the same but replace the flat RS vector by the intra-season
  pooled state.
* ``HierE_final`` adds the CD vector through two ReLU layers after the
  inter-season LSTM.

Step ``t`` of a sequence carries the crop of season ``t - 1`` (a reserved
"no history" row at the first step) and the RS of season ``t``; the last
step is the target season, so predictions never see the crop being predicted.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import kernels as K
from .features import N_FUNCTIONALS, N_WINDOWS

VARIANTS = (
    "IntraYE_RS",
    "IntraYE_MM",
    "InterYE_Crop",
    "InterYE_RS",
    "InterYE_MM",
    "HierE_RS",
    "HierE_MM",
    "HierE_final",
)
MODALITIES = {
    "IntraYE_RS": ("RS",),
    "IntraYE_MM": ("CR", "RS"),
    "InterYE_Crop": ("CR",),
    "InterYE_RS": ("RS",),
    "InterYE_MM": ("CR", "RS"),
    "HierE_RS": ("RS",),
    "HierE_MM": ("CR", "RS"),
    "HierE_final": ("CR", "RS", "CD"),
}


class UnknownVariantError(ValueError):
    pass


class MissingModalityError(ValueError):
    pass


def check_variant(variant):
    if variant not in MODALITIES:
        raise UnknownVariantError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return variant


@dataclass
class ModelSpec:
    variant: str
    vocab_size: int
    n_classes: int = 0
    embed_dim: int = 64
    rnn_dim: int = 256
    rs_proj_dim: int = 128
    stacked_lstm: int = 3
    att_dim: int = 0
    n_rs_variables: int = 4

    def __post_init__(self):
        check_variant(self.variant)
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        self.n_classes = self.n_classes or self.vocab_size
        self.att_dim = self.att_dim or self.rnn_dim

    @property
    def modalities(self):
        return MODALITIES[self.variant]

    @property
    def window_dim(self):
        return self.n_rs_variables * N_FUNCTIONALS

    @property
    def flat_dim(self):
        return self.n_rs_variables * N_WINDOWS * N_FUNCTIONALS

    @property
    def none_index(self):
        """Embedding row used at the first step, where there is no previous crop."""
        return self.vocab_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Batch:
    """One batch of aligned sequences of length T (the target season is the last step).

    crops_prev  (B, T) int, crop index of the previous season, ``none_index`` at step 0
    rs          (B, T, W, F) float, normalised RS windows (W <= 24; zeros where missing)
    boc         (B, V) bag-of-crops counts of the seasons before the target
    cd          (B, V) crop-distribution shares
    target      (B,) int class index
    """

    crops_prev: Optional[np.ndarray] = None
    rs: Optional[np.ndarray] = None
    boc: Optional[np.ndarray] = None
    cd: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None

    def __len__(self):
        for x in (self.target, self.crops_prev, self.rs, self.cd):
            if x is not None:
                return len(x)
        return 0


def bag_of_crops(crops, vocab_size):
    """Count vector per row of ``crops`` (B, T); negative entries are ignored."""
    crops = np.asarray(crops)
    out = np.zeros((crops.shape[0], vocab_size))
    rows, cols = np.nonzero(crops >= 0)
    np.add.at(out, (rows, crops[rows, cols]), 1.0)
    return out


def flatten_windows(rs, n_variables):
    """(B, T, W, F) windows -> (B, T, 672) flat vectors, windows past W set to zero."""
    B, T, W, F = rs.shape
    full = np.zeros((B, T, N_WINDOWS, F))
    full[:, :, :W] = rs
    cube = full.reshape(B, T, N_WINDOWS, n_variables, N_FUNCTIONALS).transpose(0, 1, 3, 2, 4)
    return cube.reshape(B, T, -1)


def unflatten_grad(dflat, W, n_variables):
    B, T, _ = dflat.shape
    cube = dflat.reshape(B, T, n_variables, N_WINDOWS, N_FUNCTIONALS).transpose(0, 1, 3, 2, 4)
    return cube.reshape(B, T, N_WINDOWS, -1)[:, :, :W]


class HierCropModel:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        v = spec.variant
        mods = spec.modalities
        self.intra_year = v.startswith("IntraYE")
        self.hier = v.startswith("HierE")
        self.intra = None
        if "RS" in mods and (self.intra_year or self.hier):
            self.intra = K.BiLSTMAttention("intra", spec.window_dim, spec.rnn_dim, spec.att_dim)
        if self.intra_year:
            head_in = self.intra.out_dim + (spec.vocab_size if "CR" in mods else 0)
        else:
            in_dim = 0
            self.embed = self.f_rs = None
            if "CR" in mods:
                self.embed = K.Embedding("embed", spec.vocab_size + 1, spec.embed_dim)
                in_dim += spec.embed_dim
            if "RS" in mods:
                rs_in = self.intra.out_dim if self.hier else spec.flat_dim
                self.f_rs = K.Linear("f_rs", rs_in, spec.rs_proj_dim)
                in_dim += spec.rs_proj_dim
            self.inter = K.StackedLSTM("inter", in_dim, spec.rnn_dim, spec.stacked_lstm)
            self.fc1 = self.fc2 = None
            if "CD" in mods:
                self.fc1 = K.Linear("fc1", spec.rnn_dim + spec.vocab_size, spec.rnn_dim)
                self.fc2 = K.Linear("fc2", spec.rnn_dim, spec.rnn_dim)
            head_in = spec.rnn_dim
        self.head = K.Linear("f_c", head_in, spec.n_classes)

    def modules(self):
        out = [self.intra]
        if not self.intra_year:
            out += [self.embed, self.f_rs, self.inter, self.fc1, self.fc2]
        out.append(self.head)
        return [m for m in out if m is not None]

    def init_params(self, rng):
        params = {}
        for m in self.modules():
            m.init(rng, params)
        return params

    def check_batch(self, batch):
        need = {"CR": batch.crops_prev, "RS": batch.rs, "CD": batch.cd}
        for mod in self.spec.modalities:
            if need[mod] is None:
                raise MissingModalityError(f"variant {self.spec.variant} requires modality {mod}")
        if self.intra_year and "CR" in self.spec.modalities and batch.boc is None:
            raise MissingModalityError(f"variant {self.spec.variant} requires modality CR (bag of crops)")
        if batch.rs is not None and "RS" in self.spec.modalities:
            if batch.rs.ndim != 4 or batch.rs.shape[-1] != self.spec.window_dim:
                raise K.ShapeError(f"RS input must be (B, T, W, {self.spec.window_dim}), got {batch.rs.shape}")

    # forward / backward ----------------------------------------------------------------

    def forward(self, params, batch):
        """Returns (logits (B, n_classes), cache)."""
        self.check_batch(batch)
        cache = {}
        if self.intra_year:
            pooled, u, ci = self.intra.forward(params, np.asarray(batch.rs[:, -1], dtype=np.float64))
            cache["intra"] = ci
            cache["att"] = u
            h = pooled
            if "CR" in self.spec.modalities:
                h = K.concat([pooled, batch.boc])
        else:
            parts = []
            if self.embed is not None:
                emb, cache["embed"] = self.embed.forward(params, batch.crops_prev)
                parts.append(emb)
            if self.f_rs is not None:
                rs = np.asarray(batch.rs, dtype=np.float64)
                B, T, W, F = rs.shape
                if self.hier:
                    pooled, u, ci = self.intra.forward(params, rs.reshape(B * T, W, F))
                    cache["intra"], cache["att"] = ci, u.reshape(B, T, W)
                    rs_vec = pooled.reshape(B, T, -1)
                else:
                    rs_vec = flatten_windows(rs, self.spec.n_rs_variables)
                cache["rs_shape"] = (B, T, W, F)
                a, cache["f_rs"] = self.f_rs.forward(params, rs_vec)
                cache["f_rs_a"] = a
                parts.append(K.relu(a))
            x = K.concat(parts) if len(parts) > 1 else parts[0]
            hs, cache["inter"] = self.inter.forward(params, x)
            h = hs[:, -1]
            cache["hs_shape"] = hs.shape
            if self.fc1 is not None:
                z1, cache["fc1"] = self.fc1.forward(params, K.concat([h, batch.cd]))
                r1 = K.relu(z1)
                z2, cache["fc2"] = self.fc2.forward(params, r1)
                cache["z1"], cache["z2"] = z1, z2
                h = K.relu(z2)
        logits, cache["head"] = self.head.forward(params, h)
        return logits, cache

    def backward(self, params, dlogits, cache):
        grads = K.zeros_like(params)
        dh = self.head.backward(params, dlogits, cache["head"], grads)
        if self.intra_year:
            dpooled = dh[:, : self.intra.out_dim]
            self.intra.backward(params, dpooled, cache["intra"], grads)
            return grads
        if self.fc1 is not None:
            dz2 = dh * (cache["z2"] > 0)
            dr1 = self.fc2.backward(params, dz2, cache["fc2"], grads)
            dz1 = dr1 * (cache["z1"] > 0)
            dh = self.fc1.backward(params, dz1, cache["fc1"], grads)[:, : self.spec.rnn_dim]
        dhs = np.zeros(cache["hs_shape"])
        dhs[:, -1] = dh
        dx = self.inter.backward(params, dhs, cache["inter"], grads)
        off = 0
        if self.embed is not None:
            E = self.spec.embed_dim
            self.embed.backward(params, dx[..., :E], cache["embed"], grads)
            off = E
        if self.f_rs is not None:
            da = dx[..., off:] * (cache["f_rs_a"] > 0)
            drs = self.f_rs.backward(params, da, cache["f_rs"], grads)
            if self.hier:
                B, T, W, F = cache["rs_shape"]
                self.intra.backward(params, drs.reshape(B * T, -1), cache["intra"], grads)
        return grads

    def loss_and_grads(self, params, batch):
        logits, cache = self.forward(params, batch)
        loss, dlogits = K.cross_entropy(logits, batch.target)
        return loss, self.backward(params, dlogits, cache), logits

    def predict_logits(self, params, batch):
        return self.forward(params, batch)[0]

    def predict(self, params, batch):
        return np.argmax(self.predict_logits(params, batch), axis=1)

    def attention_weights(self, params, batch):
        """Intra-season attention weights of the last step, (B, W); None for variants without it."""
        if self.intra is None:
            return None
        _, cache = self.forward(params, batch)
        att = cache["att"]
        return att if att.ndim == 2 else att[:, -1]


def n_parameters(params):
    return int(sum(p.size for p in params.values()))
