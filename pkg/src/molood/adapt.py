"""Dual-scale CORAL alignment, the composite objective and the adaptation loop.

Alignment term for one source/target feature pair (population covariances of
mean-centered features, ``d`` = feature width)::

    coral(Xs, Xt) = ||Cs - Ct||_F^2 / (4 d^2)

Composite objective::

    L_total = w_reg * L_reg + w_mol * sum_k g_k coral(Hmol_k, Hmol_t)
                            + w_sub * sum_k g_k coral(Hsub_k, Hsub_t)

with the alignment part suppressed while the model is in supervised warm-up.
Covariances are computed per minibatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bench.separation import collapse_rank
from .encoder import Adam, Batch, EncoderModel, Forward, OutputGrads, gradients, sgd_step
from .errors import BadConfig, BatchTooSmall, EmptySet
from .io import write_jsonl
from .sets import LabeledSet, UnlabeledSet

W_FEAT_BOUNDS = (0.01, 1.0)
W_REG_BOUNDS = (0.1, 1.0)


# --------------------------------------------------------------------------- CORAL

def _center_cov(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Xc = X - X.mean(axis=0)
    return Xc, Xc.T @ Xc / X.shape[0]


def coral_term(feats_source, feats_target) -> float:
    return coral_with_grad(feats_source, feats_target)[0]


def coral_with_grad(feats_source, feats_target):
    """Value and gradients w.r.t. both feature matrices."""
    Xs = np.atleast_2d(np.asarray(feats_source, dtype=np.float64))
    Xt = np.atleast_2d(np.asarray(feats_target, dtype=np.float64))
    n, m = Xs.shape[0], Xt.shape[0]
    if n < 2 or m < 2:
        raise BatchTooSmall(f"CORAL needs >= 2 rows per side, got {n} and {m}")
    d = Xs.shape[1]
    Xsc, Cs = _center_cov(Xs)
    Xtc, Ct = _center_cov(Xt)
    D = Cs - Ct
    scale = 1.0 / (4.0 * d * d)
    value = float(scale * (D * D).sum())
    G = 2.0 * scale * D
    # centering drops out: columns of Xc sum to zero
    return value, (2.0 / n) * Xsc @ G, -(2.0 / m) * Xtc @ G


# --------------------------------------------------------------------------- weights

@dataclass(frozen=True)
class AlignmentWeights:
    w_reg: float = 1.0
    w_mol: float = 1.0
    w_sub: float = 1.0
    ema_reg: float | None = None
    ema_mol: float | None = None
    ema_sub: float | None = None
    beta_m: float = 0.9
    tau_reg: float = 0.05
    decay: float = 0.95
    use_mol: bool = True  # ablations switch a scale off for the whole run
    use_sub: bool = True

    def to_json(self) -> dict:
        return {"w_reg": self.w_reg, "w_mol": self.w_mol, "w_sub": self.w_sub}


def _ema(prev: float | None, x: float, beta: float) -> float:
    return x if prev is None else beta * prev + (1.0 - beta) * x


def weight_controller_step(weights: AlignmentWeights, observed) -> AlignmentWeights:
    """EMA-smoothed rebalancing of the three loss weights.

    The first observation initializes each EMA. ``w_reg`` decays by ``decay``
    (floored at 0.1) while the regression EMA sits below ``tau_reg``; the two
    alignment weights are set inversely proportional to their term EMAs,
    scaled so the larger weight is 1, then clipped to [0.01, 1]. A scale
    switched off by ablation keeps weight 0.
    """
    reg, mol, sub = (float(v) for v in observed)
    if not all(math.isfinite(v) for v in (reg, mol, sub)):
        raise ValueError("controller observations must be finite")
    b = weights.beta_m
    e_reg = _ema(weights.ema_reg, reg, b)
    e_mol = _ema(weights.ema_mol, mol, b)
    e_sub = _ema(weights.ema_sub, sub, b)
    new = replace(weights, ema_reg=e_reg, ema_mol=e_mol, ema_sub=e_sub)
    w_reg = weights.w_reg
    if e_reg < weights.tau_reg:
        w_reg = max(W_REG_BOUNDS[0], weights.decay * w_reg)
    lo, hi = W_FEAT_BOUNDS
    on = [(e, u) for e, u in ((e_mol, weights.use_mol), (e_sub, weights.use_sub)) if u]
    pos = [e for e, _ in on if e > 0]
    c = min(pos) if pos else 1.0
    w_mol = (float(np.clip(c / e_mol, lo, hi)) if e_mol > 0 else hi) if weights.use_mol else 0.0
    w_sub = (float(np.clip(c / e_sub, lo, hi)) if e_sub > 0 else hi) if weights.use_sub else 0.0
    return replace(new, w_reg=float(np.clip(w_reg, *W_REG_BOUNDS)), w_mol=w_mol, w_sub=w_sub)


# --------------------------------------------------------------------------- objective

@dataclass
class SourceAssembly:
    groups: list[LabeledSet]
    gammas: np.ndarray
    keys: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=np.float64)
        if not self.groups:
            raise EmptySet("assembly needs at least one source group")
        if self.gammas.shape != (len(self.groups),) or np.any(self.gammas < 0):
            raise ValueError("one non-negative transfer weight per group")
        if abs(self.gammas.sum() - 1.0) > 1e-9:
            raise ValueError("transfer weights must sum to 1")

    @classmethod
    def from_scores(cls, groups, scores, keys=()) -> "SourceAssembly":
        s = np.asarray(scores, dtype=np.float64)
        g = s / s.sum() if s.sum() > 0 else np.full(len(groups), 1.0 / len(groups))
        return cls(list(groups), g, list(keys))

    @property
    def size(self) -> int:
        return sum(len(g) for g in self.groups)

    def merged(self) -> LabeledSet:
        return LabeledSet.merge(self.groups, "merged")


@dataclass
class DATerms:
    mol: float
    sub: float
    value: float
    grad_mol: list[np.ndarray]
    grad_sub: list[np.ndarray]
    grad_mol_t: np.ndarray
    grad_sub_t: np.ndarray


def da_terms(source_feats: Sequence[tuple[np.ndarray, np.ndarray]],
             target_feats: tuple[np.ndarray, np.ndarray], gammas, weights: AlignmentWeights) -> DATerms:
    """Weighted multi-source alignment loss with gradients for every feature block."""
    hm_t, hs_t = target_feats
    gm_t, gs_t = np.zeros_like(hm_t), np.zeros_like(hs_t)
    mol = sub = 0.0
    g_mol, g_sub = [], []
    for (hm, hs), gamma in zip(source_feats, gammas):
        vm, gs_, gt_ = coral_with_grad(hm, hm_t)
        mol += gamma * vm
        g_mol.append(weights.w_mol * gamma * gs_)
        gm_t += weights.w_mol * gamma * gt_
        vs, gs_, gt_ = coral_with_grad(hs, hs_t)
        sub += gamma * vs
        g_sub.append(weights.w_sub * gamma * gs_)
        gs_t += weights.w_sub * gamma * gt_
    value = weights.w_mol * mol + weights.w_sub * sub
    return DATerms(mol, sub, value, g_mol, g_sub, gm_t, gs_t)


def da_loss(assembly: SourceAssembly, target_batch: Batch, model: EncoderModel,
            weights: AlignmentWeights) -> float:
    feats = []
    for g in assembly.groups:
        f = model.forward(g.batch())
        feats.append((f.h_mol, f.h_sub))
    ft = model.forward(target_batch)
    return da_terms(feats, (ft.h_mol, ft.h_sub), assembly.gammas, weights).value


def total_loss(reg_loss: float, da_loss: float, weights: AlignmentWeights, epoch: int,
               e_warm: int = 10) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < e_warm:
        return weights.w_reg * reg_loss
    return weights.w_reg * reg_loss + da_loss


def mse_with_grad(pred: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    r = pred - y
    return float((r * r).mean()), 2.0 * r / r.size


# --------------------------------------------------------------------------- loop

@dataclass
class AdaptConfig:
    epochs: int = 5
    lr: float = 1e-3
    batch: int = 64
    e_warm: int = 10
    beta_m: float = 0.9
    tau_reg: float = 0.05
    optimizer: str = "adam"
    align_mol: bool = True
    align_sub: bool = True
    seed: int = 0
    track_rank: bool = True  # per-epoch collapse rank in the history

    def validate(self):
        if self.epochs < 0 or self.batch < 2 or self.lr < 0:
            raise BadConfig(f"invalid adaptation config {self}")
        if self.optimizer not in ("sgd", "adam"):
            raise BadConfig(f"unknown optimizer {self.optimizer!r}")


def initial_weights(cfg: AdaptConfig) -> AlignmentWeights:
    return AlignmentWeights(w_mol=1.0 if cfg.align_mol else 0.0,
                            w_sub=1.0 if cfg.align_sub else 0.0,
                            beta_m=cfg.beta_m, tau_reg=cfg.tau_reg,
                            use_mol=cfg.align_mol, use_sub=cfg.align_sub)


def embed_mol(model: EncoderModel, s, chunk: int = 512) -> np.ndarray:
    parts = []
    for a in range(0, len(s), chunk):
        parts.append(model.forward(s.batch(range(a, min(a + chunk, len(s))))).h_mol)
    return np.concatenate(parts)


def target_rank(model: EncoderModel, target) -> int:
    return collapse_rank(embed_mol(model, target))


def adapt_run(model: EncoderModel, assembly: SourceAssembly, target: UnlabeledSet | None,
              cfg: AdaptConfig, weights: AlignmentWeights | None = None):
    """Train ``model`` in place for ``cfg.epochs`` epochs of the composite loss.

    Warm-up is judged on the model's own epoch counter, so a warm checkpoint
    that already passed ``e_warm`` aligns from its first adapted epoch.
    With ``target=None`` the loop is plain supervised training.
    Returns ``(model, history)``, one history record per epoch.
    """
    cfg.validate()
    history: list[dict] = []
    if cfg.epochs == 0:
        return model, history
    weights = weights or initial_weights(cfg)
    rng = np.random.default_rng(cfg.seed)
    groups = assembly.groups
    sizes = np.array([len(g) for g in groups])
    N = int(sizes.sum())
    steps = math.ceil(N / cfg.batch)
    bk = [min(n, max(2, math.ceil(cfg.batch * n / N))) for n in sizes]
    bt = 0 if target is None else min(len(target), cfg.batch)
    aligning_possible = target is not None and len(target) >= 2 and min(bk) >= 2
    opt = Adam(model.n_params, cfg.lr) if cfg.optimizer == "adam" else None
    track = target is not None and cfg.track_rank
    rank_before = target_rank(model, target) if track else None

    for ep in range(cfg.epochs):
        perms = [rng.permutation(n) for n in sizes]
        tperm = rng.permutation(len(target)) if target is not None else None
        align = aligning_possible and model.epochs_trained >= cfg.e_warm and (
            weights.w_mol > 0 or weights.w_sub > 0)
        sums = np.zeros(3)
        for s in range(steps):
            items, labels, bounds = [], [], [0]
            for g, p, b in zip(groups, perms, bk):
                idx = p[np.arange(s * b, (s + 1) * b) % len(p)]
                items += [g.tensors[i] for i in idx]
                labels.append(g.labels[idx])
                bounds.append(bounds[-1] + b)
            n_src = bounds[-1]
            if align:
                tidx = tperm[np.arange(s * bt, (s + 1) * bt) % len(tperm)]
                items += [target.tensors[i] for i in tidx]
            y = np.concatenate(labels)
            fwd = model.forward(Batch.pack(items))
            reg, g_pred_src = mse_with_grad(fwd.pred[:n_src], y)
            g_pred = np.zeros_like(fwd.pred)
            g_pred[:n_src] = weights.w_reg * g_pred_src
            g_hm = np.zeros_like(fwd.h_mol)
            g_hs = np.zeros_like(fwd.h_sub)
            value = weights.w_reg * reg
            mol = sub = 0.0
            if align:
                src = [(fwd.h_mol[a:b], fwd.h_sub[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
                t = da_terms(src, (fwd.h_mol[n_src:], fwd.h_sub[n_src:]), assembly.gammas, weights)
                for (a, b), gm, gs in zip(zip(bounds[:-1], bounds[1:]), t.grad_mol, t.grad_sub):
                    g_hm[a:b] = gm
                    g_hs[a:b] = gs
                g_hm[n_src:] = t.grad_mol_t
                g_hs[n_src:] = t.grad_sub_t
                value += t.value
                mol, sub = t.mol, t.sub
            grads = gradients(model, fwd, OutputGrads(value, g_hm, g_hs, g_pred))
            if opt is None:
                sgd_step(model, grads, cfg.lr)
            else:
                opt.step(model.params, grads)
            sums += (reg, mol, sub)
        model.epochs_trained += 1
        mean = sums / steps
        if align:
            weights = weight_controller_step(weights, mean)
        rec = {"epoch": model.epochs_trained, "L_reg": mean[0], "mol": mean[1], "sub": mean[2],
               "aligned": bool(align), **weights.to_json()}
        if track:
            rec["collapse_rank"] = target_rank(model, target)
        history.append(rec)
    if history and rank_before is not None:
        history[0]["collapse_rank_before"] = rank_before
    return model, history


def train_supervised(model: EncoderModel, data: LabeledSet, epochs: int, cfg: AdaptConfig):
    """Plain regression on one labeled set (the baseline recipe)."""
    return adapt_run(model, SourceAssembly([data], [1.0]), None, replace(cfg, epochs=epochs))


def predict(model: EncoderModel, s, chunk: int = 512) -> np.ndarray:
    out = []
    for a in range(0, len(s), chunk):
        out.append(model.forward(s.batch(range(a, min(a + chunk, len(s))))).pred)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_mae(model: EncoderModel, labeled: LabeledSet, labels: np.ndarray | None = None) -> float:
    """Mean absolute error; ``labels`` overrides the set's own (for sealed labels)."""
    if len(labeled) == 0:
        raise EmptySet("cannot evaluate on an empty set")
    y = labeled.labels if labels is None else np.asarray(labels, dtype=np.float64)
    return float(np.abs(predict(model, labeled) - y).mean())


def write_history(path, history: list[dict]) -> None:
    write_jsonl(path, history)
