"""Two-path message-passing regressor with exact hand-written gradients.

Architecture (``d`` = width, ``L`` = rounds, ``T`` = atom types, ``d_h`` = head width)::

    H0      = E[type]                                  E: T x d
    H_{l+1} = tanh(H_l Ws_l + (A H_l) Wn_l + b_l)      A: bond-order weighted adjacency
    h_mol   = mean over atoms of H_L
    h_sub   = mean over fragments of (mean over fragment atoms of H_L)
    y_hat   = (tanh([h_mol, h_sub] W1 + b1) w2 + b2) * y_scale + y_mean

Parameter count: ``T*d + L*(2*d*d + d) + 2*d*d_h + d_h + d_h + 1``; with
T=16, d=32, L=3, d_h=32 that is 8865.

All parameters live in one flat float64 vector; the named matrices are views.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BadConfig, NaNGradient, NonScalarLoss
from .molgraph import MolGraph, fragment_assignment

ATOM_TYPES = ("C", "c", "N", "n", "O", "o", "S", "s", "P", "p", "B", "b", "F", "Cl", "Br", "I")
_TYPE_INDEX = {t: k for k, t in enumerate(ATOM_TYPES)}


def atom_type(element: str, aromatic: bool) -> int:
    return _TYPE_INDEX[element.lower() if aromatic else element]


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    n_layers: int = 3
    n_types: int = len(ATOM_TYPES)
    d_head: int = 32

    def validate(self):
        if self.d < 2 or self.n_layers < 1 or self.d_head < 1 or self.n_types < 1:
            raise BadConfig(f"invalid encoder config {self}")


def parameter_count(cfg: EncoderConfig) -> int:
    d, L, T, dh = cfg.d, cfg.n_layers, cfg.n_types, cfg.d_head
    return T * d + L * (2 * d * d + d) + 2 * d * dh + dh + dh + 1


# --------------------------------------------------------------------------- inputs

@dataclass(frozen=True)
class GraphTensors:
    """Per-molecule arrays: atom types, local CSR adjacency, pooling weights."""

    types: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    weight: np.ndarray
    frag: np.ndarray
    n_frags: int
    w_mol: np.ndarray
    w_sub: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.types.shape[0]

    @classmethod
    def from_graph(cls, g: MolGraph) -> "GraphTensors":
        if g.num_atoms == 0:
            raise ValueError("cannot encode an empty graph")
        n = g.num_atoms
        types = np.array([atom_type(a.element, a.aromatic) for a in g.atoms], dtype=np.int64)
        rows: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for i, j, o in g.bonds:
            rows[i].append((j, float(o)))
            rows[j].append((i, float(o)))
        for r in rows:
            r.sort()
        indptr = np.cumsum([0] + [len(r) for r in rows]).astype(np.int64)
        indices = np.array([j for r in rows for j, _ in r], dtype=np.int64)
        weight = np.array([o for r in rows for _, o in r], dtype=np.float64)
        frag = np.array(fragment_assignment(g), dtype=np.int64)
        n_frags = int(frag.max()) + 1
        fsize = np.bincount(frag, minlength=n_frags)
        return cls(types, indptr, indices, weight, frag, n_frags,
                   np.full(n, 1.0 / n), 1.0 / (n_frags * fsize[frag]))


@dataclass
class Batch:
    """Block-diagonal batch: stacked atoms, symmetric adjacency, per-molecule offsets."""

    types: np.ndarray
    adj: sp.csr_matrix
    offsets: np.ndarray
    w_mol: np.ndarray
    w_sub: np.ndarray
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @classmethod
    def pack(cls, items: Sequence[GraphTensors], labels=None) -> "Batch":
        if not items:
            raise ValueError("empty batch")
        offs = np.zeros(len(items) + 1, dtype=np.int64)
        np.cumsum([t.types.shape[0] for t in items], out=offs[1:])
        nnz = np.zeros(len(items) + 1, dtype=np.int64)
        np.cumsum([t.indices.shape[0] for t in items], out=nnz[1:])
        n = int(offs[-1])
        indptr = np.concatenate([t.indptr[:-1] + e for t, e in zip(items, nnz[:-1])] + [nnz[-1:]])
        indices = np.concatenate([t.indices + o for t, o in zip(items, offs[:-1])])
        adj = sp.csr_matrix((np.concatenate([t.weight for t in items]), indices, indptr),
                            shape=(n, n))
        lab = None if labels is None else np.asarray(labels, dtype=np.float64)
        if lab is not None and lab.shape != (len(items),):
            raise ValueError("labels must match batch size")
        return cls(np.concatenate([t.types for t in items]), adj, offs,
                   np.concatenate([t.w_mol for t in items])[:, None],
                   np.concatenate([t.w_sub for t in items])[:, None], lab)

    @classmethod
    def from_graphs(cls, graphs: Sequence[MolGraph], labels=None) -> "Batch":
        return cls.pack([GraphTensors.from_graph(g) for g in graphs], labels)


# --------------------------------------------------------------------------- model

@dataclass
class Forward:
    h_mol: np.ndarray
    h_sub: np.ndarray
    pred: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


@dataclass
class OutputGrads:
    """A scalar loss value with its gradient w.r.t. the forward outputs."""

    value: float
    h_mol: np.ndarray | None = None
    h_sub: np.ndarray | None = None
    pred: np.ndarray | None = None


class EncoderModel:
    def __init__(self, cfg: EncoderConfig, params: np.ndarray | None = None,
                 y_mean: float = 0.0, y_scale: float = 1.0, epochs_trained: int = 0):
        cfg.validate()
        self.cfg = cfg
        n = parameter_count(cfg)
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise BadConfig(f"expected {n} parameters, got {self.params.shape}")
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)
        self.epochs_trained = int(epochs_trained)
        self._bind()

    def _bind(self):
        d, L, T, dh = self.cfg.d, self.cfg.n_layers, self.cfg.n_types, self.cfg.d_head
        p, pos = self.params, 0

        def take(*shape):
            nonlocal pos
            size = int(np.prod(shape))
            view = p[pos:pos + size].reshape(shape)
            pos += size
            return view

        self.E = take(T, d)
        self.Ws, self.Wn, self.b = [], [], []
        for _ in range(L):
            self.Ws.append(take(d, d))
            self.Wn.append(take(d, d))
            self.b.append(take(d))
        self.W1 = take(2 * d, dh)
        self.b1 = take(dh)
        self.w2 = take(dh)
        self.b2 = take(1)
        assert pos == p.size

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.cfg, self.params.copy(), self.y_mean, self.y_scale,
                            self.epochs_trained)

    __deepcopy__ = lambda self, memo: self.copy()  # noqa: E731

    def set_label_scale(self, labels) -> None:
        y = np.asarray(labels, dtype=np.float64)
        self.y_mean = float(y.mean())
        sd = float(y.std())
        self.y_scale = sd if sd > 0 else 1.0

    # forward / backward ---------------------------------------------------
    def forward(self, batch: Batch) -> Forward:
        A = batch.adj
        H = self.E[batch.types]
        hs_list, ms_list = [H], []
        for Ws, Wn, b in zip(self.Ws, self.Wn, self.b):
            M = A @ H
            H = np.tanh(H @ Ws + M @ Wn + b)
            ms_list.append(M)
            hs_list.append(H)
        starts = batch.offsets[:-1]
        h_mol = np.add.reduceat(H * batch.w_mol, starts, axis=0)
        h_sub = np.add.reduceat(H * batch.w_sub, starts, axis=0)
        feats = np.concatenate([h_mol, h_sub], axis=1)
        Zh = np.tanh(feats @ self.W1 + self.b1)
        out = Zh @ self.w2 + self.b2[0]
        pred = out * self.y_scale + self.y_mean
        cache = {"batch": batch, "H": hs_list, "M": ms_list, "feats": feats, "Zh": Zh}
        return Forward(h_mol, h_sub, pred, cache)

    def backward(self, fwd: Forward, g_hmol=None, g_hsub=None, g_pred=None) -> np.ndarray:
        c = fwd.cache
        batch: Batch = c["batch"]
        d = self.cfg.d
        grad = np.zeros_like(self.params)
        gm = EncoderModel.__new__(EncoderModel)
        gm.cfg, gm.params = self.cfg, grad
        gm._bind()

        B = batch.size
        g_hm = np.zeros((B, d)) if g_hmol is None else np.array(g_hmol, dtype=np.float64)
        g_hs = np.zeros((B, d)) if g_hsub is None else np.array(g_hsub, dtype=np.float64)
        if g_pred is not None:
            g_out = np.asarray(g_pred, dtype=np.float64) * self.y_scale
            Zh = c["Zh"]
            gm.w2[:] = Zh.T @ g_out
            gm.b2[0] = g_out.sum()
            g_u = np.outer(g_out, self.w2) * (1.0 - Zh * Zh)
            gm.W1[:] = c["feats"].T @ g_u
            gm.b1[:] = g_u.sum(0)
            g_feats = g_u @ self.W1.T
            g_hm += g_feats[:, :d]
            g_hs += g_feats[:, d:]
        counts = batch.counts
        g_H = np.repeat(g_hm, counts, axis=0) * batch.w_mol + np.repeat(g_hs, counts, axis=0) * batch.w_sub
        A = batch.adj  # symmetric
        for layer in reversed(range(self.cfg.n_layers)):
            H_in, H_out, M = c["H"][layer], c["H"][layer + 1], c["M"][layer]
            g_z = g_H * (1.0 - H_out * H_out)
            gm.Ws[layer][:] = H_in.T @ g_z
            gm.Wn[layer][:] = M.T @ g_z
            gm.b[layer][:] = g_z.sum(0)
            g_H = g_z @ self.Ws[layer].T + A @ (g_z @ self.Wn[layer].T)
        np.add.at(gm.E, batch.types, g_H)
        return grad


def init_encoder(cfg: EncoderConfig, seed: int) -> EncoderModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    m = EncoderModel(cfg)
    d, dh = cfg.d, cfg.d_head
    m.E[:] = rng.uniform(-1.0, 1.0, m.E.shape)
    lim = 1.0 / np.sqrt(2 * d)
    for Ws, Wn in zip(m.Ws, m.Wn):
        Ws[:] = rng.uniform(-lim, lim, Ws.shape)
        Wn[:] = rng.uniform(-lim, lim, Wn.shape)
    m.W1[:] = rng.uniform(-lim, lim, m.W1.shape)
    m.w2[:] = rng.uniform(-1 / np.sqrt(dh), 1 / np.sqrt(dh), m.w2.shape)
    return m


def forward(model: EncoderModel, batch: Batch) -> Forward:
    return model.forward(batch)


def gradients(model: EncoderModel, fwd: Forward, loss: OutputGrads) -> np.ndarray:
    """Exact reverse-mode gradient of ``loss.value`` w.r.t. every parameter."""
    if np.ndim(loss.value) != 0:
        raise NonScalarLoss(f"loss has shape {np.shape(loss.value)}")
    return model.backward(fwd, loss.h_mol, loss.h_sub, loss.pred)


def sgd_step(model: EncoderModel, grads: np.ndarray, lr: float) -> EncoderModel:
    if not np.all(np.isfinite(grads)):
        raise NaNGradient("non-finite gradient")
    model.params -= lr * grads
    return model


class Adam:
    """Adam state over a flat parameter vector (Kingma & Ba defaults)."""

    def __init__(self, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if not np.all(np.isfinite(grads)):
            raise NaNGradient("non-finite gradient")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def copy(self) -> "Adam":
        return copy.deepcopy(self)


def model_header(model: EncoderModel) -> dict:
    return {"config": asdict(model.cfg), "y_mean": model.y_mean, "y_scale": model.y_scale,
            "epochs_trained": model.epochs_trained}


def model_from_header(header: dict, params: np.ndarray) -> EncoderModel:
    return EncoderModel(EncoderConfig(**header["config"]), params, header["y_mean"],
                        header["y_scale"], header["epochs_trained"])


def save_model(path, model: EncoderModel) -> str:
    from .io import save_checkpoint
    return save_checkpoint(path, "encoder", model_header(model), model.params)


def load_model(path) -> EncoderModel:
    from .io import load_checkpoint
    header, params = load_checkpoint(path, "encoder")
    return model_from_header(header, params)
