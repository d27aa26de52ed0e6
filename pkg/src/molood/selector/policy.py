"""Bernoulli subset policy trained with group-relative policy optimization.

Network: ``258 -> 64 -> LayerNorm -> tanh -> 1`` per candidate, logits clamped
to [-15, 15]. With ``center`` on, the per-candidate scores are centered over
the pool before the output bias is added, so the weights only express
relative preference and the expected subset size moves through the bias
alone. An action is an independent Bernoulli draw per candidate with

    log pi(a) = sum_j a_j ln p_j + (1 - a_j) ln(1 - p_j)

Within a group of valid actions the advantage is ``(R - mean) / (std + eps_s)``
and the loss is

    -mean_i min(r_i A_i, clip(r_i, 1 - eps, 1 + eps) A_i) + beta * mean_i (e^D_i - D_i - 1)

with ``D_i = ln pi(a_i) - ln pi_ref(a_i)`` and ``r_i = e^D_i``. The reference
policy is refreshed to the current one at the start of every step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..encoder import Adam
from ..errors import BadConfig, GroupTooSmall, KTooLarge
from .tsec import STATE_DIM

LOGIT_CLAMP = 15.0


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 64
    lr: float = 1e-3
    clip_eps: float = 0.2
    beta: float = 0.01
    group_size: int = 33
    eps_s: float = 1e-8
    k_max: int = 8
    ln_eps: float = 1e-5
    center: bool = True

    def validate(self):
        if self.hidden < 1 or self.group_size < 2 or self.k_max < 1 or self.lr < 0:
            raise BadConfig(f"invalid policy config {self}")


class PolicyNet:
    def __init__(self, hidden: int = 64, state_dim: int = STATE_DIM, params=None,
                 ln_eps: float = 1e-5, center: bool = True):
        self.hidden, self.state_dim, self.ln_eps = hidden, state_dim, ln_eps
        self.center = center
        n = state_dim * hidden + 3 * hidden + hidden + 1
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise BadConfig(f"expected {n} policy parameters")
        self._bind()

    def _bind(self):
        h, s, p = self.hidden, self.state_dim, self.params
        o = 0
        self.W1 = p[o:o + s * h].reshape(s, h); o += s * h
        self.b1 = p[o:o + h]; o += h
        self.gain = p[o:o + h]; o += h
        self.bias = p[o:o + h]; o += h
        self.w2 = p[o:o + h]; o += h
        self.b2 = p[o:o + 1]

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.hidden, self.state_dim, self.params.copy(), self.ln_eps, self.center)

    def raw_logits(self, X: np.ndarray):
        z = X @ self.W1 + self.b1
        mu = z.mean(1, keepdims=True)
        sd = np.sqrt(z.var(1, keepdims=True) + self.ln_eps)
        zh = (z - mu) / sd
        h = np.tanh(zh * self.gain + self.bias)
        u = h @ self.w2
        if self.center:
            u = u - u.mean()
        return u + self.b2[0], (X, zh, sd, h)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return np.clip(self.raw_logits(X)[0], -LOGIT_CLAMP, LOGIT_CLAMP)

    def probs(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits(X)))

    def backward(self, cache, raw: np.ndarray, g_logits: np.ndarray) -> np.ndarray:
        X, zh, sd, h = cache
        g_l = np.where(np.abs(raw) < LOGIT_CLAMP, g_logits, 0.0)
        grad = np.zeros_like(self.params)
        gn = PolicyNet.__new__(PolicyNet)
        gn.hidden, gn.state_dim, gn.params = self.hidden, self.state_dim, grad
        gn._bind()
        gn.b2[0] = g_l.sum()
        if self.center:
            g_l = g_l - g_l.mean()
        gn.w2[:] = h.T @ g_l
        g_u = np.outer(g_l, self.w2) * (1.0 - h * h)
        gn.gain[:] = (g_u * zh).sum(0)
        gn.bias[:] = g_u.sum(0)
        g_zh = g_u * self.gain
        g_z = (g_zh - g_zh.mean(1, keepdims=True) - zh * (g_zh * zh).mean(1, keepdims=True)) / sd
        gn.W1[:] = X.T @ g_z
        gn.b1[:] = g_z.sum(0)
        return grad


def init_policy(cfg: PolicyConfig, seed: int, init_prob: float = 0.5) -> PolicyNet:
    """Uniform fan-in weights, unit LayerNorm gain, output bias at logit(init_prob)."""
    cfg.validate()
    if not 0 < init_prob < 1:
        raise BadConfig("init_prob must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    net = PolicyNet(cfg.hidden, ln_eps=cfg.ln_eps, center=cfg.center)
    lim = 1.0 / math.sqrt(net.state_dim)
    net.W1[:] = rng.uniform(-lim, lim, net.W1.shape)
    net.gain[:] = 1.0
    lim2 = 1.0 / math.sqrt(cfg.hidden)
    net.w2[:] = rng.uniform(-lim2, lim2, net.w2.shape)
    net.b2[0] = math.log(init_prob / (1.0 - init_prob))
    return net


def log_prob(logits: np.ndarray, action: np.ndarray) -> float:
    """Exact Bernoulli log-likelihood of a binary action under (clamped) logits."""
    l = np.asarray(logits, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    return float((a * l - np.logaddexp(0.0, l)).sum())


@dataclass
class ActionRecord:
    bits: np.ndarray
    logp: float
    logp_ref: float
    valid: bool
    reward: float = float("nan")
    advantage: float = float("nan")

    @property
    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def is_valid(bits: np.ndarray, k_max: int) -> bool:
    n = int(np.count_nonzero(bits))
    return 1 <= n <= k_max


def sample_actions(policy: PolicyNet, ref: PolicyNet, states: np.ndarray, g: int, seed: int,
                   k_max: int = 8) -> list[ActionRecord]:
    if g < 2:
        raise GroupTooSmall("group size must be >= 2")
    logits = policy.logits(states)
    ref_logits = ref.logits(states)
    p = 1.0 / (1.0 + np.exp(-logits))
    out = []
    for ss in np.random.SeedSequence(seed).spawn(g):
        u = np.random.default_rng(ss).random(p.shape[0])
        bits = (u < p).astype(np.uint8)
        out.append(ActionRecord(bits, log_prob(logits, bits), log_prob(ref_logits, bits),
                                is_valid(bits, k_max)))
    return out


def advantages(rewards, eps_s: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"need >= 2 valid rewards, got {r.size}")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    c = r - r.mean()
    # second pass: a one-ulp error in the mean would otherwise be divided by a tiny std
    c -= c.mean()
    return c / (r.std() + eps_s)


def kl_estimate(deltas) -> float:
    d = np.asarray(deltas, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("log-ratio values must be finite")
    if d.size == 0:
        return 0.0
    # expm1(d) - d keeps precision for small d
    return float(np.mean(np.expm1(d) - d))


def clipped_surrogate(ratio, adv, clip_eps: float = 0.2) -> np.ndarray:
    r = np.asarray(ratio, dtype=np.float64)
    a = np.asarray(adv, dtype=np.float64)
    return np.minimum(r * a, np.clip(r, 1.0 - clip_eps, 1.0 + clip_eps) * a)


def grpo_loss(records: Sequence[ActionRecord], policy: PolicyNet, states: np.ndarray,
              cfg: PolicyConfig = PolicyConfig()) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient w.r.t. the policy parameters."""
    valid = [r for r in records if r.valid and np.isfinite(r.advantage)]
    if len(valid) < 2:
        raise GroupTooSmall(f"need >= 2 valid records, got {len(valid)}")
    raw, cache = policy.raw_logits(states)
    logits = np.clip(raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    p = 1.0 / (1.0 + np.exp(-logits))
    A = np.array([r.bits for r in valid], dtype=np.float64)
    adv = np.array([r.advantage for r in valid])
    logp = A @ logits - np.logaddexp(0.0, logits).sum()
    delta = logp - np.array([r.logp_ref for r in valid])
    ratio = np.exp(delta)
    surr = clipped_surrogate(ratio, adv, cfg.clip_eps)
    n = len(valid)
    value = float(-surr.mean() + cfg.beta * kl_estimate(delta))
    unclipped = ratio * adv <= np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv
    c = (-np.where(unclipped, ratio * adv, 0.0) + cfg.beta * np.expm1(delta)) / n
    g_logits = c @ (A - p)
    return value, policy.backward(cache, raw, g_logits)


def infer_select(policy: PolicyNet, states: np.ndarray, keys: Sequence[str], k: int) -> list[int]:
    """Top-``k`` candidate indices by logit, key ascending on ties; no sampling."""
    if not 1 <= k <= len(keys):
        raise KTooLarge(f"K={k} with a pool of {len(keys)}")
    raw = policy.raw_logits(states)[0]
    order = sorted(range(len(keys)), key=lambda j: (-raw[j], keys[j]))
    return sorted(order[:k])


# --------------------------------------------------------------------------- training

@dataclass
class Context:
    id: int
    states: np.ndarray
    keys: list[str]


class Environment(Protocol):
    def context(self, step: int) -> Context: ...

    def reward(self, ctx: Context, bits: np.ndarray) -> float: ...


@dataclass
class PolicyState:
    net: PolicyNet
    cfg: PolicyConfig
    ref: PolicyNet | None = None
    opt: Adam | None = None
    steps_done: int = 0
    log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.ref is None:
            self.ref = self.net.copy()
        if self.opt is None:
            self.opt = Adam(self.net.params.size, self.cfg.lr)

    def header(self) -> dict:
        return {"config": asdict(self.cfg), "steps_done": self.steps_done,
                "state_dim": self.net.state_dim}


def train_policy(env: Environment, state: PolicyState, steps: int, seed: int) -> PolicyState:
    cfg = state.cfg
    for t in range(steps):
        step = state.steps_done
        state.ref = state.net.copy()
        ctx = env.context(step)
        records = sample_actions(state.net, state.ref, ctx.states, cfg.group_size,
                                 _step_seed(seed, step), cfg.k_max)
        for r in records:
            if not r.valid:
                continue
            try:
                r.reward = float(env.reward(ctx, r.bits))
            except (ArithmeticError, ValueError) as exc:  # failed rollout voids the action
                r.valid = False
                state.log.append({"step": step, "event": "rollout_failed", "error": str(exc)})
        valid = [r for r in records if r.valid]
        loss = kl = None
        if len(valid) >= 2:
            adv = advantages([r.reward for r in valid], cfg.eps_s)
            for r, a in zip(valid, adv):
                r.advantage = float(a)
            kl = kl_estimate([r.logp - r.logp_ref for r in valid])
            loss, grad = grpo_loss(records, state.net, ctx.states, cfg)
            state.opt.step(state.net.params, grad)
        for i, r in enumerate(records):
            state.log.append({"step": step, "context": ctx.id, "index": i, "action": r.bitstring,
                              "valid": r.valid, "reward": _num(r.reward),
                              "advantage": _num(r.advantage), "kl": kl, "loss": loss,
                              "skipped": loss is None})
        state.steps_done += 1
    return state


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def _num(x: float):
    return None if not np.isfinite(x) else float(x)


# --------------------------------------------------------------------------- planted bandit

class PlantedBandit:
    """Reward 1 for exactly the planted set, else -0.1 per Hamming bit."""

    def __init__(self, m: int = 10, planted: Sequence[int] = (0, 1), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.m = m
        self.planted = np.zeros(m, dtype=np.uint8)
        self.planted[list(planted)] = 1
        fp = rng.integers(0, 2, 128)
        cand = rng.integers(0, 2, (m, 128))
        tail = rng.random((m, 2))
        self.states = np.hstack([np.tile(fp, (m, 1)), cand, tail]).astype(np.float64)
        self.keys = [f"c{j:03d}" for j in range(m)]

    def context(self, step: int) -> Context:
        return Context(0, self.states, self.keys)

    def reward(self, ctx: Context, bits: np.ndarray) -> float:
        if np.array_equal(bits, self.planted):
            return 1.0
        return -0.1 * float(np.count_nonzero(bits != self.planted))


# --------------------------------------------------------------------------- persistence

def save_policy(path, state: PolicyState) -> str:
    from ..io import save_checkpoint
    return save_checkpoint(path, "policy", state.header(), state.net.params)


def load_policy(path) -> PolicyNet:
    from ..io import load_checkpoint
    header, params = load_checkpoint(path, "policy")
    cfg = PolicyConfig(**header["config"])
    return PolicyNet(cfg.hidden, header["state_dim"], params, cfg.ln_eps, cfg.center)
