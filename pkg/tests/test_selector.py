import math
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from molood.bench.descriptors import ScaffoldRecord, graph_descriptor
from molood.chemsim import morgan_fingerprint, wl_kernel
from molood.errors import (EmptyTargets, GroupTooSmall, KTooLarge, LengthMismatch, PoolTooSmall,
                           UnknownPolicy)
from molood.chemsim import Fingerprint
from molood.molgraph import canonical_key, parse_smiles
from molood.selector import env as env_mod
from molood.selector.baselines import (HEURISTICS, SelectorInputs, baseline_selectors, minmax,
                                       mixed_scores, top_k)
from molood.selector.policy import (ActionRecord, Context, PlantedBandit, PolicyConfig, PolicyState,
                                    advantages, clipped_surrogate, grpo_loss, infer_select,
                                    init_policy, is_valid, kl_estimate, load_policy, log_prob,
                                    sample_actions, save_policy, train_policy)
from molood.selector.tsec import (STATE_DIM, build_candidate_pool, build_state, hub_score,
                                  hub_score_from_sims, rank_candidates, rescore, s_rank,
                                  select_proxies, shared_pool, state_matrix)

from conftest import relative_error


def rec(smiles: str, n: int, tag: str = "") -> ScaffoldRecord:
    g = parse_smiles(smiles)
    key = canonical_key(g)
    return ScaffoldRecord(key, g, [f"{tag or key}-{i}" for i in range(n)], graph_descriptor(g),
                          morgan_fingerprint(g))


RINGS = ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCNCC1", "C1CCOCC1", "c1ccc2ccccc2c1",
         "C1CCC1", "C1CCCC1", "c1ccoc1", "c1ccsc1", "C1CCCCCC1", "c1ccc(-c2ccccc2)cc1"]


# ---------------------------------------------------------------- HubScore, proxies, S_rank

def test_hub_score_examples():
    assert abs(hub_score_from_sims([0.9, 0.5, 0.2]) - 1.5) < 1e-12
    assert hub_score_from_sims([0.9, 0.5, 0.2], lam=0.0) == 0.9
    assert hub_score_from_sims([0.1, 0.3, 0.2], lam=7.0) == 0.3
    with pytest.raises(EmptyTargets):
        hub_score_from_sims([])
    with pytest.raises(EmptyTargets):
        hub_score(rec("c1ccccc1", 1).fingerprint, [])


def test_select_proxies_examples():
    targets = [rec(s, 1) for s in ("c1ccc2ccccc2c1", "c1ccc2ncccc2c1")]
    tfps = [t.fingerprint for t in targets]
    pool = [rec(s, 10) for s in RINGS]
    scores = {r.key: hub_score(r.fingerprint, tfps) for r in pool}
    assert select_proxies(pool, tfps, 1)[0].key == canonical_key(parse_smiles("c1ccc2ccccc2c1"))
    chosen = select_proxies(pool, tfps, len(pool) - 1)
    lowest = min(pool, key=lambda r: (scores[r.key], [-ord(c) for c in r.key]))
    assert lowest.key not in {r.key for r in chosen}
    ranked = [r.key for r in sorted(pool, key=lambda r: (-scores[r.key], r.key))]
    assert [r.key for r in select_proxies(pool, tfps, 3)] == ranked[:3]
    with pytest.raises(PoolTooSmall):
        select_proxies(pool, tfps, len(pool))


def test_s_rank_examples():
    assert abs(s_rank(0.8, 99) - 3.68414) < 1e-5
    assert s_rank(0.0, 10_000) == 0.0
    assert abs(s_rank(1.0, 1) - math.log(2)) < 1e-15
    with pytest.raises(ValueError):
        s_rank(0.5, 0)


def test_candidate_pool_ordering():
    proxy = rec("c1ccccc1", 5)
    # clones of the proxy (kernel 1) with sizes 40, 8, 1 plus an unrelated ring
    pool = [rec("c1ccccc1", 40, "a"), rec("c1ccccc1", 8, "b"), rec("c1ccccc1", 1, "c"),
            rec("C1CCC1", 30, "d")]
    cands = rank_candidates(proxy, pool)
    assert [round(c.score, 4) for c in cands[:3]] == [round(math.log(41), 4), round(math.log(9), 4),
                                                      round(math.log(2), 4)]
    top2 = build_candidate_pool(proxy, pool, 2)
    assert [c.record.members[0] for c in top2] == ["a-0", "b-0"]
    assert len(build_candidate_pool(proxy, pool, 4)) == 4
    assert build_candidate_pool(proxy, pool, 1)[0].record.members[0] == "a-0"
    with pytest.raises(PoolTooSmall):
        build_candidate_pool(proxy, pool, 5)


def test_pool_matches_independent_ranking():
    pool = [rec(s, 3 + 2 * i) for i, s in enumerate(RINGS)]
    proxy = rec("c1ccncc1", 4)
    want = sorted(pool, key=lambda r: (-wl_kernel(proxy.graph, r.graph) * math.log1p(r.size), r.key))
    assert [c.key for c in build_candidate_pool(proxy, pool, 6)] == [r.key for r in want[:6]]


def test_shared_pool_excludes_proxies():
    pool = [rec(s, 5 + i) for i, s in enumerate(RINGS)]
    proxies = pool[:2]
    shared = shared_pool(proxies, pool, 5)
    assert len(shared) == 5 and not {p.key for p in proxies} & {r.key for r in shared}
    re = rescore(proxies[0], shared)
    assert [c.key for c in re] == [r.key for r in shared]


def test_state_vector_examples():
    proxy = rec("c1ccccc1", 999)
    pool = rescore(proxy, [rec("c1ccccc1", 999, "clone"), rec("c1ccncc1", 99)])
    S = state_matrix(proxy.fingerprint, pool)
    assert S.shape == (2, STATE_DIM) == (2, 258)
    assert abs(S[0, -2] - 1.0) < 1e-12 and abs(S[0, -1] - 1.0) < 1e-12
    assert abs(S[1, -1] - 0.66667) < 1e-5
    assert np.array_equal(S[0, :128], proxy.fingerprint.bits)
    with pytest.raises(LengthMismatch):
        build_state(Fingerprint(np.zeros(64, np.uint8)), proxy.fingerprint, 1.0, 3, 1.0)


# ---------------------------------------------------------------- Bernoulli policy pieces

def test_log_prob_examples():
    assert abs(log_prob(np.zeros(3), np.array([1, 0, 1])) - (-2.07944)) < 1e-5
    assert not is_valid(np.zeros(5), 8)
    assert is_valid(np.ones(8), 8) and not is_valid(np.ones(9), 8)


@given(st.integers(0, 10_000), st.integers(1, 20))
def test_log_prob_equals_product(seed, m):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=3, size=m)
    a = rng.integers(0, 2, m)
    p = 1 / (1 + np.exp(-logits))
    direct = np.prod(np.where(a == 1, p, 1 - p))
    assert abs(log_prob(logits, a) - math.log(direct)) < 1e-9


def test_sample_actions_deterministic():
    net = init_policy(PolicyConfig(), 0)
    X = PlantedBandit(12, seed=1).states
    a = sample_actions(net, net, X, 33, seed=5)
    b = sample_actions(net, net, X, 33, seed=5)
    assert [r.bitstring for r in a] == [r.bitstring for r in b]
    assert all(r.logp == r.logp_ref for r in a)
    assert all(r.valid == is_valid(r.bits, 8) for r in a)
    with pytest.raises(GroupTooSmall):
        sample_actions(net, net, X, 1, seed=5)


def test_advantage_constant_group_is_exactly_zero():
    assert np.all(advantages([683.2754003071111] * 3) == 0.0)
    a = advantages([683.2754003071111, np.nextafter(683.2754003071111, 1e9), 683.2754003071111])
    assert abs(a.mean()) < 1e-9


def test_advantage_examples():
    assert np.allclose(advantages([1, 2, 3]), [-1.22474, 0, 1.22474], atol=1e-5)
    assert np.all(advantages([4, 4, 4]) == 0)
    assert np.allclose(advantages([1, 2, 3]), advantages([101, 102, 103]))
    with pytest.raises(GroupTooSmall):
        advantages([1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_advantage_moments(rewards):
    a = advantages(rewards)
    assert abs(a.mean()) < 1e-9
    sigma = statistics.pstdev(rewards)
    assert 0.0 <= a.std() <= 1.0 + 1e-12
    if sigma > 1e-6:  # below this the reference std itself carries rounding error
        # std is sigma / (sigma + eps_s): within eps_s of 1 once sigma >= 1
        assert abs(a.std() - sigma / (sigma + 1e-8)) < 1e-9
        assert 1.0 - a.std() <= 1e-8 / sigma + 1e-12


def test_kl_examples():
    assert kl_estimate([0.0, 0.0]) == 0.0
    assert abs(kl_estimate([math.log(2)]) - 0.30685) < 1e-5
    with pytest.raises(ValueError):
        kl_estimate([np.inf])


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=30))
def test_kl_nonnegative(deltas):
    v = kl_estimate(deltas)
    assert v >= 0.0
    assert (v == 0.0) == all(d == 0 for d in deltas) or v < 1e-15


def test_clip_examples():
    assert clipped_surrogate(1.5, 1.0) == 1.2
    assert clipped_surrogate(0.5, -1.0) == -0.8
    assert clipped_surrogate(1.1, 1.0) == 1.1


def _records(net, X, seed, g=16):
    recs = sample_actions(net, net, X, g, seed)
    valid = [r for r in recs if r.valid]
    adv = advantages(np.arange(len(valid), dtype=float) % 3)
    for r, a in zip(valid, adv):
        r.advantage = float(a)
    return recs


def test_grpo_loss_at_reference_is_zero():
    net = init_policy(PolicyConfig(), 3, 0.3)
    X = PlantedBandit(10, seed=3).states
    recs = _records(net, X, 0)
    value, _ = grpo_loss(recs, net, X)
    assert abs(value) < 1e-12
    with pytest.raises(GroupTooSmall):
        grpo_loss(recs[:1], net, X)


@pytest.mark.parametrize("seed", range(5))
def test_grpo_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    cfg = PolicyConfig()
    net = init_policy(cfg, seed, 0.3)
    X = PlantedBandit(10, seed=seed).states
    recs = _records(net, X, seed)
    net.params += rng.normal(scale=0.05, size=net.params.size)  # move off the reference
    _, grad = grpo_loss(recs, net, X, cfg)
    for i in rng.choice(net.params.size, 20, replace=False):
        old = net.params[i]
        net.params[i] = old + 1e-4
        up = grpo_loss(recs, net, X, cfg)[0]
        net.params[i] = old - 1e-4
        down = grpo_loss(recs, net, X, cfg)[0]
        net.params[i] = old
        num = (up - down) / 2e-4
        assert relative_error(grad[i], num, floor=1e-7) < 1e-4, (i, grad[i], num)


def test_infer_select_examples():
    net = init_policy(PolicyConfig(), 0)
    X = PlantedBandit(6, seed=0).states
    keys = [f"k{j}" for j in range(6)]
    assert infer_select(net, X, keys, 6) == list(range(6))
    with pytest.raises(KTooLarge):
        infer_select(net, X, keys, 7)
    # zero output weights: uniform logits, lexicographic keys win
    net.w2[:] = 0.0
    assert infer_select(net, X, ["e", "b", "f", "a", "d", "c"], 2) == [1, 3]


def test_infer_select_monotone_invariance():
    net = init_policy(PolicyConfig(), 4)
    X = PlantedBandit(20, seed=4).states
    keys = [f"k{j:02d}" for j in range(20)]
    raw = net.raw_logits(X)[0]
    for f in (np.exp, lambda z: z ** 3, lambda z: 5 * z - 2):
        z = f(raw)
        want = sorted(sorted(range(20), key=lambda j: (-z[j], keys[j]))[:5])
        assert infer_select(net, X, keys, 5) == want


def test_train_policy_zero_steps_and_determinism(tmp_path):
    env = PlantedBandit(10, seed=0)
    st0 = PolicyState(init_policy(PolicyConfig(), 0), PolicyConfig())
    before = st0.net.params.copy()
    train_policy(env, st0, 0, 0)
    assert np.array_equal(st0.net.params, before)
    runs = [train_policy(env, PolicyState(init_policy(PolicyConfig(), 0), PolicyConfig()), 5, 9)
            for _ in range(2)]
    assert np.array_equal(runs[0].net.params, runs[1].net.params)
    assert runs[0].log == runs[1].log
    save_policy(tmp_path / "p.ckpt", runs[0])
    assert np.array_equal(load_policy(tmp_path / "p.ckpt").params, runs[0].net.params)


def test_train_policy_skips_all_invalid_group():
    class Never:
        def context(self, step):
            return Context(0, PlantedBandit(10).states, [f"c{j}" for j in range(10)])

        def reward(self, ctx, bits):
            raise ValueError("rollout failed")

    state = train_policy(Never(), PolicyState(init_policy(PolicyConfig(), 0), PolicyConfig()), 2, 0)
    assert all(r["skipped"] for r in state.log if "index" in r)


def test_planted_bandit_recovery():
    hits = 0
    for seed in range(10):
        env = PlantedBandit(10, (0, 1), seed)
        cfg = PolicyConfig(group_size=33)
        state = train_policy(env, PolicyState(init_policy(cfg, seed), cfg), 40, seed)
        hits += infer_select(state.net, env.states, env.keys, 2) == [0, 1]
    assert hits >= 9


# ---------------------------------------------------------------- heuristic selectors

def _pool():
    proxy = rec("c1ccccc1", 10)
    return proxy, rescore(proxy, [rec(s, 10 + i) for i, s in enumerate(RINGS)])


def test_graph_kernel_and_random():
    proxy, pool = _pool()
    inp = SelectorInputs(proxy.descriptor, seed=3)
    sel = baseline_selectors("graph-kernel", pool, 3, inp)
    assert 0 in sel  # the clone of the proxy
    assert baseline_selectors("random", pool, 4, inp) == baseline_selectors("random", pool, 4, inp)
    assert baseline_selectors("physical", pool, 1, inp) == [0]  # identical descriptor
    with pytest.raises(UnknownPolicy):
        baseline_selectors("oracle", pool, 2, inp)
    with pytest.raises(KTooLarge):
        top_k([1.0], ["a"], 2)
    assert set(HEURISTICS) == {"random", "shallow", "deep", "physical", "graph-kernel", "mixed"}


def test_mixed_hand_example():
    kernel, physical = [1.0, 0.5, 0.0], [-3.0, -1.0, -2.0]
    # minmax: (1, .5, 0) and (0, 1, .5); blend (.5, .75, .25)
    assert np.allclose(mixed_scores(kernel, physical), [0.5, 0.75, 0.25])
    assert top_k(mixed_scores(kernel, physical), ["a", "b", "c"], 2) == [0, 1]
    assert top_k(mixed_scores(kernel, physical), ["a", "b", "c"], 1) == [1]
    assert np.array_equal(minmax([2.0, 2.0]), [0.0, 0.0])


# ---------------------------------------------------------------- proxy environment

@pytest.fixture(scope="module")
def planted_env():
    from molood.config import load_config
    from molood.pipeline import (build_workspace, load_dataset, molecule_split, retrieve,
                                 task_records)
    from molood.adapt import train_supervised
    from molood.encoder import init_encoder
    from molood.selector.env import ProxyEnvironment

    def make(seed, inflate=None, **over):
        cfg = replace(load_config("configs/planted.json"), **over)
        ws = build_workspace(load_dataset(cfg.dataset, cfg.data_seed), cfg, seed)
        _, tasks = molecule_split(ws.split, "strict", seed, cfg.task_threshold)
        targets = list(task_records(ws, tasks).values())
        r = retrieve(ws, cfg, targets)
        source = ws.split.records("source")
        pk = {p.key for p in r.proxies}
        data = ws.store.labeled([m for x in source if x.key not in pk for m in x.members])
        warm = init_encoder(cfg.encoder_config(), seed)
        warm.set_label_scale(data.labels)
        train_supervised(warm, data, cfg.warm_epochs, cfg.adapt_config(0, seed))
        env = ProxyEnvironment(ws.store, source, [t.fingerprint for t in targets], warm,
                               cfg.adapt_config(cfg.e_proxy, seed),
                               replace(cfg.env_config(seed), pool_size=len(r.pool)), r.proxies)
        return env, ws, tasks
    return make


def test_rollout_sealing_sentinel(planted_env, monkeypatch):
    env, ws, tasks = planted_env(0)
    target_ids = {i for ids in tasks.values() for i in ids}
    finished = {"adapt": 0}
    real_adapt = env_mod.adapt_run

    def tracked(*a, **k):
        out = real_adapt(*a, **k)
        finished["adapt"] += 1
        return out

    def sentinel():
        assert finished["adapt"] > 0, "proxy labels revealed before adaptation finished"
        finished["adapt"] -= 1

    real_labeled = env._store.labeled

    def guarded(ids, name=""):
        assert not target_ids & set(ids), "real-target molecules requested with labels"
        return real_labeled(ids, name)

    monkeypatch.setattr(env_mod, "adapt_run", tracked)
    monkeypatch.setattr(env._store, "labeled", guarded)
    for p in env.proxies:
        p.labels.on_reveal = sentinel
    bits = np.zeros(env.m, np.uint8)
    bits[:3] = 1
    r1 = env_mod.rollout_reward(bits, env, 0)
    assert env.proxies[0].labels.reveals == 2  # base rollout and the selected one
    env._cache.clear()
    assert env_mod.rollout_reward(bits, env, 0) == r1


def test_planted_family_positive_reward(planted_env):
    """Choosing the helpful family (same label offset as the proxies) pays off on average."""
    means = []
    for seed in range(10):
        env, ws, _ = planted_env(seed, max_group_samples=16, e_proxy=3)
        fam = np.array([c.members[0].split("-")[0] for c in env.pool])
        helpful = np.flatnonzero(fam == "helpful")
        rewards = []
        for ctx in range(len(env.proxies)):
            bits = np.zeros(env.m, np.uint8)
            bits[helpful[:4]] = 1
            rewards.append(env_mod.rollout_reward(bits, env, ctx))
        means.append(np.mean(rewards))
    assert min(means) > 0.0, means


def test_policy_step_cost_independent_of_source_size():
    proxy = rec("c1ccccc1", 10)
    core = [rec(s, 20, f"core{i}") for i, s in enumerate(RINGS[1:])]
    # saturated filler shares no WL label with benzene, so it never enters the pool
    filler = [replace(rec("C1CCN(C)CC1", 30), key=f"fill{i:03d}") for i in range(100)]
    envs = []
    for source in (core + filler[:10], core + filler):
        pool = shared_pool([proxy], [proxy] + source, 8)
        env = PlantedBandit(8, seed=0)
        env.states = state_matrix(proxy.fingerprint, rescore(proxy, pool))
        envs.append(env)
    assert np.array_equal(envs[0].states, envs[1].states)
    best = [math.inf, math.inf]
    for _ in range(7):  # interleaved so machine load hits both sides alike
        for i, env in enumerate(envs):
            state = PolicyState(init_policy(PolicyConfig(), 0), PolicyConfig())
            t0 = time.perf_counter()
            train_policy(env, state, 10, 0)
            best[i] = min(best[i], time.perf_counter() - t0)
    assert abs(best[1] - best[0]) / best[0] < 0.2, best
