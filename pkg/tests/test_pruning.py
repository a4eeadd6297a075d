import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progdiff.denoiser import (
    DenoiserSpec,
    Parameters,
    apply_mask,
    count_flops,
    grad,
    init_params,
    layer_flops,
)
from progdiff.pruning import (
    LLMProxy,
    MagnitudeProxy,
    MemoryBank,
    MemoryBankEntry,
    Proxy,
    ProxyError,
    ProxyRequest,
    PruningScheme,
    RandomProxy,
    StubChatClient,
    TaylorProxy,
    UnrepairableSchemeError,
    build_request,
    evaluate_scheme,
    greedy_removal,
    iterative_prune,
    magnitude_importance,
    make_eval_batches,
    make_proxy,
    memory_bank_update,
    propose_schemes,
    taylor_importance,
)
from progdiff.pruning.proxies import GroupDescriptor
from progdiff.schedule import build_cosine_schedule

from .conftest import make_batch

S = build_cosine_schedule(100)
GROUP = tuple(range(20, 40))


@pytest.fixture
def spec():
    return DenoiserSpec(2, (16, 12, 10), 4)


@pytest.fixture
def params(spec):
    return init_params(spec, 11)


@pytest.fixture
def data():
    return np.random.default_rng(0).standard_normal((500, 2))


def request_for(params, f, n=3, bank=None, round=0):
    return build_request(params, GROUP, S, f, bank, n, "test", "toy", round)


def test_magnitude_removes_smallest_row_norm():
    spec = DenoiserSpec(1, (3,), 2)
    w0 = np.zeros((3, 3), np.float32)
    w0[:, 0] = [3.0, 0.1, 2.0]
    p = Parameters(spec, [w0, np.zeros((1, 3), np.float32)], [np.zeros(3, np.float32), np.zeros(1, np.float32)])
    np.testing.assert_allclose(magnitude_importance(p)[0], [3.0, 0.1, 2.0], rtol=1e-7)
    one_channel = layer_flops(3, 1, True) + 2 * 1
    req = request_for(p, count_flops(spec) - one_channel, n=1)
    (scheme,) = propose_schemes(MagnitudeProxy(), req, p)
    assert scheme.removed == ((1,),)


def test_magnitude_hand_example():
    spec = DenoiserSpec(1, (3,), 2)
    w0 = np.array([[1, 2, 2], [0, 0, 0], [0, 3, 4]], np.float32)
    w1 = np.array([[0, 1, 12]], np.float32)
    p = Parameters(spec, [w0, w1], [np.zeros(3, np.float32), np.zeros(1, np.float32)])
    scores = magnitude_importance(p)[0]
    np.testing.assert_allclose(scores, [3.0, 1.0, 17.0], rtol=1e-7)
    assert list(np.argsort(scores)) == [1, 0, 2]


def test_magnitude_homogeneity_and_dead_channel(params):
    doubled = Parameters(params.spec, [2 * w for w in params.weights], params.biases)
    for a, b in zip(magnitude_importance(params), magnitude_importance(doubled)):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-6)
        assert list(np.argsort(a, kind="stable")) == list(np.argsort(b, kind="stable"))
    p = params.copy()
    p.weights[1][4, :] = 0
    p.weights[2][:, 4] = 0
    assert magnitude_importance(p)[1][4] == 0.0


def test_taylor_matches_elementwise_oracle(params):
    b = make_batch(64, 2, 100, 2)
    g = grad(params, b, S)
    scores = taylor_importance(params, b, S)
    for l in range(3):
        for j in range(params.spec.hidden_widths[l]):
            acc = 0.0
            for i in range(params.weights[l].shape[1]):
                acc += abs(float(params.weights[l][j, i]) * float(g.weights[l][j, i]))
            for o in range(params.weights[l + 1].shape[0]):
                acc += abs(float(params.weights[l + 1][o, j]) * float(g.weights[l + 1][o, j]))
            assert scores[l][j] == pytest.approx(acc, rel=1e-6)


def test_taylor_zero_cases(params):
    b = make_batch(16, 2, 100)
    zero_noise = b._replace(eps=np.zeros_like(b.eps))
    zero = Parameters(params.spec, [np.zeros_like(w) for w in params.weights], params.biases)
    assert all(not s.any() for s in taylor_importance(zero, zero_noise, S))
    p = params.copy()
    p.weights[0][3, :] = 0
    p.weights[1][:, 3] = 0
    assert taylor_importance(p, b, S)[0][3] == 0.0


def test_full_budget_allows_empty_scheme(params):
    req = request_for(params, count_flops(params.spec), n=2)
    for scheme in propose_schemes(MagnitudeProxy(), req, params):
        assert scheme.n_removed == 0


@pytest.mark.parametrize("make", [lambda: RandomProxy(5), lambda: MagnitudeProxy(5),
                                  lambda: TaylorProxy(make_batch(32, 2, 100), S, 5)])
def test_heuristic_proxies_deterministic_and_feasible(params, make):
    f = 0.6 * count_flops(params.spec)
    req = request_for(params, f)
    a, b = propose_schemes(make(), req, params), propose_schemes(make(), req, params)
    assert a == b and len(a) == 3
    for s in a:
        assert s.flops(params.spec) <= f


def test_random_proxy_depends_on_seed(params):
    req = request_for(params, 0.6 * count_flops(params.spec))
    assert propose_schemes(RandomProxy(1), req, params) != propose_schemes(RandomProxy(2), req, params)


class FixedProxy(Proxy):
    name = "fixed"

    def __init__(self, schemes):
        self.schemes = schemes

    def propose(self, req, params):
        return list(self.schemes)


def test_over_budget_proposal_is_repaired(params, spec):
    f = 0.5 * count_flops(spec)
    raw = PruningScheme(((0,), (), ()), "fixed")
    (fixed,) = propose_schemes(FixedProxy([raw]), request_for(params, f, n=1), params)
    assert 0 in fixed.removed[0]
    assert fixed.flops(spec) <= f


def test_invalid_and_unrepairable_proposals_dropped(params, spec):
    empty_layer = PruningScheme((tuple(range(16)), (), ()), "fixed")
    out_of_range = PruningScheme(((99,), (), ()), "fixed")
    ok = PruningScheme(((), (), ()), "fixed")
    req = request_for(params, count_flops(spec), n=3)
    assert propose_schemes(FixedProxy([empty_layer, out_of_range, ok]), req, params) == [ok]
    tiny = request_for(params, 10, n=1)
    assert propose_schemes(FixedProxy([ok]), tiny, params) == []


def test_greedy_removal_never_empties_a_layer(spec):
    scores = [np.arange(w, dtype=float) for w in spec.hidden_widths]
    minimum = count_flops(DenoiserSpec(2, (1, 1, 1), 4))
    removed = greedy_removal(spec, scores, minimum)
    assert [len(r) for r in removed] == [15, 11, 9]
    with pytest.raises(UnrepairableSchemeError):
        greedy_removal(spec, scores, minimum - 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 10), min_size=1, max_size=3), st.floats(0.0, 1.2), st.integers(0, 1000))
def test_greedy_removal_meets_limit_or_raises(widths, frac, seed):
    spec = DenoiserSpec(2, tuple(widths), 4)
    rng = np.random.default_rng(seed)
    scores = [rng.random(w) for w in widths]
    f = frac * count_flops(spec)
    try:
        removed = greedy_removal(spec, scores, f)
    except UnrepairableSchemeError:
        assert count_flops(DenoiserSpec(2, (1,) * len(widths), 4)) > f
        return
    assert all(len(r) < w for r, w in zip(removed, widths))
    assert PruningScheme(removed).flops(spec) <= f


def test_scheme_serialization_and_validation(spec):
    s = PruningScheme.from_remove_map({"0": [3, 1, 3], "2": [0]}, 3, "llm", 4)
    assert s.removed == ((1, 3), (), (0,))
    assert s.remove_map() == {"0": [1, 3], "2": [0]}
    s.validate(spec)
    with pytest.raises(ValueError):
        PruningScheme(((), (12,), ())).validate(spec)
    with pytest.raises(ValueError):
        PruningScheme(((),)).validate(spec)


def entry(loss, removed=((1,), (), ()), flops=100, ts=0.0):
    return MemoryBankEntry(PruningScheme(removed, "random", 0), loss, flops, ts)


def test_memory_bank_append_only_and_round_trip(tmp_path):
    path = tmp_path / "bank.jsonl"
    bank = MemoryBank(path=path)
    assert len(memory_bank_update(bank, entry(0.5))) == 1
    bank.update(entry(0.2, ((0,), (), ())))
    bank.update(entry(0.9))
    snapshot = bank.entries
    bank.update(entry(0.1))
    assert bank.entries[:3] == snapshot
    assert MemoryBank.load(path).entries == bank.entries
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert set(lines[0]) == {"round", "proxy", "remove", "layers", "flops", "loss", "timestamp"}
    with pytest.raises(ValueError):
        bank.update(entry(float("nan")))


def test_memory_bank_ranking_ties():
    bank = MemoryBank()
    bank.update(entry(0.3, ((2,), (), ()), flops=90))
    bank.update(entry(0.3, ((1,), (), ()), flops=90))
    bank.update(entry(0.3, ((0,), (), ()), flops=80))
    bank.update(entry(0.1, ((5,), (), ()), flops=99))
    assert [e.scheme.removed[0] for e in bank.ranked()] == [(5,), (0,), (1,), (2,)]


def test_request_requires_sorted_history(spec):
    g = GroupDescriptor((0,), 1.0, 1.0)
    with pytest.raises(ValueError):
        ProxyRequest(spec, 10.0, g, (entry(0.5), entry(0.1)))
    with pytest.raises(ValueError):
        ProxyRequest(spec, 10.0, g, (), 0)


def test_evaluate_scheme_exactness(params, data):
    batches = make_eval_batches(data, GROUP, 3, 64, 0)
    empty = PruningScheme.empty(params.spec)
    from progdiff.pruning import mean_loss
    assert evaluate_scheme(params, empty, GROUP, batches, S) == mean_loss(params, batches, S)
    p = params.copy()
    p.weights[0][[2, 7], :] = 0
    p.weights[1][:, [2, 7]] = 0
    dead = PruningScheme(((2, 7), (), ()))
    assert abs(evaluate_scheme(p, dead, GROUP, batches, S) - evaluate_scheme(p, empty, GROUP, batches, S)) <= 1e-7
    assert evaluate_scheme(params, dead, GROUP, batches, S) == evaluate_scheme(params, dead, GROUP, batches, S)
    with pytest.raises(ValueError):
        evaluate_scheme(params, empty, (0, 1), batches, S)


def test_eval_batches_stay_in_group(data):
    for b in make_eval_batches(data, GROUP, 4, 50, 3):
        assert set(b.t.tolist()) <= set(GROUP)


def test_iterative_prune_single_round(params, data):
    batches = make_eval_batches(data, GROUP, 2, 64, 0)
    f = 0.7 * count_flops(params.spec)
    out = iterative_prune(params, GROUP, f, MagnitudeProxy(), schedule=S, eval_batches=batches, rounds=1, candidates=1)
    (expected,) = propose_schemes(MagnitudeProxy(), request_for(params, f, n=1), params)
    assert out.scheme.removed == expected.removed
    assert out.flops <= f


def test_iterative_prune_random_protocol(params, data, tmp_path):
    batches = make_eval_batches(data, GROUP, 2, 64, 0)
    bank = MemoryBank(path=tmp_path / "b.jsonl")
    out = iterative_prune(params, GROUP, 0.7 * count_flops(params.spec), RandomProxy(3), schedule=S,
                          eval_batches=batches, rounds=5, candidates=3, bank=bank)
    assert len(bank) == 15 and out.failures == 0
    assert all(b >= a for a, b in zip(out.best_per_round[1:], out.best_per_round))
    assert len(out.round_stats()) == 5
    assert out.loss == min(e.loss for e in bank)
    assert len(MemoryBank.load(tmp_path / "b.jsonl")) == 15


class FailingProxy(Proxy):
    name = "failing"

    def propose(self, req, params):
        raise ProxyError("endpoint down")


def test_iterative_prune_falls_back_on_proxy_failure(params, data, caplog):
    batches = make_eval_batches(data, GROUP, 2, 64, 0)
    out = iterative_prune(params, GROUP, 0.7 * count_flops(params.spec), FailingProxy(), schedule=S,
                          eval_batches=batches, rounds=2, candidates=2)
    assert out.scheme.proxy == "magnitude"
    assert "falling back" in caplog.text


def test_iterative_prune_counts_failed_candidates(params, data):
    batches = make_eval_batches(data, GROUP, 2, 64, 0)
    bank = MemoryBank()
    bad = PruningScheme(((99,), (), ()), "fixed")
    good = PruningScheme(((), (), ()), "fixed")
    out = iterative_prune(params, GROUP, count_flops(params.spec), FixedProxy([bad, good]), schedule=S,
                          eval_batches=batches, rounds=3, candidates=2, bank=bank)
    assert out.failures == 3 and len(bank) == 3
    with pytest.raises(ProxyError):
        iterative_prune(params, GROUP, count_flops(params.spec), FixedProxy([bad]), schedule=S,
                        eval_batches=batches, rounds=2, candidates=1)
    with pytest.raises(ValueError):
        iterative_prune(params, GROUP, 1.0, MagnitudeProxy(), schedule=S, eval_batches=batches, rounds=0)


def test_llm_stub_proxy_end_to_end(params, data, tmp_path):
    batches = make_eval_batches(data, GROUP, 2, 64, 0)
    proxy = LLMProxy(StubChatClient(), tmp_path / "prompts")
    f = 0.6 * count_flops(params.spec)
    out = iterative_prune(params, GROUP, f, proxy, schedule=S, eval_batches=batches, rounds=2, candidates=3)
    assert out.flops <= f and out.failures == 0
    files = sorted(p.name for p in (tmp_path / "prompts").iterdir())
    assert "round000_prompt.txt" in files and "round001_cand2_response.txt" in files
    assert "HISTORY\n1. remove=" in (tmp_path / "prompts" / "round001_prompt.txt").read_text()


def test_make_proxy():
    assert isinstance(make_proxy("random", seed=1), RandomProxy)
    assert isinstance(make_proxy("llm", client=StubChatClient()), LLMProxy)
    with pytest.raises(ValueError):
        make_proxy("taylor")
    with pytest.raises(ValueError):
        make_proxy("oracle")
