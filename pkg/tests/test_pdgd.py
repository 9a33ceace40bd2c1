import math

import numpy as np
import pytest

from foltr.clicks import builtin_model
from foltr.data import Dataset, QueryGroup
from foltr.metrics import offline_eval
from foltr.models import ModelSpec, init_params, score_batch
from foltr.pdgd import (
    Interaction,
    PreferencePair,
    client_update,
    infer_preferences,
    pair_gradient,
    pair_weight,
    pair_weights_from_scores,
    pdgd_update,
    plackett_luce_log_prob,
    sample_from_scores,
    sample_serp,
)
from foltr.synthetic import separable_dataset


def pl_prob_bruteforce(scores, ranking):
    # product of per-slot softmax probabilities over the docs not yet placed
    remaining = list(range(len(scores)))
    p = 1.0
    for d in ranking:
        denom = sum(math.exp(scores[e]) for e in remaining)
        p *= math.exp(scores[d]) / denom
        remaining.remove(d)
    return p


def test_uniform_scores_give_uniform_permutations():
    rng = np.random.default_rng(0)
    counts = {}
    trials = 100_000
    for _ in range(trials):
        key = tuple(sample_from_scores(np.zeros(3), 3, rng).tolist())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    for c in counts.values():
        assert abs(c / trials - 1 / 6) <= 0.01


def test_extreme_scores_are_deterministic(rng):
    for _ in range(100):
        assert sample_from_scores(np.array([1000.0, -1000.0]), 2, rng).tolist() == [0, 1]


def test_closed_form_first_slot_probability():
    rng = np.random.default_rng(1)
    trials = 100_000
    first = sum(sample_from_scores(np.array([math.log(2), 0.0]), 2, rng)[0] == 0 for _ in range(trials))
    assert abs(first / trials - 2 / 3) <= 0.01


def test_sampling_rejects_non_finite(rng):
    with pytest.raises(ValueError):
        sample_from_scores(np.array([0.0, np.nan]), 2, rng)


def test_serp_validity(small_synthetic, rng):
    spec = ModelSpec("linear", small_synthetic.feature_dim)
    for q in small_synthetic.queries[:10]:
        for k in (1, 5, 10, 20):
            serp = sample_serp(spec, rng.normal(size=spec.n_params), q, k, rng)
            assert len(serp) == min(k, len(q))
            assert len(set(serp.tolist())) == len(serp)


def _pairs(clicks, displayed=None):
    displayed = list(range(len(clicks))) if displayed is None else displayed
    return [(p.preferred, p.dispreferred) for p in infer_preferences(Interaction("q", np.array(displayed), np.array(clicks)))]


def test_preference_inference_rule():
    assert _pairs([0, 1, 0]) == [(1, 0), (1, 2)]
    assert _pairs([0, 0, 0]) == []
    assert _pairs([1, 1]) == []
    # second click also beats the unclicked doc above it, but not docs above the first click's skip
    assert _pairs([1, 0, 1, 0, 0]) == [(0, 3), (2, 1), (2, 3)]
    assert _pairs([0, 1, 0], displayed=[7, 3, 5]) == [(3, 7), (3, 5)]


def test_preference_pair_rejects_self():
    with pytest.raises(ValueError):
        PreferencePair(1, 1)


def test_pair_weight_equal_scores():
    scores = np.zeros(6)
    serp = np.array([3, 1, 0, 5])
    w = pair_weights_from_scores(scores, serp, [PreferencePair(1, 3), PreferencePair(5, 3)])
    np.testing.assert_array_equal(w, [0.5, 0.5])


@pytest.mark.parametrize("s1, s2", [(0.3, -1.2), (2.0, 2.0), (-5.0, 4.0)])
def test_pair_weight_two_docs_closed_form(s1, s2):
    scores = np.array([s1, s2])
    p_r = math.exp(s1) / (math.exp(s1) + math.exp(s2))
    p_swap = math.exp(s2) / (math.exp(s1) + math.exp(s2))
    rho = pair_weights_from_scores(scores, [0, 1], [PreferencePair(1, 0)])[0]
    assert rho == pytest.approx(p_swap / (p_r + p_swap), abs=1e-14)


def test_pair_weight_matches_bruteforce(rng):
    for _ in range(50):
        scores = rng.normal(scale=2.0, size=7)
        serp = rng.permutation(7)[:5]
        a, b = rng.choice(5, size=2, replace=False)
        pair = PreferencePair(int(serp[a]), int(serp[b]))
        swapped = serp.copy()
        swapped[a], swapped[b] = serp[b], serp[a]
        p, p_star = pl_prob_bruteforce(scores, serp), pl_prob_bruteforce(scores, swapped)
        rho = pair_weights_from_scores(scores, serp, [pair])[0]
        assert rho == pytest.approx(p_star / (p + p_star), rel=1e-10)
        assert 0.0 < rho < 1.0
        assert math.exp(plackett_luce_log_prob(scores, serp)) == pytest.approx(p, rel=1e-10)


def test_pair_weight_through_model(small_synthetic, rng):
    spec = ModelSpec("linear", small_synthetic.feature_dim)
    q = small_synthetic.queries[0]
    params = rng.normal(size=spec.n_params)
    serp = np.array([4, 2, 7])
    direct = pair_weight(spec, params, q, serp, PreferencePair(7, 4))
    scores = score_batch(spec, params, q.features)
    assert direct == pytest.approx(pair_weights_from_scores(scores, serp, [PreferencePair(7, 4)])[0])


def _central_diff(f, theta, h=1e-6):
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


@pytest.mark.parametrize("kind", ["linear", "neural"])
def test_pair_gradient_finite_differences(kind, rng):
    spec = ModelSpec(kind, 4, 6)
    for _ in range(100):
        params = rng.normal(size=spec.n_params)
        xp, xd = rng.normal(size=4), rng.normal(size=4)

        def objective(t):
            s = score_batch(spec, t, np.vstack([xp, xd]))
            return math.exp(s[0]) / (math.exp(s[0]) + math.exp(s[1]))

        fd = _central_diff(objective, params)
        grad = pair_gradient(spec, params, xp, xd)
        assert np.all(np.abs(grad - fd) <= np.maximum(1e-5, 1e-4 * np.abs(fd)))


def test_zero_click_session_is_noop(rng):
    spec = ModelSpec("linear", 2)
    q = QueryGroup("z", rng.normal(size=(5, 2)), [0] * 5)
    params = rng.normal(size=2)
    new, inter = pdgd_update(spec, params, q, builtin_model("perfect", 5), 0.1, rng)
    assert not inter.clicks.any()
    np.testing.assert_array_equal(new, params)


def test_single_pair_linear_update(rng):
    spec = ModelSpec("linear", 3)
    x = np.array([[1.0, 0.5, -0.2], [0.1, 0.4, 0.9]])
    q = QueryGroup("p", x, [4, 0])
    params = np.array([0.3, -0.1, 0.2])
    eta = 0.1
    for _ in range(10):
        new, inter = pdgd_update(spec, params, q, builtin_model("perfect", 5), eta, rng)
        s = x @ params
        # two docs: the displayed order and its swap are the only rankings
        e = np.exp(s)
        p_shown = e[inter.displayed[0]] / e.sum()
        p_swap = e[inter.displayed[1]] / e.sum()
        rho = p_swap / (p_shown + p_swap)
        sig = 1 / (1 + math.exp(-(s[0] - s[1])))
        expected = params + eta * rho * sig * (1 - sig) * (x[0] - x[1])
        np.testing.assert_allclose(new, expected, rtol=1e-12, atol=1e-15)


def test_update_norm_bound(small_synthetic, rng):
    spec = ModelSpec("neural", small_synthetic.feature_dim, 8)
    params = init_params(spec, 1)
    model = builtin_model("informational", 5)
    for q in small_synthetic.queries[:20]:
        r = np.random.default_rng(rng.integers(1 << 30))
        new, inter = pdgd_update(spec, params, q, model, 0.1, np.random.default_rng(r.integers(1 << 30)))
        pairs = infer_preferences(inter)
        assert np.all(np.isfinite(new))
        if not pairs:
            continue
        scores = score_batch(spec, params, q.features)
        rho = pair_weights_from_scores(scores, inter.displayed, pairs)
        bound = 0.1 * sum(
            w * np.linalg.norm(pair_gradient(spec, params, q.features[p.preferred], q.features[p.dispreferred]))
            for w, p in zip(rho, pairs)
        )
        assert np.linalg.norm(new - params) <= bound + 1e-12


def test_eta_must_be_positive(small_synthetic, rng):
    spec = ModelSpec("linear", 5)
    with pytest.raises(ValueError):
        pdgd_update(spec, np.zeros(5), small_synthetic.queries[0], builtin_model("perfect", 5), 0.0, rng)


def test_client_update_contract(small_synthetic):
    spec = ModelSpec("linear", 5)
    model = builtin_model("perfect", 5)
    with pytest.raises(ValueError):
        client_update(spec, np.zeros(5), small_synthetic, model, 0, 0.1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        client_update(spec, np.zeros(5), Dataset((), 5, 5), model, 1, 0.1, np.random.default_rng(0))
    one = client_update(spec, np.zeros(5), small_synthetic, model, 1, 0.1, np.random.default_rng(0))
    assert one.n_interactions == 1 and len(one.interactions) == 1


def test_client_update_deterministic(small_synthetic):
    spec = ModelSpec("neural", 5, 4)
    model = builtin_model("navigational", 5)
    runs = [
        client_update(spec, init_params(spec, 0), small_synthetic, model, 5, 0.1, np.random.default_rng(42))
        for _ in range(2)
    ]
    assert runs[0].params.tobytes() == runs[1].params.tobytes()


def test_client_update_learns_separable_data():
    ds = separable_dataset(n_queries=30, docs_per_query=10, n_features=2, seed=11)
    spec = ModelSpec("linear", 2)
    params = init_params(spec)
    before = offline_eval(spec, params, ds)
    rng = np.random.default_rng(5)
    model = builtin_model("perfect", 5)
    for _ in range(200):
        params = client_update(spec, params, ds, model, 1, 0.1, rng).params
    assert offline_eval(spec, params, ds) > before
