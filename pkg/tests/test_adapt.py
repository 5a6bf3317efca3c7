import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp
from scipy.stats import norm

from causal_mine.adapt import (
    AddGatedExogenous,
    AdjustGaussianParams,
    AdjustLinearWeight,
    DataBatch,
    ModelBelief,
    ModelHypothesis,
    RemoveAddedVariable,
    adapt_step,
    apply_edit,
    gen_alt_scms,
    map_hypothesis,
    map_model,
    write_snapshot,
)
from causal_mine.errors import EmptyBatch, EmptyBelief, ValidationError
from causal_mine.scm import Add, Categorical, Const, Gaussian, Linear, Noise, Parent, Scm, build, sample, var


def gaussian_model(mean, variance=1.0):
    return build(var("X", dist=Gaussian(mean, variance)))


def force_model(sigma=0.1):
    """Propeller force plus sensor noise; the gust gate is observed."""
    return build(
        var("F_prop", dist=Gaussian(1.0, 0.04)),
        var("G", dist=Categorical((0.5, 0.5))),
        var("F_total", ["F_prop"], Add(Parent(0), Noise()), dist=Gaussian(0.0, sigma**2)),
    )


def gust_rule(means=(2.0,), variances=(0.25,)):
    return AddGatedExogenous("F_total", "G", means, variances)


def oracle_posterior(means, variances, prior, batches):
    """Posterior over fixed 1-d Gaussian hypotheses by direct summation."""
    logw = np.log(np.asarray(prior, float))
    for batch in batches:
        logw = logw + np.array([norm.logpdf(batch, m, math.sqrt(v)).sum() for m, v in zip(means, variances)])
    return logw - logsumexp(logw)


# -- gen_alt_scms -------------------------------------------------------------


def test_gated_gust_edit_builds_the_sum_variable():
    belief = ModelBelief.initial(build(var("F_prop", mechanism=Const(1.0)), var("G", mechanism=Const(1.0)), var("F_total", ["F_prop"], Parent(0))))
    [h] = gen_alt_scms(belief, [gust_rule()], np.random.default_rng(0))
    w = h.scm.var("F_total_gust1")
    assert h.scm.exo(w.noise).dist == Gaussian(2.0, 0.25)
    assert h.scm.var("F_total").parents == ("F_prop", "G", "F_total_gust1")
    assert h.log_weight == pytest.approx(math.log(0.01))
    draw = sample(h.scm, np.random.default_rng(1))
    assert draw["F_total"] == pytest.approx(1.0 + draw["F_total_gust1"])


def test_zero_budget_proposes_nothing():
    belief = ModelBelief.initial(force_model())
    assert gen_alt_scms(belief, [gust_rule()], np.random.default_rng(0), max_new=0) == []


def test_identity_proposals_are_suppressed():
    base = build(var("A", dist=Gaussian(0, 1)), var("B", ["A"], Linear((2.0,), 1.0)))
    belief = ModelBelief.initial(base)
    out = gen_alt_scms(belief, [AdjustLinearWeight("B", 0, (0.0, 0.5)), AdjustGaussianParams("U_A", (0.0,), (1.0,))], np.random.default_rng(0))
    assert [h.provenance[-1]["delta"] for h in out] == [0.5]


def test_proposal_cap_is_seeded():
    belief = ModelBelief.initial(force_model())
    rule = gust_rule(means=(1.0, 2.0, 3.0), variances=(0.25, 1.0))
    a = gen_alt_scms(belief, [rule], np.random.default_rng(4), max_new=3)
    b = gen_alt_scms(belief, [rule], np.random.default_rng(4), max_new=3)
    assert len(a) == 3 and [h.provenance for h in a] == [h.provenance for h in b]


def test_remove_rule_restores_the_base_fingerprint():
    base = force_model()
    belief = ModelBelief.initial(base)
    [h] = gen_alt_scms(belief, [gust_rule()], np.random.default_rng(0))
    grown = ModelBelief([h], 2, base)
    [back] = gen_alt_scms(grown, [RemoveAddedVariable()], np.random.default_rng(0))
    assert back.provenance == () and back.scm.fingerprint == base.fingerprint


def test_invalid_edits_raise():
    with pytest.raises(ValidationError):
        apply_edit(gaussian_model(0.0), {"kind": "adjust_weight", "target": "X", "index": 0, "delta": 1.0})
    with pytest.raises(ValidationError):
        apply_edit(force_model(), {"kind": "add_gated_exogenous", "target": "F_total", "gate": "G", "mean": 1.0, "variance": -1.0})


# -- adapt_step ---------------------------------------------------------------


def test_two_gaussian_posterior():
    belief = ModelBelief.from_models([gaussian_model(0.0), gaussian_model(1.0)])
    out = adapt_step(belief, DataBatch([{"X": 1.0}]), [], np.random.default_rng(0))
    assert out.weights.tolist() == pytest.approx([1 - 1 / (1 + math.exp(-0.5)), 1 / (1 + math.exp(-0.5))], abs=1e-9)
    assert out.weights[1] == pytest.approx(0.6225, abs=1e-4)
    assert out.t == 1


def test_single_hypothesis_keeps_unit_weight():
    belief = ModelBelief.initial(gaussian_model(0.0))
    out = adapt_step(belief, DataBatch([{"X": 0.3}, {"X": -1.2}]), [], np.random.default_rng(0))
    assert out.weights.tolist() == [1.0]


def test_capacity_one_keeps_the_winner():
    # equal priors; one record at x gives posteriors 0.6 / 0.4 when exp(x - 0.5) = 1.5
    x = 0.5 + math.log(1.5)
    belief = ModelBelief([ModelHypothesis(gaussian_model(0.0), math.log(0.5)), ModelHypothesis(gaussian_model(1.0), math.log(0.5))], 1, gaussian_model(0.0))
    out = adapt_step(belief, DataBatch([{"X": x}]), [], np.random.default_rng(0))
    assert len(out.hypotheses) == 1
    assert out.hypotheses[0].scm.exo("U_X").dist.mean == 1.0
    assert out.weights.tolist() == [1.0]


def test_errors_for_empty_inputs():
    belief = ModelBelief.initial(gaussian_model(0.0))
    with pytest.raises(EmptyBatch):
        adapt_step(belief, DataBatch([]), [], np.random.default_rng(0))
    with pytest.raises(EmptyBelief):
        adapt_step(ModelBelief([], 2, gaussian_model(0.0)), DataBatch([{"X": 0.0}]), [], np.random.default_rng(0))
    with pytest.raises(EmptyBelief):
        map_model(ModelBelief([], 2, gaussian_model(0.0)))
    with pytest.raises(ValidationError):
        DataBatch([{"X": 0.0}, {"Y": 1.0}])
    with pytest.raises(ValidationError):
        ModelBelief.initial(gaussian_model(0.0), capacity=0)


def test_impossible_batch_leaves_belief_and_warns():
    coin = build(var("X", dist=Categorical((0.5, 0.5))))
    belief = ModelBelief.initial(coin)
    out = adapt_step(belief, DataBatch([{"X": 5.0}]), [], np.random.default_rng(0))
    assert out.hypotheses == belief.hypotheses and out.t == belief.t
    assert len(out.warnings) == 1 and "zero likelihood" in out.warnings[0]


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.integers(1, 4), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_step_keeps_belief_normalized_and_bounded(xs, capacity, seed):
    belief = ModelBelief([ModelHypothesis(gaussian_model(0.0), 0.0)], capacity, gaussian_model(0.0))
    rules = [AdjustGaussianParams("U_X", (-1.0, 1.0, 2.0), (1.0, 0.5))]
    rng = np.random.default_rng(seed)
    for x in xs:
        belief = adapt_step(belief, DataBatch([{"X": x}]), rules, rng)
        assert len(belief.hypotheses) <= capacity
        assert abs(math.fsum(belief.weights) - 1.0) <= 1e-9
        best = map_model(belief)
        assert Scm(best.exogenous, best.endogenous, best.labels) == best


@given(st.integers(2, 5), st.integers(1, 20), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_fixed_hypotheses_match_brute_force_bayes(k, n_batches, seed):
    rng = np.random.default_rng(seed)
    means = rng.normal(0, 2, size=k)
    variances = rng.uniform(0.3, 3.0, size=k)
    prior = rng.dirichlet(np.ones(k))
    batches = [rng.normal(0.5, 1.5, size=int(rng.integers(1, 4))) for _ in range(n_batches)]
    belief = ModelBelief.from_models([gaussian_model(m, v) for m, v in zip(means, variances)], prior)
    for b in batches:
        belief = adapt_step(belief, DataBatch([{"X": x} for x in b]), [], rng)
    expected = oracle_posterior(means, variances, prior, batches)
    assert np.allclose(belief.log_weights, expected, atol=1e-6)


def test_data_from_one_model_concentrates_on_it():
    means, variances, prior = [0.0, 0.7, 1.4], [1.0, 1.0, 1.0], [1 / 3] * 3
    rng = np.random.default_rng(11)
    batches = [rng.normal(0.7, 1.0, size=5) for _ in range(60)]
    needed = next(t + 1 for t in range(60) if np.exp(oracle_posterior(means, variances, prior, batches[: t + 1]))[1] >= 0.9)
    belief = ModelBelief.from_models([gaussian_model(m, v) for m, v in zip(means, variances)], prior)
    for b in batches[:needed]:
        belief = adapt_step(belief, DataBatch([{"X": x} for x in b]), [], rng)
    assert belief.weights[1] >= 0.9


def test_uninformative_records_keep_the_argmax():
    # X = 0.5 is equally likely under N(0,1) and N(1,1)
    belief = ModelBelief.from_models([gaussian_model(0.0), gaussian_model(1.0)], [0.3, 0.7])
    before = map_model(belief)
    out = adapt_step(belief, DataBatch([{"X": 0.5}] * 4), [], np.random.default_rng(0))
    assert map_model(out) is before
    assert out.weights.tolist() == pytest.approx([0.3, 0.7], abs=1e-12)


def test_parallel_scoring_matches_sequential():
    belief = ModelBelief.initial(force_model(), capacity=3)
    rng_records = np.random.default_rng(2)
    batch = DataBatch([{"F_prop": 1.0, "G": 1.0, "F_total": 3.0 + 0.1 * rng_records.normal()} for _ in range(5)])
    rule = gust_rule(means=(1.0, 2.0, 3.0), variances=(0.25, 1.0))
    seq = adapt_step(belief, batch, [rule], np.random.default_rng(7), n_samples=200)
    par = adapt_step(belief, batch, [rule], np.random.default_rng(7), n_samples=200, workers=3)
    assert [h.scm.fingerprint for h in seq.hypotheses] == [h.scm.fingerprint for h in par.hypotheses]
    assert seq.log_weights.tolist() == par.log_weights.tolist()


def test_gust_hypothesis_takes_over_after_onset():
    rng = np.random.default_rng(3)
    belief = ModelBelief.initial(force_model(), capacity=4)
    rule = gust_rule(means=(1.0, 2.0, 3.0), variances=(0.25, 1.0))

    def batch(gust):
        recs = []
        for _ in range(20):
            fp = rng.normal(1.0, 0.2)
            g = float(rng.random() < 0.5)
            w = rng.normal(2.0, 0.5) if gust and g else 0.0
            recs.append({"F_prop": fp, "G": g, "F_total": fp + w + rng.normal(0, 0.1)})
        return DataBatch(recs)

    for _ in range(3):
        belief = adapt_step(belief, batch(False), [rule], rng, n_samples=200)
    assert map_hypothesis(belief).n_edits == 0
    for _ in range(3):
        belief = adapt_step(belief, batch(True), [rule], rng, n_samples=200)
    gust_mass = sum(w for h, w in zip(belief.hypotheses, belief.weights) if h.n_edits)
    assert gust_mass >= 0.9
    assert map_hypothesis(belief).provenance[0]["mean"] > 0


# -- map_model ----------------------------------------------------------------


def test_map_model_argmax_and_occam():
    a, b = gaussian_model(0.0), gaussian_model(1.0)
    belief = ModelBelief([ModelHypothesis(a, math.log(0.7)), ModelHypothesis(b, math.log(0.3))], 2, a)
    assert map_model(belief) is a
    edited = ModelHypothesis(b, math.log(0.5), ({"kind": "adjust_gaussian", "target": "U_X", "mean": 1.0, "variance": 1.0},))
    tied = ModelBelief([edited, ModelHypothesis(a, math.log(0.5))], 2, a)
    assert map_model(tied) is a
    assert map_model(ModelBelief.initial(b)) is b


def test_map_model_declaration_order_breaks_remaining_ties():
    a, b = gaussian_model(0.0), gaussian_model(1.0)
    belief = ModelBelief([ModelHypothesis(b, math.log(0.5)), ModelHypothesis(a, math.log(0.5))], 2, a)
    assert map_model(belief) is b


# -- snapshots ----------------------------------------------------------------


def test_snapshot_file(tmp_path):
    belief = adapt_step(ModelBelief.initial(force_model()), DataBatch([{"F_prop": 1.0, "G": 0.0, "F_total": 1.0}]), [gust_rule()], np.random.default_rng(0), n_samples=50)
    path = write_snapshot(belief, str(tmp_path))
    assert os.path.basename(path) == "belief_t1.json"
    data = json.loads(open(path).read())
    assert sum(h["weight"] for h in data["hypotheses"]) == pytest.approx(1.0, abs=1e-9)
    assert {"id", "log_weight", "provenance", "scm"} <= set(data["hypotheses"][0])
