import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from semiqa.graph import TEXT, RelationPath, reachable_set
from semiqa.llm import ScriptedBackend
from semiqa.planner import (
    FixedPathModel,
    FrequencyPathModel,
    LLMPathModel,
    OraclePathModel,
    PlanTarget,
    UniformRelationModel,
    answer_distribution,
    build_corpus,
    corpus_prompt,
    fit_frequency_model,
    in_context_prompt,
    kl_loss,
    llm_generate_paths,
    make_plan,
    p_semi,
    read_plans,
    semi_distribution,
    target_distribution,
    write_plans,
)
from semiqa.synthetic import AFFILIATED, AWP, random_graph

AWP_PATH = RelationPath([AWP])
AFF_PATH = RelationPath([AFFILIATED])


def target(question, *paths):
    return PlanTarget("q", question, ("A",), tuple(RelationPath(p) for p in paths))


def no_features(question):
    return ()


# ---------------------------------------------------------------- targets


def test_target_single_path(g0):
    t = target_distribution("papers by Ada", {"P1"}, g0, ["A"])
    assert t.paths == (AWP_PATH,) and t.weight == 1.0


def test_target_parallel_relations(parallel_graph):
    t = target_distribution("q", {"B"}, parallel_graph, ["A"])
    assert set(t.paths) == {RelationPath(["r1"]), RelationPath(["r2"])}
    assert t.weights() == {p: Fraction(1, 2) for p in t.paths}


def test_target_unreachable_falls_back_to_text(g0):
    t = target_distribution("q", {"I1"}, g0, ["P1"], max_len=1)
    assert t.paths == (RelationPath.text_only(),)


def test_target_union_keeps_global_minimum(g0):
    # P1 is one hop from A; I1 is also one hop; P2 via sibling would be two from P1
    t = target_distribution("q", {"P1", "I1"}, g0, ["A"])
    assert set(t.paths) == {AWP_PATH, AFF_PATH}
    t = target_distribution("q", {"P2", "I1"}, g0, ["P1"])
    assert all(len(p) == 2 for p in t.paths)


def test_target_requires_seeds_and_gold(g0):
    with pytest.raises(ValueError):
        target_distribution("q", {"P1"}, g0, [])
    with pytest.raises(ValueError):
        target_distribution("q", set(), g0, ["A"])


# ---------------------------------------------------------------- P_semi and marginal


def test_p_semi_g0(g0):
    assert p_semi("P1", AWP_PATH, g0, ["A"]) == 0.5
    assert p_semi("I1", AWP_PATH, g0, ["A"]) == 0.0


def test_p_semi_star(star3):
    spoke = next(iter(star3.relation_set))
    dist = semi_distribution(RelationPath([spoke]), star3, ["C"])
    assert dist == {"L1": pytest.approx(1 / 3), "L2": pytest.approx(1 / 3), "L3": pytest.approx(1 / 3)}
    assert math.fsum(dist.values()) == pytest.approx(1.0)


def test_text_path_uses_retrieved_nodes(g0):
    text = RelationPath.text_only()
    assert semi_distribution(text, g0, ["A"], ["P2", "I1"]) == {"P2": 0.5, "I1": 0.5}
    assert semi_distribution(text, g0, ["A"]) == {}


def test_answer_distribution_examples(g0):
    sure = FixedPathModel({AWP_PATH: 1.0})
    assert answer_distribution("q", g0, sure, ["A"]) == {"P1": 0.5, "P2": 0.5}
    mixed = FixedPathModel({AWP_PATH: 0.8, AFF_PATH: 0.2})
    got = answer_distribution("q", g0, mixed, ["A"])
    assert got == pytest.approx({"P1": 0.4, "P2": 0.4, "I1": 0.2}, abs=1e-12)
    dead = FixedPathModel({RelationPath([AWP, AWP]): 1.0})
    assert answer_distribution("q", g0, dead, ["A"]) == {}


def test_answer_distribution_truncates_and_renormalizes(g0):
    model = FixedPathModel({AWP_PATH: 0.5, AFF_PATH: 0.3, RelationPath([AWP, AWP]): 0.2})
    got = answer_distribution("q", g0, model, ["A"], n_paths=1)
    assert got == {"P1": 0.5, "P2": 0.5}
    with pytest.raises(ValueError):
        answer_distribution("q", g0, model, ["A"], n_paths=0)


# ---------------------------------------------------------------- KL objective


def test_kl_examples():
    assert kl_loss(FixedPathModel({AWP_PATH: 0.5, AFF_PATH: 0.5}), [target("q", [AWP])]) == pytest.approx(math.log(2))
    assert kl_loss(FixedPathModel({AWP_PATH: 1.0}), [target("q", [AWP])]) == 0.0
    two = target("q", [AWP], [AFFILIATED])
    quarter = FixedPathModel({AWP_PATH: 0.25, AFF_PATH: 0.25, RelationPath(["x"]): 0.5})
    assert kl_loss(quarter, [two]) == pytest.approx(math.log(4))


def test_kl_infinite_on_zero_probability():
    assert kl_loss(FixedPathModel({AFF_PATH: 1.0}), [target("q", [AWP])]) == math.inf


def test_oracle_model_is_optimal(g0):
    targets = [target("one", [AWP]), target("two", [AWP], [AFFILIATED])]
    oracle = OraclePathModel(targets)
    assert kl_loss(oracle, targets) == pytest.approx((0 + math.log(2)) / 2)
    for p in (0.3, 0.5, 0.7, 0.9):
        other = FixedPathModel({AWP_PATH: p, AFF_PATH: 1 - p})
        assert kl_loss(other, targets) >= kl_loss(oracle, targets) - 1e-12


# ---------------------------------------------------------------- frequency model


def test_frequency_model_single_path_closed_form(g0):
    eps = 0.01
    corpus = build_corpus([target(f"question {i}", [AWP]) for i in range(3)])
    model = fit_frequency_model(corpus, g0, featurizer=no_features, smoothing=eps)
    n = len(corpus)
    # five options at each step: four directed relations plus text / stop
    expected = ((n + eps) / (n + 5 * eps)) ** 2
    assert math.exp(model.log_prob(AWP_PATH, "anything")) == pytest.approx(expected)
    assert expected >= 0.9
    top, score = model.generate("anything", 1)[0]
    assert top == AWP_PATH and score >= 0.9


def test_frequency_model_majority():
    targets = [target(f"q{i}", ["r_major"]) for i in range(3)] + [target("q3", ["r_minor"])]
    model = fit_frequency_model(build_corpus(targets), ["r_major", "r_minor"], featurizer=no_features)
    assert model.generate("new question", 1)[0][0] == RelationPath(["r_major"])


def test_single_relation_schema():
    model = fit_frequency_model(build_corpus([target("q", ["only"])]), ["only"], featurizer=no_features, max_len=1)
    (path, score), = model.generate("q", 1)
    assert path == RelationPath(["only"])
    # the only competing first token is the text path
    assert score == pytest.approx((1 + 0.01) / (1 + 2 * 0.01))
    assert score < 1.0


def test_frequency_model_uses_question_features():
    targets = [target("who wrote the paper", ["writes"])] * 5 + [target("where is the institute", ["located"])] * 5
    model = fit_frequency_model(build_corpus(targets), ["writes", "located"])
    assert model.generate("who wrote this", 1)[0][0] == RelationPath(["writes"])
    assert model.generate("where is it", 1)[0][0] == RelationPath(["located"])


def test_frequency_model_save_load(tmp_path):
    model = fit_frequency_model(build_corpus([target("who wrote it", ["writes"])]), ["writes", "other"])
    model.save(tmp_path / "m.json")
    again = FrequencyPathModel.load(tmp_path / "m.json")
    assert again.log_prob(RelationPath(["writes"]), "who wrote") == model.log_prob(RelationPath(["writes"]), "who wrote")


def test_frequency_beats_uniform(g0):
    targets = [target_distribution(f"papers by Ada {i}", {"P1"}, g0, ["A"]) for i in range(5)]
    corpus = build_corpus(targets)
    fitted = fit_frequency_model(corpus, g0)
    uniform = UniformRelationModel(g0.path_vocabulary)
    assert kl_loss(fitted, targets) <= kl_loss(uniform, targets)


def test_fit_rejects_empty_corpus():
    with pytest.raises(ValueError):
        fit_frequency_model([], ["r"])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_stepwise_probabilities_normalized(seed, max_len):
    rng = random.Random(seed)
    vocab = [f"r{i}" for i in range(rng.randint(1, 3))]
    corpus = build_corpus([target(f"q {rng.random()}", [rng.choice(vocab) for _ in range(rng.randint(1, max_len))]) for _ in range(5)])
    model = fit_frequency_model(corpus, vocab, featurizer=no_features, max_len=max_len)
    # enumerate every path the model can emit
    paths = [(TEXT,)]
    frontier = [()]
    for _ in range(max_len):
        frontier = [p + (r,) for p in frontier for r in vocab]
        paths.extend(frontier)
    total = math.fsum(math.exp(model.log_prob(RelationPath(p), "x")) for p in paths)
    assert total == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- properties on random graphs


graphs = st.builds(lambda seed: random_graph(random.Random(seed), 15, 3, 35), st.integers(0, 10_000))


@settings(max_examples=50, deadline=None)
@given(graphs, st.data())
def test_p_semi_normalized(g, data):
    seeds = data.draw(st.lists(st.sampled_from(sorted(g.nodes)), min_size=1, max_size=3))
    path = RelationPath(data.draw(st.lists(st.sampled_from(g.path_vocabulary), min_size=1, max_size=3)))
    reached = reachable_set(g, seeds, path)
    total = math.fsum(p_semi(a, path, g, seeds) for a in g.nodes)
    assert total == pytest.approx(1.0 if reached else 0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(graphs, st.data())
def test_target_weights_exact(g, data):
    ids = sorted(g.nodes)
    seeds = data.draw(st.lists(st.sampled_from(ids), min_size=1, max_size=2))
    gold = data.draw(st.lists(st.sampled_from(ids), min_size=1, max_size=3))
    t = target_distribution("q", gold, g, seeds)
    assert sum(t.weights().values()) == 1
    assert len({len(p) for p in t.paths}) == 1


@settings(max_examples=30, deadline=None)
@given(graphs, st.data())
def test_kl_equals_mean_negative_log_prob(g, data):
    ids = sorted(g.nodes)
    targets = []
    for i in range(3):
        seeds = data.draw(st.lists(st.sampled_from(ids), min_size=1, max_size=2))
        gold = data.draw(st.lists(st.sampled_from(ids), min_size=1, max_size=2))
        targets.append(target_distribution(f"question {i}", gold, g, seeds, question_id=str(i)))
    model = fit_frequency_model(build_corpus(targets), g)
    direct = -math.fsum(
        float(w) * model.log_prob(z, t.question) for t in targets for z, w in t.weights().items()
    ) / len(targets)
    assert kl_loss(model, targets) == pytest.approx(direct, abs=1e-12)


# ---------------------------------------------------------------- LLM generation and plans


def test_llm_generate_paths():
    out = llm_generate_paths("q", ScriptedBackend(default_response=f"<PATH> {AWP} </PATH>"))
    assert out.paths == [(AWP_PATH, 1.0)]
    prose = llm_generate_paths("q", ScriptedBackend(default_response="I am not sure."))
    assert prose.paths == [] and prose.raw == "I am not sure." and prose.diagnostics


def test_llm_generate_paths_filters_unknown_relations(g0):
    reply = f"<PATH> {AWP} </PATH> or <PATH> madeup </PATH>"
    out = llm_generate_paths("q", ScriptedBackend(default_response=reply), schema=g0)
    assert out.paths == [(AWP_PATH, 1.0)]
    assert any("madeup" in d for d in out.diagnostics)


def test_in_context_prompt_layout():
    shots = [("Who wrote X", AWP_PATH), ("Where does Ada work", AFF_PATH)]
    lines = in_context_prompt("Papers by Ada", shots).split("\n")
    assert len(lines) == 4
    assert lines[0].startswith("Please generate a valid relation path") and lines[0].endswith("Examples are listed below:")
    assert lines[1] == f"<Question 1> Who wrote X: <PATH> {AWP} </PATH>"
    assert lines[2] == f"<Question 2> Where does Ada work: <PATH> {AFFILIATED} </PATH>"
    assert lines[3] == "<Question> Papers by Ada:"
    assert in_context_prompt("Papers by Ada") == corpus_prompt("Papers by Ada")


def test_llm_path_model_plan():
    backend = ScriptedBackend(default_response=f"<PATH> {AWP} </PATH>\n<PATH> {AFFILIATED} </PATH>")
    plan = make_plan("q", ["A"], LLMPathModel(backend), n_paths=3)
    assert plan.paths == ((AWP_PATH, 0.5), (AFF_PATH, 0.5))


def test_plan_cache_round_trip(tmp_path):
    plan = make_plan("q", ["A"], FixedPathModel({AWP_PATH: 0.7, AFF_PATH: 0.3}), 2)
    write_plans([("q1", plan)], tmp_path / "plans.jsonl")
    assert read_plans(tmp_path / "plans.jsonl") == {"q1": plan}
    scores = [s for _, s in plan.paths]
    assert scores == sorted(scores, reverse=True)
