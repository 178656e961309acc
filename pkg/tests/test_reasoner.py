import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nesy import errors, oracle
from nesy.lang import load
from nesy.provenance import ADDMULT, BOOLEAN, MAXMIN, TOPK, TOPK_GRAD, SemiringSpec
from nesy.reasoner import EvalContext, Reasoner, evaluate, query, seed_facts
from nesy.tasks import mnist_sum

from helpers import random_program

EXACT = SemiringSpec(TOPK_GRAD, None)
PATH = """
rel edge(int, int).
rel path(int, int).
edge(0, 1). edge(1, 2). edge(2, 3).
path(X, Y) :- edge(X, Y).
path(X, Z) :- path(X, Y), edge(Y, Z).
query path(X, Y).
"""


def one_hot(i, n=10):
    v = np.zeros(n)
    v[i] = 1.0
    return v


@pytest.fixture(scope="module")
def mnist():
    return mnist_sum.program()


def test_transitive_closure_boolean():
    ctx = Reasoner(load(PATH), SemiringSpec(BOOLEAN)).run()
    rows = query(ctx, "path")
    assert [r.tuple for r in rows] == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert all(r.probability == 1.0 for r in rows)
    assert ctx.stats.iterations <= 4


def test_seed_one_hot(mnist):
    ctx = EvalContext(mnist, EXACT)
    seed_facts(ctx, {"digit_a": one_hot(3), "digit_b": one_hot(5)})
    assert ctx.weights.probs[0] == [1.0 if i == 3 else 0.0 for i in range(10)]
    rows = query(ctx, "sum2")
    assert [(r.tuple, r.probability) for r in rows] == [((8,), 1.0)]


def test_seed_renormalizes(mnist):
    vec = np.full(10, 0.098)
    ctx = EvalContext(mnist, EXACT)
    seed_facts(ctx, {"digit_a": vec, "digit_b": np.full(10, 0.1)})
    assert sum(ctx.weights.probs[0]) == pytest.approx(1.0, abs=1e-12)
    assert ctx.renormalized[0] == pytest.approx(0.98)


def test_seed_small_deviation_kept(mnist):
    vec = np.full(10, 0.1)
    vec[0] += 5e-7
    ctx = EvalContext(mnist, EXACT)
    seed_facts(ctx, {"digit_a": vec, "digit_b": np.full(10, 0.1)})
    assert 0 not in ctx.renormalized


def test_seed_errors(mnist):
    with pytest.raises(errors.MissingHead):
        Reasoner(mnist, EXACT).run({"digit_a": np.full(10, 0.1)})
    with pytest.raises(errors.IndexOutOfRange):
        Reasoner(mnist, EXACT).run({"digit_a": np.full(5, 0.2), "digit_b": np.full(10, 0.1)})
    bad = np.full(10, 0.1)
    bad[2] = -0.1
    with pytest.raises(errors.NegativeProbability):
        Reasoner(mnist, EXACT).run({"digit_a": bad, "digit_b": np.full(10, 0.1)})


def test_boolean_tag_threshold():
    vp = load("rel a(). rel b(). 0.6::a(). 0.5::b(). query a(). query b().")
    ctx = Reasoner(vp, SemiringSpec(BOOLEAN)).run()
    assert [r.probability for r in query(ctx, "a")] == [1.0]
    assert query(ctx, "b") == []


def test_mnist_uniform(mnist):
    uniform = np.full(10, 0.1)
    ctx = Reasoner(mnist, EXACT).run({"digit_a": uniform, "digit_b": uniform})
    rows = query(ctx, "sum2")
    assert [r.tuple[0] for r in rows] == list(range(19))
    probs = {r.tuple[0]: r.probability for r in rows}
    assert probs[9] == pytest.approx(0.1, abs=1e-12)
    assert probs[0] == pytest.approx(0.01, abs=1e-12)
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)


def test_query_empty_relation():
    vp = load("rel e(int). rel f(int). f(X) :- e(X). query f(X).")
    assert query(Reasoner(vp, EXACT).run(), "f") == []


def test_query_unknown():
    ctx = Reasoner(load(PATH), EXACT).run()
    with pytest.raises(errors.UnknownQuery):
        query(ctx, "nothing")


def test_query_constant_positions():
    vp = load(PATH.replace("query path(X, Y).", "query path(0, Y)."))
    rows = query(Reasoner(vp, EXACT).run(), "path")
    assert [r.tuple for r in rows] == [(0, 1), (0, 2), (0, 3)]


def test_no_rules_single_iteration():
    vp = load("rel e(int). e(1). 0.4::e(2). query e(X).")
    ctx = Reasoner(vp, EXACT).run()
    assert ctx.stats.iterations == 1
    assert [(r.tuple, r.probability) for r in query(ctx, "e")] == [((1,), 1.0), ((2,), 0.4)]


def test_fixpoint_idempotent():
    vp = load(PATH)
    ctx = Reasoner(vp, SemiringSpec(BOOLEAN)).run()
    before = {k: dict(v) for k, v in ctx.relations.items()}
    evaluate(ctx)
    assert ctx.relations == before


def test_negation_over_certain_facts():
    vp = load("""
rel e(int, int). rel blocked(int). rel ok(int, int).
0.5::e(0, 1). 0.8::e(1, 2). blocked(2).
ok(X, Y) :- e(X, Y), not blocked(Y).
query ok(X, Y).
""")
    rows = query(Reasoner(vp, EXACT).run(), "ok")
    assert [(r.tuple, r.probability) for r in rows] == [((0, 1), 0.5)]


def test_addmult_counts_each_derivation_once():
    vp = load("""
rel a(). rel b(). rel q().
0.5::a(). 0.5::b().
q() :- a().
q() :- b().
query q().
""")
    rows = query(Reasoner(vp, SemiringSpec(ADDMULT)).run(), "q")
    assert rows[0].probability == pytest.approx(0.75)
    rows = query(Reasoner(load(PATH), SemiringSpec(ADDMULT)).run(), "path")
    assert all(r.probability == 1.0 for r in rows)


def test_maxmin_path():
    vp = load("""
rel e(int, int). rel p(int, int).
0.9::e(0, 1). 0.3::e(1, 2). 0.6::e(0, 2).
p(X, Y) :- e(X, Y).
p(X, Z) :- p(X, Y), e(Y, Z).
query p(0, 2).
""")
    rows = query(Reasoner(vp, SemiringSpec(MAXMIN)).run(), "p")
    assert rows[0].probability == pytest.approx(0.6)


def test_grad_semiring_returns_gradprob(mnist):
    uniform = np.full(10, 0.1)
    ctx = Reasoner(mnist, EXACT).run({"digit_a": uniform, "digit_b": uniform})
    row = next(r for r in query(ctx, "sum2") if r.tuple == (9,))
    assert row.grad.value == row.probability
    slot = ctx.slot_gradients(row.grad.grad)
    # d P(sum=9) / d p_a[i] = p_b[9 - i] = 0.1
    assert np.allclose(slot["digit_a"], 0.1)


def _probs(vp, spec):
    return {r.tuple: r.probability for r in query(Reasoner(vp, spec).run(), vp.program.queries[0].name)}


def _permuted(src, rng):
    lines = src.strip().splitlines()
    rules = [l for l in lines if ":-" in l]
    rest = [l for l in lines if ":-" not in l and not l.startswith("query")]
    queries = [l for l in lines if l.startswith("query")]
    order = rng.permutation(len(rules))
    return "\n".join(rest + [rules[i] for i in order] + queries) + "\n"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rule_order_independence(seed):
    rng = np.random.default_rng(seed)
    src, _ = random_program(rng)
    a, b = load(src), load(_permuted(src, rng))
    for spec in (SemiringSpec(BOOLEAN), SemiringSpec(MAXMIN), SemiringSpec(ADDMULT), EXACT):
        pa, pb = _probs(a, spec), _probs(b, spec)
        assert pa.keys() == pb.keys()
        for k in pa:
            assert pa[k] == pytest.approx(pb[k], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boolean_matches_classical_datalog(seed):
    src, q = random_program(np.random.default_rng(seed))
    vp = load(src)
    ctx = Reasoner(vp, SemiringSpec(BOOLEAN)).run()
    true_facts = {}
    for gi, group in enumerate(vp.program.fact_groups):
        for mi, member in enumerate(group.members):
            if ctx.weights.probs[gi][mi] > 0.5:
                atom = member.atom
                true_facts.setdefault(atom.relation, set()).add(tuple(a.value for a in atom.args))
    db = oracle.boolean_eval(vp, true_facts)
    assert {r.tuple for r in query(ctx, q)} == db[q]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_probabilities_in_unit_interval(seed):
    vp = load(random_program(np.random.default_rng(seed))[0])
    for spec in (SemiringSpec(MAXMIN), SemiringSpec(ADDMULT), SemiringSpec(TOPK, 2), EXACT):
        for p in _probs(vp, spec).values():
            assert 0.0 <= p <= 1.0 + 1e-12
