import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nesy import constraints as C
from nesy import errors
from nesy.gradcheck import check_constraints, random_expr

A, B = C.Binary("a", "a"), C.Binary("b", "b")


def binp(p):
    return np.array([1.0 - p, p])


def test_soft_examples():
    probs = {"a": binp(0.8), "b": binp(0.5)}
    assert C.soft_eval(C.andL(C.is_(A), C.is_(B)), probs) == pytest.approx(0.4)
    assert C.soft_eval(C.ifL(C.is_(A), C.is_(B)), {"a": binp(0.8), "b": binp(0.4)}) == pytest.approx(0.5)
    assert C.soft_eval(C.ifL(C.is_(B), C.is_(A)), probs) == 1.0
    assert C.soft_eval(C.orL(C.is_(A), C.is_(B)), probs) == pytest.approx(0.9)
    assert C.soft_eval(C.notL(C.is_(A)), probs) == pytest.approx(0.2)
    half = {"a": binp(0.5), "b": binp(0.5)}
    assert C.soft_eval(C.existsL([C.is_(A), C.is_(B)]), half) == pytest.approx(0.75)


def test_soft_loss_grad_and():
    loss, grads = C.soft_loss_grad(C.andL(C.is_(A), C.is_(B)), {"a": binp(0.8), "b": binp(0.5)})
    assert loss == pytest.approx(0.6)
    assert grads["a"][1] == pytest.approx(-0.5)
    assert grads["b"][1] == pytest.approx(-0.8)
    assert grads["a"][0] == 0.0


def test_satisfied_constraint_zero_grad():
    loss, grads = C.soft_loss_grad(C.ifL(C.is_(A), C.is_(B)), {"a": binp(0.3), "b": binp(0.6)})
    assert loss == 0.0
    assert all(not g.any() for g in grads.values())


def test_ifl_kink_finite():
    loss, grads = C.soft_loss_grad(C.ifL(C.is_(A), C.is_(B)), {"a": binp(0.5), "b": binp(0.5)})
    assert loss == 0.0
    assert all(np.all(np.isfinite(g)) for g in grads.values())


def test_exact_structural_noop():
    d = C.Categorical("d", 3, "d")
    full = C.exactL(*[C.is_(d, i) for i in range(3)])
    loss, grads = C.soft_loss_grad(full, {"d": np.array([0.2, 0.3, 0.5])})
    assert loss == 0.0 and not grads["d"].any()
    partial = C.exactL(C.is_(d, 0), C.is_(d, 1))
    assert C.soft_eval(partial, {"d": np.array([0.2, 0.3, 0.5])}) == pytest.approx(0.5)


def test_unbound_and_domain_errors():
    with pytest.raises(errors.UnboundVariable):
        C.soft_eval(C.is_(A), {"b": binp(0.5)})
    with pytest.raises(ValueError):
        C.is_(C.Categorical("d", 3), 3)


def test_soft_grads_match_finite_differences():
    result = check_constraints(instances=200, seed=5)
    assert result.passed, result.line()


def test_sampling_examples():
    probs = {"a": binp(0.5), "b": binp(0.5)}
    taut = C.orL(C.is_(A), C.notL(C.is_(A)))
    loss, grads = C.sampling_loss(taut, probs, 1000, rng_seed=1)
    assert loss == 0.0 and all(not g.any() for g in grads.values())
    contra = C.andL(C.is_(A), C.notL(C.is_(A)))
    assert C.sampling_loss(contra, probs, 1000, rng_seed=1)[0] == 1.0
    loss, _ = C.sampling_loss(C.andL(C.is_(A), C.is_(B)), probs, 100_000, rng_seed=0)
    assert loss == pytest.approx(0.75, abs=0.01)
    with pytest.raises(ValueError):
        C.sampling_loss(taut, probs, 0)


def test_sampling_gradient_is_unbiased():
    # E[grad] of the score estimator equals d P(violation) / d p
    expr = C.andL(C.is_(A), C.is_(B))
    probs = {"a": binp(0.7), "b": binp(0.4)}
    _, grads = C.sampling_loss(expr, probs, 200_000, rng_seed=2)
    # P(violation) = 1 - pa1 pb1 + (terms in pa0, pb0 at fixed values)
    # with independent per-entry parameters: d/d pa1 of sum over samples
    # P(viol) = sum_{i,j} pa_i pb_j [viol(i,j)] = pa0 pb0 + pa0 pb1 + pa1 pb0
    assert grads["a"][1] == pytest.approx(0.6, abs=0.02)   # pb0
    assert grads["a"][0] == pytest.approx(1.0, abs=0.02)   # pb0 + pb1
    assert grads["b"][1] == pytest.approx(0.3, abs=0.02)   # pa0


def test_primal_dual_update():
    state = C.LagrangeState({"c": 0.0}, step_size=1.0)
    weights, state = C.primal_dual_step(state, {"c": 0.6})
    assert weights == {"c": 0.0}
    assert state.multipliers["c"] == pytest.approx(0.4)
    weights, same = C.primal_dual_step(state, {"c": 1.0})
    assert same.multipliers == state.multipliers and weights["c"] == pytest.approx(0.4)
    assert C.augmented_penalty({"c": 2.0}, {"c": 0.75}) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        C.primal_dual_step(state, {"c": 1.5})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.floats(1e-3, 5.0))
def test_multipliers_never_negative(degrees, eta):
    state = C.LagrangeState(step_size=eta)
    for d in degrees:
        _, state = C.primal_dual_step(state, {"x": d})
        assert state.multipliers["x"] >= 0.0


def test_constrained_map_digits():
    rng = np.random.default_rng(0)
    pa, pb = rng.dirichlet(np.ones(10)), rng.dirichlet(np.ones(10))
    pa[3], pb[5] = 5, 5
    pa, pb = pa / pa.sum(), pb / pb.sum()
    da, db = C.Categorical("da", 10), C.Categorical("db", 10)
    nine = C.orL(*[C.andL(C.is_(da, a), C.is_(db, 9 - a)) for a in range(10)])
    result = C.constrained_map({"da": pa, "db": pb}, [nine])
    best = max(range(10), key=lambda a: math.log(pa[a]) + math.log(pb[9 - a]))
    assert result.feasible
    assert result.assignment == {"da": best, "db": 9 - best}


def test_constrained_map_unconstrained_and_infeasible():
    probs = {"a": binp(0.8), "b": binp(0.3)}
    assert C.constrained_map(probs).assignment == {"a": 1, "b": 0}
    contra = C.andL(C.is_(A), C.notL(C.is_(A)))
    result = C.constrained_map(probs, [contra])
    assert result.infeasible and result.assignment == {"a": 1, "b": 0}


def test_constrained_map_ties_lexicographic():
    result = C.constrained_map({"a": binp(0.5), "b": binp(0.5)}, [C.orL(C.is_(A), C.is_(B))])
    assert result.assignment == {"a": 0, "b": 1}


def test_search_cap():
    probs = {f"v{i}": np.full(10, 0.1) for i in range(7)}
    with pytest.raises(errors.SearchSpaceTooLarge):
        C.constrained_map(probs)


def _random_instance(rng):
    n = int(rng.integers(1, 5))
    vars_ = [C.Categorical(f"v{i}", int(rng.integers(2, 4))) for i in range(n)]
    probs = {v.name: rng.dirichlet(np.ones(v.size)) for v in vars_}
    exprs = [random_expr(rng, vars_) for _ in range(int(rng.integers(1, 4)))]
    return vars_, probs, exprs


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boolean_soft_equals_hard(seed):
    rng = np.random.default_rng(seed)
    vars_, _, exprs = _random_instance(rng)
    for values in itertools.product(*[range(v.size) for v in vars_]):
        point = dict(zip([v.name for v in vars_], values))
        onehot = {v.name: np.eye(v.size)[point[v.name]] for v in vars_}
        for expr in exprs:
            assert C.soft_eval(expr, onehot) == float(C.holds(expr, point))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_map_invariant_under_logit_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    _, probs, exprs = _random_instance(rng)
    scaled = {}
    for name, p in probs.items():
        z = scale * np.log(p)
        e = np.exp(z - z.max())
        scaled[name] = e / e.sum()
    a, b = C.constrained_map(probs, exprs), C.constrained_map(scaled, exprs)
    assert a.assignment == b.assignment and a.feasible == b.feasible


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_map_output_satisfies_constraints(seed):
    _, probs, exprs = _random_instance(np.random.default_rng(seed))
    result = C.constrained_map(probs, exprs)
    if result.feasible:
        assert all(C.holds(e, result.assignment) for e in exprs)


def test_sampling_converges_to_exact_violation():
    rng = np.random.default_rng(8)
    for _ in range(5):
        vars_, probs, exprs = _random_instance(rng)
        expr = exprs[0]
        exact = 0.0
        for values in itertools.product(*[range(v.size) for v in vars_]):
            point = dict(zip([v.name for v in vars_], values))
            w = math.prod(probs[n][k] for n, k in point.items())
            exact += w * (not C.holds(expr, point))
        est, _ = C.sampling_loss(expr, probs, 100_000, rng_seed=3)
        assert est == pytest.approx(exact, abs=0.01)
