"""Random instance generators shared by the test modules."""

import numpy as np

from nesy.provenance import (ADDMULT, BOOLEAN, MAXMIN, FactId, FactTable, SemiringSpec, TOPK,
                             make_semiring)

NODES = 4


def random_program(rng, max_vars=10, max_rules=5):
    """A small probabilistic program with recursion, guards and certain negation.

    Returns ``(source, query_name)``.  Probabilistic variables: independent
    edge facts plus at most one annotated disjunction over ``color``.
    """
    lines = ["rel e(int, int).", "rel color(int).", "rel c(int).",
             "rel p(int, int).", "rel q(int).", "rel r(int)."]
    budget = int(rng.integers(1, max_vars + 1))
    if budget >= 3 and rng.random() < 0.5:
        size = int(rng.integers(2, min(4, budget) + 1))
        w = rng.dirichlet(np.ones(size))
        w = np.round(w, 3)
        w[-1] = round(1.0 - w[:-1].sum(), 3)
        if w[-1] > 0:
            lines.append(" ; ".join(f"{float(pw)!r}::color({i})" for i, pw in enumerate(w)) + ".")
            budget -= 1
    edges = set()
    while len(edges) < budget:
        edges.add((int(rng.integers(NODES)), int(rng.integers(NODES))))
    for a, b in sorted(edges):
        lines.append(f"{round(float(rng.uniform(0.05, 0.95)), 3)!r}::e({a}, {b}).")
    for n in rng.choice(NODES, size=int(rng.integers(0, 3)), replace=False):
        lines.append(f"c({int(n)}).")
    templates = [
        "p(X, Y) :- e(X, Y).",
        "p(X, Z) :- p(X, Y), e(Y, Z).",
        "p(X, Z) :- e(X, Y), p(Y, Z).",
        "q(X) :- p(X, X).",
        "q(Y) :- p(X, Y), color(X).",
        "q(X) :- e(X, Y), not c(Y).",
        "q(Z) :- e(X, Y), Z == X + Y, Z < 5.",
        "r(X) :- q(X), color(X).",
        "r(Y) :- q(X), p(X, Y), X != Y.",
        "r(X) :- q(X), not c(X).",
    ]
    picks = rng.choice(len(templates), size=int(rng.integers(1, max_rules + 1)), replace=False)
    rules = [templates[i] for i in sorted(picks)]
    lines += rules
    heads = sorted({rule.split("(")[0] for rule in rules})
    target = heads[int(rng.integers(len(heads)))]
    arity = 2 if target == "p" else 1
    lines.append(f"query {target}({', '.join('XY'[:arity])}).")
    return "\n".join(lines) + "\n", target


def dyadic(rng, size=None):
    return rng.integers(0, 257, size=size) / 256.0


def random_tag(rng, spec, weights=None, fids=None):
    sr = make_semiring(spec)
    if spec.kind == BOOLEAN:
        return bool(rng.random() < 0.5)
    if spec.kind in (MAXMIN, ADDMULT):
        return float(dyadic(rng))
    tag = sr.zero()
    for _ in range(int(rng.integers(0, 4))):
        proof = sr.one()
        for _ in range(int(rng.integers(1, 3))):
            proof = sr.mul(proof, sr.fact(fids[int(rng.integers(len(fids)))], None, weights), weights)
        tag = sr.add(tag, proof, weights)
    return tag


def proof_universe():
    weights = FactTable([[0.3, 0.7], [0.5], [0.2], [0.9]], exclusive=[0])
    return weights, weights.fact_ids()


SIMPLE_SPECS = [SemiringSpec(BOOLEAN), SemiringSpec(MAXMIN), SemiringSpec(ADDMULT)]
PROOF_SPEC = SemiringSpec(TOPK, None)
