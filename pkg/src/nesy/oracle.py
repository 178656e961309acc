"""Brute-force possible-world semantics.

Reference implementation for checking the reasoner: every world (one
truth value per independent fact, one chosen member per annotated
disjunction) is evaluated with a plain set-based stratified Datalog
evaluator, and query probabilities and gradients are summed exactly.
Nothing here shares code with :mod:`nesy.reasoner` beyond the AST.
"""

import itertools
from dataclasses import dataclass

from nesy import errors
from nesy.lang import ast
from nesy.lang.validate import ValidatedProgram, validate
from nesy.provenance import FactId, FactTable, GradProb

MAX_VARIABLES = 20


@dataclass(frozen=True)
class WorldAssignment:
    independent_choices: tuple  # ((FactId, bool), ...)
    nad_choices: tuple  # ((group, member), ...)


# -- boolean evaluation -----------------------------------------------------

def _value(expr, env):
    if isinstance(expr, ast.Var):
        return env[expr.name]
    if isinstance(expr, ast.Const):
        return expr.value
    if isinstance(expr, ast.Neg):
        return -_value(expr.operand, env)
    a, b = _value(expr.left, env), _value(expr.right, env)
    return {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b}[expr.op]()


_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _unify(atom, tup, env):
    env = dict(env)
    for arg, value in zip(atom.args, tup):
        if isinstance(arg, ast.Const):
            if arg.value != value:
                return None
        elif arg.anonymous:
            continue
        elif arg.name in env:
            if env[arg.name] != value:
                return None
        else:
            env[arg.name] = value
    return env


def _solve_body(body, db, env):
    """Yield every environment satisfying the body literals, in order,
    deferring guards and negations until their variables are bound."""
    if not body:
        yield env
        return
    for i, lit in enumerate(body):
        if isinstance(lit, ast.Atom):
            continue
        names = (
            lit.atom.variables() if isinstance(lit, ast.Negation)
            else ast.expr_variables(lit.left) + ast.expr_variables(lit.right)
        )
        unbound = [n for n in names if n not in env]
        rest = body[:i] + body[i + 1:]
        if not unbound:
            if isinstance(lit, ast.Negation):
                if not any(_unify(lit.atom, t, env) is not None for t in db.get(lit.atom.relation, ())):
                    yield from _solve_body(rest, db, env)
            elif _CMP[lit.op](_value(lit.left, env), _value(lit.right, env)):
                yield from _solve_body(rest, db, env)
            return
        if isinstance(lit, ast.Comparison) and lit.op == "==" and len(unbound) == 1:
            for target, source in ((lit.left, lit.right), (lit.right, lit.left)):
                if isinstance(target, ast.Var) and target.name == unbound[0]:
                    if all(n in env for n in ast.expr_variables(source)):
                        yield from _solve_body(rest, db, {**env, target.name: _value(source, env)})
                        return
    for i, lit in enumerate(body):
        if isinstance(lit, ast.Atom):
            rest = body[:i] + body[i + 1:]
            for tup in list(db.get(lit.relation, ())):
                new_env = _unify(lit, tup, env)
                if new_env is not None:
                    yield from _solve_body(rest, db, new_env)
            return
    raise errors.RangeRestrictionViolation("body", "unresolvable literal")


def boolean_eval(program, true_facts) -> dict:
    """Least stratified model given the set of true input atoms.

    ``true_facts`` maps relation name to a set of tuples (certain facts are
    added automatically).  Returns relation name -> set of tuples.
    """
    vp = program if isinstance(program, ValidatedProgram) else validate(program)
    prog = vp.program
    db = {d.name: set() for d in prog.relations}
    for fact in prog.facts:
        db[fact.relation].add(tuple(a.value for a in fact.args))
    for rel, tuples in true_facts.items():
        db[rel].update(tuples)
    for s in range(vp.stratum_count):
        rules = [r for r in prog.rules if vp.strata[r.head.relation] == s]
        changed = True
        while changed:
            changed = False
            for rule in rules:
                for env in list(_solve_body(list(rule.body), db, {})):
                    head = tuple(a.value if isinstance(a, ast.Const) else env[a.name] for a in rule.head.args)
                    if head not in db[rule.head.relation]:
                        db[rule.head.relation].add(head)
                        changed = True
    return db


# -- world enumeration ------------------------------------------------------

def _variables(prog, weights):
    """Per random variable: list of (label, weight, true atoms, FactIds set true)."""
    variables = []
    for gi, group in enumerate(prog.fact_groups):
        if gi in weights.exclusive:
            opts = []
            for mi, member in enumerate(group.members):
                atom = member.atom
                opts.append(((gi, mi), weights.probs[gi][mi],
                             [(atom.relation, tuple(a.value for a in atom.args))], FactId(gi, mi)))
            variables.append(("nad", gi, opts))
        else:
            for mi, member in enumerate(group.members):
                atom = member.atom
                p = weights.probs[gi][mi]
                fact = (atom.relation, tuple(a.value for a in atom.args))
                variables.append(("ind", FactId(gi, mi), [
                    (True, p, [fact], FactId(gi, mi)),
                    (False, 1.0 - p, [], None),
                ]))
    return variables


def _referenced(prog, query_rel):
    rels = {query_rel}
    for rule in prog.rules:
        for lit in rule.body:
            rels.add(lit.atom.relation if isinstance(lit, ast.Negation) else getattr(lit, "relation", None))
    rels.discard(None)
    return rels


def _query_atom(vp, query):
    if isinstance(query, ast.Atom):
        return query
    if isinstance(query, str):
        if "(" in query:
            from nesy.lang.parser import parse
            return parse(f"query {query}.").queries[0].atom
        return vp.query(query).atom
    raise TypeError(f"unsupported query {query!r}")


def _matching(atom, tuples):
    out = set()
    for tup in tuples:
        if _unify(atom, tup, {}) is not None:
            out.add(tup)
    return out


def _worlds(vp, weights, query):
    prog = vp.program
    atom = _query_atom(vp, query)
    variables = _variables(prog, weights)
    if len(variables) > MAX_VARIABLES:
        raise errors.TooManyWorlds(f"{len(variables)} random variables exceed the cap of {MAX_VARIABLES}")
    referenced = _referenced(prog, atom.relation)
    memo = {}
    for combo in itertools.product(*[v[2] for v in variables]):
        weight_factors = [opt[1] for opt in combo]
        true_facts = {}
        for opt in combo:
            for rel, tup in opt[2]:
                if rel in referenced:
                    true_facts.setdefault(rel, set()).add(tup)
        key = frozenset((rel, tup) for rel, tups in true_facts.items() for tup in tups)
        answers = memo.get(key)
        if answers is None:
            db = boolean_eval(vp, true_facts)
            answers = frozenset(_matching(atom, db[atom.relation]))
            memo[key] = answers
        yield variables, combo, weight_factors, answers


def enumerate_query(program, weights: FactTable, query) -> dict:
    """Probability of every query tuple that holds in at least one world."""
    vp = program if isinstance(program, ValidatedProgram) else validate(program)
    probs = {}
    for _, _, factors, answers in _worlds(vp, weights, query):
        w = 1.0
        for f in factors:
            w *= f
        for tup in answers:
            probs[tup] = probs.get(tup, 0.0) + w
    return dict(sorted(probs.items()))


def enumerate_prob(program, weights: FactTable, query) -> float:
    """Probability of a ground query atom (a query name, atom text, or Atom)."""
    vp = program if isinstance(program, ValidatedProgram) else validate(program)
    atom = _query_atom(vp, query)
    result = enumerate_query(vp, weights, atom)
    if atom.is_ground():
        return result.get(tuple(a.value for a in atom.args), 0.0)
    if len(result) > 1:
        raise ValueError("query is not ground and matches several tuples; use enumerate_query")
    return next(iter(result.values()), 0.0)


def enumerate_grad(program, weights: FactTable, query) -> GradProb:
    """Exact probability and gradient of a ground query by enumeration.

    Uses the same identities as ``wmc_grad`` but over every world, so no
    proof is ever pruned.  Each world contributes, for every variable, the
    product of the other variables' weights.
    """
    vp = program if isinstance(program, ValidatedProgram) else validate(program)
    atom = _query_atom(vp, query)
    target = tuple(a.value for a in atom.args) if atom.is_ground() else None
    value = 0.0
    grad = {}
    for variables, combo, factors, answers in _worlds(vp, weights, atom):
        if target is not None:
            holds = target in answers
        else:
            holds = bool(answers)
        if not holds:
            continue
        w = 1.0
        for f in factors:
            w *= f
        value += w
        n = len(factors)
        prefix = [1.0] * (n + 1)
        for i in range(n):
            prefix[i + 1] = prefix[i] * factors[i]
        suffix = [1.0] * (n + 1)
        for i in range(n - 1, -1, -1):
            suffix[i] = suffix[i + 1] * factors[i]
        for i, (var, opt) in enumerate(zip(variables, combo)):
            others = prefix[i] * suffix[i + 1]
            if var[0] == "ind":
                fid = var[1]
                grad[fid] = grad.get(fid, 0.0) + (others if opt[0] is True else -others)
            else:
                fid = opt[3]
                grad[fid] = grad.get(fid, 0.0) + others
    return GradProb(value, grad)


def conditional_prob(program, weights: FactTable, query, fact: FactId, value: bool) -> float:
    """P(query | independent fact forced true/false), by a fresh enumeration."""
    return enumerate_prob(program, weights.with_prob(fact, 1.0 if value else 0.0), query)
