"""Static checks and stratification for parsed programs."""

import math
from dataclasses import dataclass, field

import networkx as nx

from nesy import errors
from nesy.lang import ast
from nesy.lang.printer import format_atom, format_literal

PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ValidatedProgram:
    program: ast.Program
    strata: dict = field(hash=False)  # relation name -> stratum index

    @property
    def stratum_count(self):
        return max(self.strata.values(), default=-1) + 1

    def rules_in_stratum(self, s):
        return [r for r in self.program.rules if self.strata[r.head.relation] == s]

    def query(self, name):
        for q in self.program.queries:
            if q.name == name:
                return q
        raise errors.UnknownQuery(f"no query named {name!r}")


def _rule_text(rule):
    return f"{format_atom(rule.head)} :- {', '.join(format_literal(b) for b in rule.body)}."


def _check_atom(atom, decls):
    decl = decls.get(atom.relation)
    if decl is None:
        raise errors.UnknownRelation(f"relation {atom.relation!r} is not declared (at {atom.pos[0]}:{atom.pos[1]})")
    if decl.arity != atom.arity:
        raise errors.ArityMismatch(
            f"{atom.relation} declared with arity {decl.arity}, used with {atom.arity} (at {atom.pos[0]}:{atom.pos[1]})"
        )
    return decl


def _const_fits(value, column_type):
    if column_type == "sym":
        return isinstance(value, str)
    if column_type == "int":
        return isinstance(value, int)
    return isinstance(value, (int, float))


def _check_constants(atom, decl):
    for arg, column_type in zip(atom.args, decl.column_types):
        if isinstance(arg, ast.Const) and not _const_fits(arg.value, column_type):
            raise errors.TypeMismatch(
                f"constant {arg.value!r} does not fit column type {column_type} of {atom.relation}"
            )


def _bound_variables(rule):
    """Variables bound by positive atoms plus ``X == expr`` assignments."""
    bound = set()
    for lit in rule.body:
        if isinstance(lit, ast.Atom):
            bound.update(lit.variables())
    changed = True
    while changed:
        changed = False
        for lit in rule.body:
            if not isinstance(lit, ast.Comparison) or lit.op != "==":
                continue
            for target, source in ((lit.left, lit.right), (lit.right, lit.left)):
                if (
                    isinstance(target, ast.Var)
                    and not target.anonymous
                    and target.name not in bound
                    and all(v in bound for v in ast.expr_variables(source))
                ):
                    bound.add(target.name)
                    changed = True
    return bound


def _check_rule(rule, decls):
    head_decl = _check_atom(rule.head, decls)
    _check_constants(rule.head, head_decl)
    text = _rule_text(rule)
    for arg in rule.head.args:
        if isinstance(arg, ast.Var) and arg.anonymous:
            raise errors.RangeRestrictionViolation(text, "_")
    for lit in rule.body:
        if isinstance(lit, ast.Atom):
            _check_constants(lit, _check_atom(lit, decls))
        elif isinstance(lit, ast.Negation):
            _check_constants(lit.atom, _check_atom(lit.atom, decls))
    bound = _bound_variables(rule)
    for name in rule.head.variables():
        if name not in bound:
            raise errors.RangeRestrictionViolation(text, name)
    for lit in rule.body:
        if isinstance(lit, ast.Negation):
            needed = lit.atom.variables()
        elif isinstance(lit, ast.Comparison):
            needed = ast.expr_variables(lit.left) + ast.expr_variables(lit.right)
            for side in (lit.left, lit.right):
                if isinstance(side, ast.Var) and side.anonymous:
                    raise errors.RangeRestrictionViolation(text, "_")
        else:
            continue
        for name in needed:
            if name not in bound:
                raise errors.RangeRestrictionViolation(text, name)


def _check_fact_group(group, decls):
    probs = []
    for member in group.members:
        decl = _check_atom(member.atom, decls)
        if not member.atom.is_ground():
            raise errors.NonGroundFact(f"probabilistic fact {format_atom(member.atom)} is not ground")
        _check_constants(member.atom, decl)
        if isinstance(member.slot, ast.ConstProb):
            p = member.slot.p
            if not math.isfinite(p) or p < 0.0 or p > 1.0:
                raise errors.InvalidProbability(f"probability {p} of {format_atom(member.atom)} outside [0, 1]")
            probs.append(p)
        elif member.slot.index < 0:
            raise errors.InvalidProbability(f"negative neural output index in {format_atom(member.atom)}")
    if group.kind == ast.CATEGORICAL and len(probs) == len(group.members):
        if abs(sum(probs) - 1.0) > PROB_TOLERANCE:
            raise errors.InvalidProbability(
                f"annotated disjunction on {group.relation} sums to {sum(probs)!r}, expected 1"
            )


def _stratify(program):
    graph = nx.DiGraph()
    graph.add_nodes_from(d.name for d in program.relations)
    negative_edges = set()
    for rule in program.rules:
        head = rule.head.relation
        for lit in rule.body:
            if isinstance(lit, ast.Atom):
                if not graph.has_edge(lit.relation, head):
                    graph.add_edge(lit.relation, head, negative=False)
            elif isinstance(lit, ast.Negation):
                graph.add_edge(lit.atom.relation, head, negative=True)
                negative_edges.add((lit.atom.relation, head))

    condensed = nx.condensation(graph)
    component = condensed.graph["mapping"]
    for src, dst in sorted(negative_edges):
        if component[src] == component[dst]:
            members = condensed.nodes[component[src]]["members"]
            cycle_path = nx.shortest_path(graph.subgraph(members), dst, src)
            raise errors.UnstratifiableNegation(cycle_path + [dst])

    level = {}
    for node in nx.topological_sort(condensed):
        s = 0
        for pred in condensed.predecessors(node):
            bump = any(
                (a, b) in negative_edges
                for a in condensed.nodes[pred]["members"]
                for b in condensed.nodes[node]["members"]
                if graph.has_edge(a, b)
            )
            s = max(s, level[pred] + (1 if bump else 0))
        level[node] = s
    return {name: level[component[name]] for name in graph.nodes}, graph


def validate(program) -> ValidatedProgram:
    """Check every program invariant and assign strata. Pure and idempotent."""
    if isinstance(program, ValidatedProgram):
        program = program.program

    decls = {}
    for decl in program.relations:
        if decl.name in decls:
            raise errors.DuplicateRelation(f"relation {decl.name!r} declared more than once")
        decls[decl.name] = decl

    for fact in program.facts:
        decl = _check_atom(fact, decls)
        if not fact.is_ground():
            raise errors.NonGroundFact(f"fact {format_atom(fact)} is not ground")
        _check_constants(fact, decl)
    for group in program.fact_groups:
        _check_fact_group(group, decls)
    for rule in program.rules:
        _check_rule(rule, decls)

    seen = set()
    for q in program.queries:
        _check_atom(q.atom, decls)
        if q.name in seen:
            raise errors.DuplicateQuery(f"query {q.name!r} declared more than once")
        seen.add(q.name)

    strata, graph = _stratify(program)

    # Negation is only allowed over relations that never see a random fact.
    probabilistic = {m.atom.relation for g in program.fact_groups for m in g.members}
    for rule in program.rules:
        for lit in rule.body:
            if isinstance(lit, ast.Negation):
                rel = lit.atom.relation
                upstream = nx.ancestors(graph, rel) | {rel}
                if upstream & probabilistic:
                    raise errors.ProbabilisticNegation(
                        f"negated relation {rel!r} depends on probabilistic facts in rule: {_rule_text(rule)}"
                    )
    return ValidatedProgram(program, strata)
