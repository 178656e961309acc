"""Bottom-up evaluation of validated programs under a provenance semiring.

Usage::

    ctx = EvalContext(load(source), SemiringSpec(TOPK_GRAD, 3))
    seed_facts(ctx, {"digit_a": pa, "digit_b": pb})
    evaluate(ctx)
    rows = query(ctx, "sum2")

Strata run in order.  Within a stratum, idempotent semirings use
semi-naive iteration (each round joins against at least one tuple whose tag
changed in the previous round); the non-idempotent AddMultProb semiring is
recomputed naively each round so derivations are not counted twice.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from nesy import errors
from nesy.lang import ast
from nesy.lang.validate import ValidatedProgram
from nesy.provenance import FactId, FactTable, SemiringSpec, make_semiring

RENORMALIZE_TOLERANCE = 1e-6


@dataclass
class EvalStats:
    iterations: int = 0
    tuples_derived: int = 0
    wall_ms: float = 0.0


@dataclass
class QueryResult:
    tuple: tuple
    probability: float
    grad: object = None  # GradProb under a gradient semiring

    def __iter__(self):
        return iter((self.tuple, self.probability, self.grad))


@dataclass
class EvalContext:
    program: ValidatedProgram
    semiring: SemiringSpec
    weights: FactTable = None
    relations: dict = field(default_factory=dict)  # name -> {tuple: tag}
    stats: EvalStats = field(default_factory=EvalStats)
    # group index -> sum of the raw vector before renormalisation
    renormalized: dict = field(default_factory=dict)
    base: dict = field(default_factory=dict)  # seeded input tuples only
    evaluated: bool = False

    def __post_init__(self):
        self.sr = make_semiring(self.semiring)
        for decl in self.program.program.relations:
            self.relations.setdefault(decl.name, {})

    def relation(self, name):
        return self.relations[name]

    def slot_gradients(self, grad, outputs_shape=None):
        """Map a fact-level gradient onto neural head outputs.

        Returns ``{head_id: ndarray}`` holding d value / d output for every
        head referenced by a fact in ``grad``.  Renormalised groups are
        chained through the normalisation.
        """
        groups = self.program.program.fact_groups
        out = {}
        per_group = {}
        for fid, g in grad.items():
            per_group.setdefault(fid.group, {})[fid.member] = g
        for gi, member_grads in per_group.items():
            group = groups[gi]
            scale = self.renormalized.get(gi)
            if scale is not None:
                # p_m = raw_m / s  =>  dL/draw_m = (g_m - sum_j g_j p_j) / s
                probs = self.weights.probs[gi]
                dot = sum(member_grads.get(m, 0.0) * probs[m] for m in range(len(probs)))
                member_grads = {m: (member_grads.get(m, 0.0) - dot) / scale for m in range(len(probs))}
            for m, g in member_grads.items():
                slot = group.members[m].slot
                if not isinstance(slot, ast.NeuralSlot):
                    continue
                if slot.head_id not in out:
                    size = (outputs_shape or {}).get(slot.head_id, slot.index + 1)
                    out[slot.head_id] = np.zeros(max(size, slot.index + 1))
                vec = out[slot.head_id]
                if slot.index >= len(vec):
                    vec = np.concatenate([vec, np.zeros(slot.index + 1 - len(vec))])
                    out[slot.head_id] = vec
                vec[slot.index] += g
        return out


# -- seeding ----------------------------------------------------------------

def _slot_value(slot, neural_outputs):
    if isinstance(slot, ast.ConstProb):
        return slot.p
    if slot.head_id not in neural_outputs:
        raise errors.MissingHead(f"no output supplied for neural head {slot.head_id!r}")
    vec = neural_outputs[slot.head_id]
    if slot.index >= len(vec):
        raise errors.IndexOutOfRange(
            f"head {slot.head_id!r} has {len(vec)} outputs, slot index {slot.index}"
        )
    return float(vec[slot.index])


def _atom_tuple(atom):
    return tuple(arg.value for arg in atom.args)


def seed_facts(ctx: EvalContext, neural_outputs=None) -> EvalContext:
    """Insert every certain fact and fact-group member as an input tuple."""
    neural_outputs = neural_outputs or {}
    program = ctx.program.program
    probs, exclusive = [], []
    ctx.renormalized = {}
    for gi, group in enumerate(program.fact_groups):
        row = [_slot_value(m.slot, neural_outputs) for m in group.members]
        for p, m in zip(row, group.members):
            if p < 0:
                raise errors.NegativeProbability(f"negative probability {p} for {m.atom.relation}")
        if group.kind == ast.CATEGORICAL:
            exclusive.append(gi)
            total = sum(row)
            if abs(total - 1.0) > RENORMALIZE_TOLERANCE and total > 0:
                row = [p / total for p in row]
                ctx.renormalized[gi] = total
        probs.append(row)
    ctx.weights = FactTable(probs, exclusive)

    sr = ctx.sr
    for name in ctx.relations:
        ctx.relations[name] = {}
    for fact in program.facts:
        rel = ctx.relations[fact.relation]
        rel[_atom_tuple(fact)] = sr.one()
    for gi, group in enumerate(program.fact_groups):
        for mi, member in enumerate(group.members):
            rel = ctx.relations[member.atom.relation]
            tup = _atom_tuple(member.atom)
            tag = sr.fact(FactId(gi, mi), probs[gi][mi], ctx.weights)
            rel[tup] = sr.add(rel[tup], tag, ctx.weights) if tup in rel else tag
    ctx.base = {name: dict(rel) for name, rel in ctx.relations.items()}
    ctx.evaluated = False
    ctx.stats = EvalStats()
    return ctx


# -- rule evaluation --------------------------------------------------------

def _eval_expr(expr, binding):
    if isinstance(expr, ast.Var):
        return binding[expr.name]
    if isinstance(expr, ast.Const):
        return expr.value
    if isinstance(expr, ast.Neg):
        return -_eval_expr(expr.operand, binding)
    left = _eval_expr(expr.left, binding)
    right = _eval_expr(expr.right, binding)
    if isinstance(left, str) or isinstance(right, str):
        raise errors.TypeMismatch(f"arithmetic on symbol in {expr}")
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    return left * right


def _compare(op, a, b):
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if isinstance(a, str) != isinstance(b, str):
        raise errors.TypeMismatch(f"cannot order {a!r} and {b!r}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


class _IndexCache:
    """Hash indexes over relation snapshots, keyed by bound positions."""

    def __init__(self):
        self.cache = {}

    def get(self, source_key, source, positions):
        key = (source_key, positions)
        idx = self.cache.get(key)
        if idx is None:
            idx = {}
            for tup, tag in source.items():
                idx.setdefault(tuple(tup[p] for p in positions), []).append((tup, tag))
            self.cache[key] = idx
        return idx


def _plan(rule, sizes, delta_pos):
    """Order body literals: delta atom first, then smallest relations; guards
    and negations as soon as their variables are bound."""
    atoms = [(i, lit) for i, lit in enumerate(rule.body) if isinstance(lit, ast.Atom)]
    others = [lit for lit in rule.body if not isinstance(lit, ast.Atom)]
    order = []
    bound = set()
    if delta_pos is not None:
        first = next(lit for i, lit in atoms if i == delta_pos)
        atoms = [(i, lit) for i, lit in atoms if i != delta_pos]
        order.append(("atom", first, True))
        bound.update(first.variables())
    remaining = list(others)

    def flush():
        progress = True
        while progress:
            progress = False
            for lit in list(remaining):
                if isinstance(lit, ast.Negation):
                    ready = all(v in bound for v in lit.atom.variables())
                    if ready:
                        order.append(("neg", lit, False))
                        remaining.remove(lit)
                        progress = True
                    continue
                lv = ast.expr_variables(lit.left)
                rv = ast.expr_variables(lit.right)
                if all(v in bound for v in lv + rv):
                    order.append(("cmp", lit, False))
                    remaining.remove(lit)
                    progress = True
                elif lit.op == "==":
                    for target, source in ((lit.left, lit.right), (lit.right, lit.left)):
                        if (
                            isinstance(target, ast.Var)
                            and target.name not in bound
                            and all(v in bound for v in ast.expr_variables(source))
                        ):
                            order.append(("assign", (target.name, source), False))
                            bound.add(target.name)
                            remaining.remove(lit)
                            progress = True
                            break

    flush()
    atoms.sort(key=lambda item: (sizes.get(item[1].relation, 0), item[0]))
    while atoms:
        # Prefer an atom sharing a bound variable to avoid cross products.
        pick = next((a for a in atoms if any(v in bound for v in a[1].variables())), atoms[0])
        atoms.remove(pick)
        order.append(("atom", pick[1], False))
        bound.update(pick[1].variables())
        flush()
    if remaining:
        raise errors.RangeRestrictionViolation(str(rule), "guard")
    return order


def _eval_rule(ctx, rule, full, delta, delta_pos, indexes):
    sr, weights = ctx.sr, ctx.weights
    sizes = {name: len(rel) for name, rel in full.items()}
    plan = _plan(rule, sizes, delta_pos)
    rows = [({}, sr.one())]
    for kind, item, use_delta in plan:
        if not rows:
            break
        if kind == "atom":
            source = delta[item.relation] if use_delta else full[item.relation]
            source_key = ("delta" if use_delta else "full", item.relation)
            sample_binding = rows[0][0]
            positions, key_parts = [], []
            for p, arg in enumerate(item.args):
                if isinstance(arg, ast.Const):
                    positions.append(p)
                    key_parts.append(("c", arg.value))
                elif not arg.anonymous and arg.name in sample_binding:
                    positions.append(p)
                    key_parts.append(("v", arg.name))
            positions = tuple(positions)
            index = indexes.get(source_key, source, positions)
            free = [(p, arg.name) for p, arg in enumerate(item.args)
                    if isinstance(arg, ast.Var) and not arg.anonymous and p not in positions]
            new_rows = []
            for binding, tag in rows:
                key = tuple(v if k == "c" else binding[v] for k, v in key_parts)
                for tup, t_tag in index.get(key, ()):
                    ext = dict(binding)
                    ok = True
                    for p, name in free:
                        if name in ext and ext[name] != tup[p]:
                            ok = False
                            break
                        ext[name] = tup[p]
                    if not ok:
                        continue
                    new_tag = sr.mul(tag, t_tag, weights)
                    if sr.is_zero(new_tag):
                        continue
                    new_rows.append((ext, new_tag))
            rows = new_rows
        elif kind == "neg":
            rel = full[item.atom.relation]
            kept = []
            for binding, tag in rows:
                pattern = [
                    arg.value if isinstance(arg, ast.Const) else (None if arg.anonymous else binding[arg.name])
                    for arg in item.atom.args
                ]
                hit = any(
                    all(want is None or want == got for want, got in zip(pattern, tup))
                    and not sr.is_zero(t_tag)
                    for tup, t_tag in rel.items()
                )
                if not hit:
                    kept.append((binding, tag))
            rows = kept
        elif kind == "cmp":
            rows = [
                (b, t) for b, t in rows
                if _compare(item.op, _eval_expr(item.left, b), _eval_expr(item.right, b))
            ]
        else:  # assign
            name, source = item
            new_rows = []
            for b, t in rows:
                ext = dict(b)
                ext[name] = _eval_expr(source, b)
                new_rows.append((ext, t))
            rows = new_rows

    derived = {}
    for binding, tag in rows:
        head = tuple(
            arg.value if isinstance(arg, ast.Const) else binding[arg.name] for arg in rule.head.args
        )
        derived.setdefault(head, []).append(tag)
    return {head: sr.add_many(tags, weights) for head, tags in derived.items()}


def _domain_bound(ctx, rules):
    program = ctx.program.program
    constants = set()
    for rel in ctx.relations.values():
        for tup in rel:
            constants.update(tup)
    for rule in program.rules:
        for lit in (rule.head,) + rule.body:
            atom = lit.atom if isinstance(lit, ast.Negation) else lit
            if isinstance(atom, ast.Atom):
                constants.update(a.value for a in atom.args if isinstance(a, ast.Const))
    max_arity = max((d.arity for d in program.relations), default=0)
    k = ctx.semiring.k
    if k is None:
        k = sum(len(g.members) for g in program.fact_groups) + 1
    bound = max(len(constants), 1) ** max_arity * max(len(rules), 1) * k + 2
    if not ctx.sr.idempotent:
        bound = max(bound, 1000)
    return bound


def _evaluate_stratum(ctx, rules, stratum_rels):
    sr, weights = ctx.sr, ctx.weights
    full = ctx.relations
    bound = _domain_bound(ctx, rules)
    iterations = 0

    if not sr.idempotent:
        base = {name: ctx.base.get(name, {}) for name in stratum_rels}
        while True:
            iterations += 1
            if iterations > bound:
                raise errors.NonTermination(f"no fixpoint after {bound} iterations")
            indexes = _IndexCache()
            fresh = {name: dict(base[name]) for name in stratum_rels}
            for rule in rules:
                for tup, tag in _eval_rule(ctx, rule, full, None, None, indexes).items():
                    rel = fresh[rule.head.relation]
                    rel[tup] = sr.add(rel[tup], tag, weights) if tup in rel else tag
            changed = False
            for name in stratum_rels:
                old, new = full[name], fresh[name]
                if old.keys() != new.keys() or any(not sr.equal(old[t], new[t]) for t in new):
                    changed = True
                    ctx.stats.tuples_derived += sum(
                        1 for t in new if t not in old or not sr.equal(old[t], new[t])
                    )
                full[name] = new
            if not changed:
                return iterations

    delta = None
    while True:
        iterations += 1
        if iterations > bound:
            raise errors.NonTermination(f"no fixpoint after {bound} iterations")
        indexes = _IndexCache()
        derived = {}
        for rule in rules:
            if delta is None:
                variants = [None]
            else:
                variants = [
                    i for i, lit in enumerate(rule.body)
                    if isinstance(lit, ast.Atom) and delta.get(lit.relation)
                ]
            for pos in variants:
                for tup, tag in _eval_rule(ctx, rule, full, delta, pos, indexes).items():
                    bucket = derived.setdefault(rule.head.relation, {})
                    bucket.setdefault(tup, []).append(tag)
        new_delta = {}
        for name, bucket in derived.items():
            rel = full[name]
            for tup, tags in bucket.items():
                incoming = sr.add_many(tags, weights)
                if tup in rel:
                    merged = sr.add(rel[tup], incoming, weights)
                    if sr.equal(merged, rel[tup]):
                        continue
                else:
                    merged = incoming
                rel[tup] = merged
                new_delta.setdefault(name, {})[tup] = merged
                ctx.stats.tuples_derived += 1
        if not new_delta:
            return iterations
        delta = {name: dict(rel) for name, rel in new_delta.items()}


def evaluate(ctx: EvalContext) -> EvalContext:
    """Run every stratum to its fixpoint."""
    if ctx.weights is None:
        seed_facts(ctx)
    start = time.perf_counter()
    vp = ctx.program
    total = 0
    for s in range(vp.stratum_count):
        rules = vp.rules_in_stratum(s)
        if not rules:
            continue
        rels = sorted({r.head.relation for r in rules})
        total += _evaluate_stratum(ctx, rules, rels)
    ctx.stats.iterations = max(total, 1)
    ctx.stats.wall_ms = (time.perf_counter() - start) * 1000.0
    ctx.evaluated = True
    return ctx


# -- queries ----------------------------------------------------------------

def _matches(atom, tup):
    seen = {}
    for arg, value in zip(atom.args, tup):
        if isinstance(arg, ast.Const):
            if arg.value != value:
                return False
        elif not arg.anonymous:
            if arg.name in seen and seen[arg.name] != value:
                return False
            seen[arg.name] = value
    return True


def query_atom(ctx: EvalContext, atom: ast.Atom, include_zero=False):
    if atom.relation not in ctx.relations:
        raise errors.UnknownQuery(f"unknown relation {atom.relation!r}")
    if not ctx.evaluated:
        evaluate(ctx)
    sr = ctx.sr
    results = []
    for tup in sorted(ctx.relations[atom.relation], key=_sort_key):
        if not _matches(atom, tup):
            continue
        tag = ctx.relations[atom.relation][tup]
        if sr.has_grad:
            gp = sr.extract_grad(tag, ctx.weights)
            prob, grad = gp.value, gp
        else:
            prob, grad = sr.extract(tag, ctx.weights), None
        if prob == 0.0 and not include_zero:
            continue
        results.append(QueryResult(tup, prob, grad))
    return results


def query(ctx: EvalContext, query_name: str, include_zero=False):
    """Tuples of a declared query with their probabilities, sorted by tuple.

    Tuples whose probability is exactly zero are dropped unless
    ``include_zero`` is set.
    """
    try:
        decl = ctx.program.query(query_name)
    except errors.UnknownQuery:
        raise errors.UnknownQuery(f"no query named {query_name!r}") from None
    return query_atom(ctx, decl.atom, include_zero)


def _sort_key(tup):
    return tuple((0, v) if not isinstance(v, str) else (1, v) for v in tup)


class Reasoner:
    """A validated program bound to one semiring; each call gets a fresh context."""

    def __init__(self, program: ValidatedProgram, semiring: SemiringSpec):
        self.program = program
        self.semiring = semiring

    def run(self, neural_outputs=None) -> EvalContext:
        ctx = EvalContext(self.program, self.semiring)
        seed_facts(ctx, neural_outputs)
        return evaluate(ctx)
