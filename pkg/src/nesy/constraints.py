"""First-order constraints over concept predictions.

Constraints are built in-process::

    a, b = Categorical("a", 10), Categorical("b", 10)
    c = orL(*[andL(is_(a, i), is_(b, 9 - i)) for i in range(10)])

and used four ways: a product t-norm relaxation with exact gradients
(:func:`soft_eval`, :func:`soft_loss_grad`), a sampled score-function loss
(:func:`sampling_loss`), Lagrangian weighting (:func:`primal_dual_step`)
and exhaustive constrained decoding (:func:`constrained_map`).

Assignments map a variable name to its probability vector; a binary
concept is a 2-way categorical whose index 1 means "true".
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from nesy import errors

DEFAULT_SEARCH_CAP = 10 ** 6
DEFAULT_DUAL_STEP = 0.01


@dataclass(frozen=True)
class ConceptVar:
    name: str
    size: int = 2
    binding: Optional[str] = None  # neural head id supplying the distribution

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"concept {self.name!r} needs at least 2 values")


def Binary(name, binding=None):
    return ConceptVar(name, 2, binding)


def Categorical(name, n, binding=None):
    return ConceptVar(name, n, binding)


# -- expression tree ----------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    var: ConceptVar
    value: int = 1

    def __post_init__(self):
        if not 0 <= self.value < self.var.size:
            raise ValueError(f"value {self.value} outside the domain of {self.var.name}")


@dataclass(frozen=True)
class AndL:
    children: tuple


@dataclass(frozen=True)
class OrL:
    children: tuple


@dataclass(frozen=True)
class NotL:
    child: object


@dataclass(frozen=True)
class IfL:
    antecedent: object
    consequent: object


@dataclass(frozen=True)
class ExistsL:
    """Disjunction over an explicit, finite candidate set."""
    children: tuple


@dataclass(frozen=True)
class ExactL:
    """Exactly one of the literals holds."""
    children: tuple


def is_(var, value=1):
    return Lit(var, value)


def andL(*children):
    return AndL(tuple(children))


def orL(*children):
    return OrL(tuple(children))


def notL(child):
    return NotL(child)


def ifL(antecedent, consequent):
    return IfL(antecedent, consequent)


def existsL(candidates, body=None):
    """``existsL([c1, c2])`` or ``existsL(items, lambda item: expr)``."""
    candidates = list(candidates)
    if body is not None:
        candidates = [body(c) for c in candidates]
    if not candidates:
        raise ValueError("existsL needs at least one candidate")
    return ExistsL(tuple(candidates))


def exactL(*lits):
    if not all(isinstance(lit, Lit) for lit in lits):
        raise TypeError("exactL takes literals")
    return ExactL(tuple(lits))


def variables(expr):
    """Concept variables used by ``expr``, in first-use order."""
    seen = {}

    def walk(node):
        if isinstance(node, Lit):
            seen.setdefault(node.var.name, node.var)
        elif isinstance(node, (AndL, OrL, ExistsL, ExactL)):
            for c in node.children:
                walk(c)
        elif isinstance(node, NotL):
            walk(node.child)
        elif isinstance(node, IfL):
            walk(node.antecedent)
            walk(node.consequent)
        else:
            raise TypeError(f"not a constraint node: {node!r}")

    walk(expr)
    return list(seen.values())


def _is_structural_exact(node):
    vars_ = {lit.var for lit in node.children}
    if len(vars_) != 1:
        return False
    (var,) = vars_
    values = [lit.value for lit in node.children]
    return sorted(values) == list(range(var.size))


def _vector(assignments, var):
    if var.name not in assignments:
        raise errors.UnboundVariable(f"no distribution bound for concept {var.name!r}")
    return assignments[var.name]


# -- soft semantics -----------------------------------------------------------

def _forward(node, assignments, values):
    if isinstance(node, Lit):
        v = float(_vector(assignments, node.var)[node.value])
    elif isinstance(node, AndL):
        v = 1.0
        for c in node.children:
            v *= _forward(c, assignments, values)
    elif isinstance(node, (OrL, ExistsL)):
        q = 1.0
        for c in node.children:
            q *= 1.0 - _forward(c, assignments, values)
        v = 1.0 - q
    elif isinstance(node, NotL):
        v = 1.0 - _forward(node.child, assignments, values)
    elif isinstance(node, IfL):
        a = _forward(node.antecedent, assignments, values)
        b = _forward(node.consequent, assignments, values)
        v = 1.0 if a <= b else b / a
    elif isinstance(node, ExactL):
        s = sum(_forward(c, assignments, values) for c in node.children)
        v = 1.0 if _is_structural_exact(node) else min(1.0, max(0.0, 1.0 - abs(s - 1.0)))
    else:
        raise TypeError(f"not a constraint node: {node!r}")
    values[id(node)] = v
    return v


def _others_product(factors):
    n = len(factors)
    prefix = [1.0] * (n + 1)
    for i, f in enumerate(factors):
        prefix[i + 1] = prefix[i] * f
    suffix = [1.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] * factors[i]
    return [prefix[i] * suffix[i + 1] for i in range(n)]


def _backward(node, adj, assignments, values, grads):
    if adj == 0.0:
        return
    if isinstance(node, Lit):
        grads[node.var.name][node.value] += adj
    elif isinstance(node, AndL):
        child_vals = [values[id(c)] for c in node.children]
        for c, d in zip(node.children, _others_product(child_vals)):
            _backward(c, adj * d, assignments, values, grads)
    elif isinstance(node, (OrL, ExistsL)):
        comp = [1.0 - values[id(c)] for c in node.children]
        for c, d in zip(node.children, _others_product(comp)):
            _backward(c, adj * d, assignments, values, grads)
    elif isinstance(node, NotL):
        _backward(node.child, -adj, assignments, values, grads)
    elif isinstance(node, IfL):
        a = values[id(node.antecedent)]
        b = values[id(node.consequent)]
        # Flat side (and the kink a == b) has zero slope.
        if a > b:
            _backward(node.antecedent, adj * (-b / (a * a)), assignments, values, grads)
            _backward(node.consequent, adj / a, assignments, values, grads)
    elif isinstance(node, ExactL):
        if _is_structural_exact(node):
            return
        s = sum(values[id(c)] for c in node.children)
        dev = s - 1.0
        if dev == 0.0 or abs(dev) >= 1.0:
            return
        slope = -1.0 if dev > 0 else 1.0
        for c in node.children:
            _backward(c, adj * slope, assignments, values, grads)


def soft_eval(expr, assignments) -> float:
    """Degree of satisfaction in [0, 1] under the product t-norm."""
    return _forward(expr, assignments, {})


def soft_loss_grad(expr, assignments):
    """``(1 - degree, {var name: d loss / d probability vector})``."""
    values = {}
    degree = _forward(expr, assignments, values)
    grads = {v.name: np.zeros(len(_vector(assignments, v))) for v in variables(expr)}
    _backward(expr, -1.0, assignments, values, grads)
    return 1.0 - degree, grads


# -- hard semantics -----------------------------------------------------------

def hard_eval(expr, assignment):
    """Boolean truth under a discrete assignment (var name -> value).

    Values may be numpy integer arrays, in which case the result is a
    boolean array evaluated element-wise.
    """
    if isinstance(expr, Lit):
        if expr.var.name not in assignment:
            raise errors.UnboundVariable(f"no value bound for concept {expr.var.name!r}")
        return np.asarray(assignment[expr.var.name]) == expr.value
    if isinstance(expr, AndL):
        return np.logical_and.reduce([hard_eval(c, assignment) for c in expr.children])
    if isinstance(expr, (OrL, ExistsL)):
        return np.logical_or.reduce([hard_eval(c, assignment) for c in expr.children])
    if isinstance(expr, NotL):
        return np.logical_not(hard_eval(expr.child, assignment))
    if isinstance(expr, IfL):
        return np.logical_or(np.logical_not(hard_eval(expr.antecedent, assignment)),
                             hard_eval(expr.consequent, assignment))
    if isinstance(expr, ExactL):
        count = sum(hard_eval(c, assignment).astype(int) for c in expr.children)
        return count == 1
    raise TypeError(f"not a constraint node: {expr!r}")


def holds(expr, assignment) -> bool:
    return bool(hard_eval(expr, assignment))


# -- sampling loss --------------------------------------------------------------

def sampling_loss(expr, assignments, sample_count, rng_seed=0):
    """Monte-Carlo violation rate and its score-function gradient.

    Samples every variable independently from its distribution; the loss is
    the fraction of samples violating ``expr`` and the gradient w.r.t.
    p_v[j] averages ``violated * [s_v == j] / p_v[j]``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    vars_ = variables(expr)
    samples = {}
    for var in vars_:
        p = np.asarray(_vector(assignments, var), dtype=np.float64)
        cdf = np.cumsum(p)
        u = rng.random(sample_count) * cdf[-1]
        samples[var.name] = np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)
    violated = ~np.asarray(hard_eval(expr, samples), dtype=bool)
    violated = np.broadcast_to(violated, (sample_count,)).astype(np.float64)
    loss = float(violated.mean())
    grads = {}
    for var in vars_:
        p = np.asarray(_vector(assignments, var), dtype=np.float64)
        counts = np.bincount(samples[var.name], weights=violated, minlength=len(p))
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(p > 0, counts / (sample_count * np.where(p > 0, p, 1.0)), 0.0)
        grads[var.name] = g
    return loss, grads


# -- primal-dual ----------------------------------------------------------------

@dataclass(frozen=True)
class LagrangeState:
    multipliers: dict = field(default_factory=dict)  # constraint id -> lambda >= 0
    step_size: float = DEFAULT_DUAL_STEP


def primal_dual_step(state: LagrangeState, degrees: dict):
    """Return the multipliers to weight this step's ``1 - degree`` terms,
    and the state after dual ascent ``lambda <- max(0, lambda + eta (1 - degree))``."""
    weights = {}
    updated = dict(state.multipliers)
    for cid, degree in degrees.items():
        if not 0.0 <= degree <= 1.0:
            raise ValueError(f"degree of {cid!r} outside [0, 1]: {degree}")
        lam = state.multipliers.get(cid, 0.0)
        weights[cid] = lam
        updated[cid] = max(0.0, lam + state.step_size * (1.0 - degree))
    return weights, replace(state, multipliers=updated)


def augmented_penalty(weights, degrees):
    return sum(weights[cid] * (1.0 - degrees[cid]) for cid in degrees)


# -- constrained decoding --------------------------------------------------------

@dataclass
class MapResult:
    assignment: dict
    feasible: bool
    log_score: float

    @property
    def infeasible(self):
        return not self.feasible


def constrained_map(assignments, hard_constraints=(), search_cap=DEFAULT_SEARCH_CAP) -> MapResult:
    """Most probable joint assignment satisfying every hard constraint.

    Exhaustive over the product of the variables' domains (in the order of
    ``assignments``), so ties go to the lexicographically smallest
    assignment.  With no feasible assignment the unconstrained per-variable
    argmax is returned with ``feasible=False``.
    """
    names = list(assignments)
    sizes = [len(assignments[n]) for n in names]
    space = math.prod(sizes)
    if space > search_cap:
        raise errors.SearchSpaceTooLarge(f"joint space of {space} assignments exceeds cap {search_cap}")
    with np.errstate(divide="ignore"):
        logs = [np.log(np.asarray(assignments[n], dtype=np.float64)) for n in names]

    grids = np.indices(sizes).reshape(len(sizes), -1)
    joint = {n: grids[i] for i, n in enumerate(names)}
    scores = np.zeros(space)
    for i in range(len(names)):
        scores = scores + logs[i][grids[i]]
    mask = np.ones(space, dtype=bool)
    for constraint in hard_constraints:
        mask &= np.broadcast_to(np.asarray(hard_eval(constraint, joint), dtype=bool), (space,))

    feasible = np.flatnonzero(mask)
    if len(feasible):
        best = feasible[int(np.argmax(scores[feasible]))]
        return MapResult({n: int(joint[n][best]) for n in names}, True, float(scores[best]))
    choice = {n: int(np.argmax(assignments[n])) for n in names}
    score = float(sum(logs[i][choice[n]] for i, n in enumerate(names)))
    return MapResult(choice, False, score)
