"""Provenance semirings and exact probability/gradient extraction.

Every derived tuple carries a tag from one semiring.  The scalar semirings
(Boolean, MaxMin, AddMultProb) tag tuples with a number; the proof
semirings tag them with a set of proofs, each proof being the sorted tuple
of input facts it uses.  Probabilities are only extracted at query time by
weighted model counting over the retained proofs.
"""

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional

from nesy.errors import ConfigError, TooManyFacts

MAX_INVOLVED_VARIABLES = 24

BOOLEAN = "Boolean"
MAXMIN = "MaxMin"
ADDMULT = "AddMultProb"
TOPK = "TopKProofs"
TOPK_GRAD = "TopKProofsGrad"
KINDS = (BOOLEAN, MAXMIN, ADDMULT, TOPK, TOPK_GRAD)


class FactId(NamedTuple):
    group: int
    member: int


@dataclass(frozen=True)
class SemiringSpec:
    kind: str
    k: Optional[int] = None  # None: keep every proof

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown semiring kind {self.kind!r}")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"top-k bound must be >= 1, got {self.k}")

    def __str__(self):
        if self.kind in (TOPK, TOPK_GRAD):
            return "exact" if self.k is None else f"topk:{self.k}"
        return {BOOLEAN: "bool", MAXMIN: "maxmin", ADDMULT: "addmult"}[self.kind]


def parse_semiring(text: str) -> SemiringSpec:
    """Parse the CLI notation: ``topk:K``, ``exact``, ``maxmin``, ``addmult``, ``bool``.

    ``topk:K`` and ``exact`` select the gradient-carrying proof semiring.
    """
    text = text.strip().lower()
    if text == "exact":
        return SemiringSpec(TOPK_GRAD, None)
    if text.startswith("topk:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad top-k bound in {text!r}") from None
        return SemiringSpec(TOPK_GRAD, k)
    simple = {"bool": BOOLEAN, "boolean": BOOLEAN, "maxmin": MAXMIN, "addmult": ADDMULT}
    if text in simple:
        return SemiringSpec(simple[text])
    raise ConfigError(f"unknown semiring {text!r} (expected topk:K|exact|maxmin|addmult|bool)")


class FactTable:
    """Probabilities of the input facts, grouped as in the program.

    ``probs[g][m]`` is the probability of member ``m`` of fact group ``g``.
    Groups listed in ``exclusive`` are annotated disjunctions: exactly one
    member holds in any world.
    """

    def __init__(self, probs, exclusive=()):
        self.probs = [list(map(float, row)) for row in probs]
        self.exclusive = frozenset(exclusive)

    def prob(self, fid: FactId) -> float:
        return self.probs[fid.group][fid.member]

    def __contains__(self, fid):
        return 0 <= fid.group < len(self.probs) and 0 <= fid.member < len(self.probs[fid.group])

    def with_prob(self, fid, p):
        """Copy with one fact probability replaced (used by finite differences)."""
        probs = [list(row) for row in self.probs]
        probs[fid.group][fid.member] = p
        return FactTable(probs, self.exclusive)

    def fact_ids(self):
        return [FactId(g, m) for g, row in enumerate(self.probs) for m in range(len(row))]

    def __repr__(self):
        return f"FactTable({self.probs!r}, exclusive={sorted(self.exclusive)!r})"


@dataclass
class GradProb:
    value: float
    grad: dict = field(default_factory=dict)  # FactId -> d value / d p


# -- proofs -----------------------------------------------------------------

EMPTY_PROOF = ()


def make_proof(fids, weights=None) -> Optional[tuple]:
    """Sorted, duplicate-free proof, or None if it picks two members of one
    annotated disjunction."""
    proof = tuple(sorted(set(fids)))
    if weights is not None:
        for a, b in zip(proof, proof[1:]):
            if a.group == b.group and a.group in weights.exclusive:
                return None
    return proof


def proof_prob(proof, weights) -> float:
    p = 1.0
    for fid in proof:
        p *= weights.prob(fid)
    return p


def absorb(proofs):
    """Drop every proof that is a strict superset of another."""
    ordered = sorted(set(proofs), key=lambda pr: (len(pr), pr))
    kept, kept_sets = [], []
    for proof in ordered:
        s = set(proof)
        if any(k <= s for k in kept_sets):
            continue
        kept.append(proof)
        kept_sets.append(s)
    return kept


def top_k(proofs, weights, k):
    proofs = absorb(proofs)
    if k is not None and len(proofs) > k:
        proofs.sort(key=lambda pr: (-proof_prob(pr, weights), pr))
        proofs = proofs[:k]
    return frozenset(proofs)


# -- semirings --------------------------------------------------------------

class Semiring:
    idempotent = True
    has_grad = False

    def __init__(self, spec: SemiringSpec):
        self.spec = spec

    def add_many(self, tags, weights=None):
        it = iter(tags)
        acc = next(it, self.zero())
        for tag in it:
            acc = self.add(acc, tag, weights)
        return acc

    def is_zero(self, tag):
        return self.equal(tag, self.zero())

    def equal(self, a, b):
        return a == b

    def extract_grad(self, tag, weights):
        return None


class BooleanSemiring(Semiring):
    def zero(self):
        return False

    def one(self):
        return True

    def add(self, a, b, weights=None):
        return a or b

    def mul(self, a, b, weights=None):
        return a and b

    def fact(self, fid, p, weights=None):
        return p > 0.5

    def extract(self, tag, weights=None):
        return 1.0 if tag else 0.0


class MaxMinSemiring(Semiring):
    def zero(self):
        return 0.0

    def one(self):
        return 1.0

    def add(self, a, b, weights=None):
        return max(a, b)

    def mul(self, a, b, weights=None):
        return min(a, b)

    def fact(self, fid, p, weights=None):
        return p

    def equal(self, a, b):
        return abs(a - b) <= 1e-12

    def extract(self, tag, weights=None):
        return float(tag)


class AddMultSemiring(Semiring):
    """Noisy-or addition, product multiplication. Not idempotent."""

    idempotent = False

    def zero(self):
        return 0.0

    def one(self):
        return 1.0

    def add(self, a, b, weights=None):
        return a + b - a * b

    def mul(self, a, b, weights=None):
        return a * b

    def fact(self, fid, p, weights=None):
        return p

    def equal(self, a, b):
        return abs(a - b) <= 1e-12

    def is_zero(self, tag):
        return tag == 0.0

    def extract(self, tag, weights=None):
        return float(tag)


class TopKProofsSemiring(Semiring):
    def __init__(self, spec):
        super().__init__(spec)
        self.k = spec.k

    def zero(self):
        return frozenset()

    def one(self):
        return frozenset({EMPTY_PROOF})

    def add(self, a, b, weights=None):
        if not a:
            return b
        if not b:
            return a
        return top_k(a | b, weights, self.k)

    def add_many(self, tags, weights=None):
        union = set()
        for tag in tags:
            union.update(tag)
        return top_k(union, weights, self.k) if union else frozenset()

    def mul(self, a, b, weights=None):
        out = set()
        for pa in a:
            for pb in b:
                proof = make_proof(pa + pb, weights)
                if proof is not None:
                    out.add(proof)
        return top_k(out, weights, self.k) if out else frozenset()

    def fact(self, fid, p, weights=None):
        return frozenset({(fid,)})

    def is_zero(self, tag):
        return not tag

    def extract(self, tag, weights):
        return wmc(tag, weights)


class TopKProofsGradSemiring(TopKProofsSemiring):
    has_grad = True

    def extract_grad(self, tag, weights):
        return wmc_grad(tag, weights)


_CLASSES = {
    BOOLEAN: BooleanSemiring,
    MAXMIN: MaxMinSemiring,
    ADDMULT: AddMultSemiring,
    TOPK: TopKProofsSemiring,
    TOPK_GRAD: TopKProofsGradSemiring,
}


@lru_cache(maxsize=None)
def make_semiring(spec: SemiringSpec) -> Semiring:
    return _CLASSES[spec.kind](spec)


def sr_zero(spec):
    return make_semiring(spec).zero()


def sr_one(spec):
    return make_semiring(spec).one()


def sr_add(spec, a, b, weights=None):
    return make_semiring(spec).add(a, b, weights)


def sr_mul(spec, a, b, weights=None):
    return make_semiring(spec).mul(a, b, weights)


# -- weighted model counting ------------------------------------------------
#
# Exact probability that at least one proof is fully true.  Variables are
# the independent facts and the annotated-disjunction groups that occur in
# some proof.  Evaluation conditions on one variable at a time (Shannon
# expansion over the assignment space), memoised on the residual proof set,
# which visits each distinct sub-assignment at most once.

_OTHER = None  # "some member not mentioned in any proof" / "fact false"


def _literal_form(proofs, weights):
    clauses = set()
    involved = set()
    for proof in proofs:
        lits = []
        for fid in proof:
            if fid.group in weights.exclusive:
                var = ("g", fid.group)
                lits.append((var, fid.member))
            else:
                var = ("i", fid.group, fid.member)
                lits.append((var, True))
            involved.add(var)
        clauses.add(frozenset(lits))
    return frozenset(clauses), involved


def _options(var, clauses, weights):
    """(option, weight, fact) triples covering the variable's domain.

    For a disjunction's "other" option the fact slot holds the tuple of
    unmentioned members.
    """
    if var[0] == "i":
        fid = FactId(var[1], var[2])
        p = weights.prob(fid)
        return [(True, p, fid), (_OTHER, 1.0 - p, None)]
    g = var[1]
    mentioned = sorted({lit[1] for c in clauses for lit in c if lit[0] == var})
    row = weights.probs[g]
    opts = [(m, row[m], FactId(g, m)) for m in mentioned]
    others = [m for m in range(len(row)) if m not in set(mentioned)]
    if others:
        # every unmentioned member shares the "other" branch
        opts.append((_OTHER, sum(row[m] for m in others), tuple(FactId(g, m) for m in others)))
    return opts


def _condition(clauses, var, option):
    out = set()
    for clause in clauses:
        lit = None
        for candidate in clause:
            if candidate[0] == var:
                lit = candidate
                break
        if lit is None:
            out.add(clause)
        elif option is not _OTHER and lit[1] == option:
            out.add(clause - {lit})
    return frozenset(out)


_TRUE = frozenset()


def _solve(clauses, weights, with_grad, memo):
    if not clauses:
        return 0.0, {}
    if _TRUE in clauses:
        return 1.0, {}
    hit = memo.get(clauses)
    if hit is not None:
        return hit

    counts = Counter(lit[0] for clause in clauses for lit in clause)
    var = min(counts, key=lambda v: (-counts[v], v))
    opts = _options(var, clauses, weights)

    value = 0.0
    grad = {}
    branch_values = []
    for option, weight, fid in opts:
        sub_value, sub_grad = _solve(_condition(clauses, var, option), weights, with_grad, memo)
        value += weight * sub_value
        branch_values.append(sub_value)
        if with_grad:
            for key, g in sub_grad.items():
                grad[key] = grad.get(key, 0.0) + weight * g
    if with_grad:
        if var[0] == "i":
            fid = opts[0][2]
            grad[fid] = grad.get(fid, 0.0) + (branch_values[0] - branch_values[1])
        else:
            for (option, _, fid), v in zip(opts, branch_values):
                for member in (fid if option is _OTHER else (fid,)):
                    grad[member] = grad.get(member, 0.0) + v
    memo[clauses] = (value, grad)
    return value, grad


def _prepare(proofs, weights):
    proofs = [tuple(p) for p in proofs]
    for proof in proofs:
        for fid in proof:
            if fid not in weights:
                raise KeyError(f"no weight for fact {fid}")
    clauses, involved = _literal_form(proofs, weights)
    if len(involved) > MAX_INVOLVED_VARIABLES:
        raise TooManyFacts(
            f"{len(involved)} involved variables exceed the cap of {MAX_INVOLVED_VARIABLES}"
        )
    return clauses


def wmc(proofs, weights: FactTable) -> float:
    """Probability that at least one proof holds."""
    clauses = _prepare(proofs, weights)
    return _solve(clauses, weights, False, {})[0]


def wmc_grad(proofs, weights: FactTable) -> GradProb:
    """Probability plus its partial derivatives.

    For an independent fact the partial is P(q | f) - P(q | not f).  For a
    member of an annotated disjunction it is the partial of the world sum
    with respect to that member's probability, siblings held fixed, which is
    P(q | group chose that member).
    """
    clauses = _prepare(proofs, weights)
    value, grad = _solve(clauses, weights, True, {})
    return GradProb(value, dict(grad))
