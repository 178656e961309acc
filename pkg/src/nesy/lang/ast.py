"""AST node types for parsed programs.

Source positions are kept on every node but excluded from equality, so two
programs that differ only in layout compare equal.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

Pos = tuple[int, int]

INDEPENDENT = "Independent"
CATEGORICAL = "CategoricalAD"

COLUMN_TYPES = ("int", "sym", "float")


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = field(default=(0, 0), compare=False, repr=False)

    @property
    def anonymous(self):
        return self.name == "_"


@dataclass(frozen=True)
class Const:
    value: Union[int, float, str]
    pos: Pos = field(default=(0, 0), compare=False, repr=False)

    def __eq__(self, other):
        # 1 and 1.0 are different constants in the surface language.
        return (
            isinstance(other, Const)
            and type(self.value) is type(other.value)
            and self.value == other.value
        )

    def __hash__(self):
        return hash((type(self.value).__name__, self.value))


Term = Union[Var, Const]


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - *
    left: "Expr"
    right: "Expr"
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


Expr = Union[Var, Const, BinOp, Neg]


@dataclass(frozen=True)
class Atom:
    relation: str
    args: tuple
    pos: Pos = field(default=(0, 0), compare=False, repr=False)

    @property
    def arity(self):
        return len(self.args)

    def variables(self):
        return [a.name for a in self.args if isinstance(a, Var) and not a.anonymous]

    def is_ground(self):
        return all(isinstance(a, Const) for a in self.args)


@dataclass(frozen=True)
class Negation:
    atom: Atom
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Comparison:
    op: str  # one of == != < <= > >=
    left: Expr
    right: Expr
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


Literal = Union[Atom, Negation, Comparison]


@dataclass(frozen=True)
class RelationDecl:
    name: str
    column_types: tuple
    pos: Pos = field(default=(0, 0), compare=False, repr=False)

    @property
    def arity(self):
        return len(self.column_types)


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class ConstProb:
    p: float
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class NeuralSlot:
    head_id: str
    index: int
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


ProbSlot = Union[ConstProb, NeuralSlot]


@dataclass(frozen=True)
class FactMember:
    atom: Atom
    slot: ProbSlot


@dataclass(frozen=True)
class FactGroup:
    """A fact line. One member is an independent probabilistic fact; a
    ``;``-chain is a categorical annotated disjunction (exactly one holds)."""

    kind: str
    members: tuple
    pos: Pos = field(default=(0, 0), compare=False, repr=False)

    @property
    def relation(self):
        return self.members[0].atom.relation

    @property
    def relations(self):
        return sorted({m.atom.relation for m in self.members})


@dataclass(frozen=True)
class QueryDecl:
    name: str
    atom: Atom
    pos: Pos = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Program:
    relations: tuple = ()
    rules: tuple = ()
    fact_groups: tuple = ()
    queries: tuple = ()
    # Plain ``atom.`` lines: certain facts, not random variables.
    facts: tuple = ()

    def relation(self, name) -> Optional[RelationDecl]:
        for decl in self.relations:
            if decl.name == name:
                return decl
        return None


def expr_variables(expr):
    if isinstance(expr, Var):
        return [] if expr.anonymous else [expr.name]
    if isinstance(expr, Const):
        return []
    if isinstance(expr, Neg):
        return expr_variables(expr.operand)
    return expr_variables(expr.left) + expr_variables(expr.right)
