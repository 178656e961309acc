"""Canonical pretty-printer; its output re-parses to an equal AST."""

from nesy.lang import ast

_PREC = {"+": 1, "-": 1, "*": 2}


def format_const(value):
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{escaped}"'
    if isinstance(value, float):
        text = repr(value)
        # repr gives "1e-05" / "inf"; the lexer needs a digit-led literal.
        if "e" in text and "." not in text.split("e")[0]:
            mant, exp = text.split("e")
            text = f"{mant}.0e{exp}"
        return text
    return str(value)


def format_expr(expr, parent_prec=0, right=False):
    if isinstance(expr, ast.Var):
        return expr.name
    if isinstance(expr, ast.Const):
        return format_const(expr.value)
    if isinstance(expr, ast.Neg):
        inner = format_expr(expr.operand, 3)
        return f"-{inner}"
    prec = _PREC[expr.op]
    text = f"{format_expr(expr.left, prec)} {expr.op} {format_expr(expr.right, prec, right=True)}"
    if prec < parent_prec or (right and prec == parent_prec):
        return f"({text})"
    return text


def format_atom(atom):
    return f"{atom.relation}({', '.join(format_expr(a) for a in atom.args)})"


def format_literal(lit):
    if isinstance(lit, ast.Atom):
        return format_atom(lit)
    if isinstance(lit, ast.Negation):
        return f"not {format_atom(lit.atom)}"
    return f"{format_expr(lit.left)} {lit.op} {format_expr(lit.right)}"


def format_slot(slot):
    if isinstance(slot, ast.NeuralSlot):
        return f"nn({slot.head_id}, {slot.index})"
    return format_const(float(slot.p))


def pretty(program: ast.Program) -> str:
    lines = []
    for decl in program.relations:
        lines.append(f"rel {decl.name}({', '.join(decl.column_types)}).")
    for fact in program.facts:
        lines.append(f"{format_atom(fact)}.")
    for group in program.fact_groups:
        members = "; ".join(f"{format_slot(m.slot)}::{format_atom(m.atom)}" for m in group.members)
        lines.append(f"{members}.")
    for rule in program.rules:
        body = ", ".join(format_literal(lit) for lit in rule.body)
        lines.append(f"{format_atom(rule.head)} :- {body}.")
    for q in program.queries:
        lines.append(f"query {format_atom(q.atom)}.")
    return "\n".join(lines) + ("\n" if lines else "")
