"""Recursive-descent parser for the ``.nsl`` dialect.

Grammar (EBNF)::

    program   := (decl | rule | factline | fact | query)*
    decl      := "rel" IDENT "(" [type ("," type)*] ")" "."
    type      := "int" | "sym" | "float"
    rule      := atom ":-" literal ("," literal)* "."
    literal   := atom | "not" atom | expr cmp expr
    factline  := prob "::" atom (";" prob "::" atom)* "."
    fact      := atom "."
    prob      := FLOAT | INT | "nn" "(" IDENT "," INT ")"
    query     := "query" atom "."
    atom      := IDENT "(" [term ("," term)*] ")"
    term      := IDENT | ["-"] (INT | FLOAT) | STRING

Identifiers in argument position are variables (``_`` is anonymous);
constants are numeric or string literals.  Aggregate keywords are reserved
and rejected with :class:`UnsupportedFeature`.
"""

from nesy.errors import ParseError, UnsupportedFeature
from nesy.lang import ast
from nesy.lang.lexer import Token, tokenize

AGGREGATES = frozenset(
    {"count", "sum", "prod", "min", "max", "exists", "forall", "argmin", "argmax", "unique"}
)
_CMP = {"EQ": "==", "NE": "!=", "LT": "<", "LE": "<=", "GT": ">", "GE": ">="}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    # -- token helpers --------------------------------------------------

    def peek(self, offset=0):
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else None

    def end_pos(self):
        if not self.tokens:
            return (1, 1)
        last = self.tokens[-1]
        return (last.line, last.col + len(last.text))

    def describe(self, tok):
        return "end of input" if tok is None else (tok.text or tok.kind)

    def expect(self, kind, what=None):
        tok = self.peek()
        if tok is None or tok.kind != kind:
            pos = tok.pos if tok is not None else self.end_pos()
            raise ParseError(what or kind, self.describe(tok), pos)
        self.i += 1
        return tok

    def accept(self, kind):
        tok = self.peek()
        if tok is not None and tok.kind == kind:
            self.i += 1
            return tok
        return None

    def at_ident(self, text, offset=0):
        tok = self.peek(offset)
        return tok is not None and tok.kind == "IDENT" and tok.text == text

    def reject_unsupported(self, tok):
        if tok.kind in ("ASSIGN", "COLON"):
            raise UnsupportedFeature(f"aggregation syntax '{tok.text}'", tok.pos)

    # -- grammar --------------------------------------------------------

    def program(self):
        relations, rules, groups, queries, facts = [], [], [], [], []
        while self.peek() is not None:
            tok = self.peek()
            nxt = self.peek(1)
            if self.at_ident("rel") and nxt is not None and nxt.kind == "IDENT":
                relations.append(self.decl())
            elif self.at_ident("query") and nxt is not None and nxt.kind == "IDENT":
                queries.append(self.query())
            elif tok.kind in ("FLOAT", "INT") or self._neural_slot_ahead():
                groups.append(self.factline())
            else:
                head = self.atom()
                if self.accept("IMPLIES"):
                    body = [self.literal()]
                    while self.accept("COMMA"):
                        body.append(self.literal())
                    self.expect("PERIOD")
                    rules.append(ast.Rule(head, tuple(body), head.pos))
                else:
                    nxt = self.peek()
                    if nxt is not None:
                        self.reject_unsupported(nxt)
                    self.expect("PERIOD", "':-' or '.'")
                    facts.append(head)
        return ast.Program(tuple(relations), tuple(rules), tuple(groups), tuple(queries), tuple(facts))

    def _neural_slot_ahead(self):
        # nn(IDENT, INT) ::  -- anything else starting with "nn" is an atom.
        kinds = [t.kind if t else None for t in (self.peek(k) for k in range(1, 7))]
        return self.at_ident("nn") and kinds == ["LPAREN", "IDENT", "COMMA", "INT", "RPAREN", "DOUBLECOLON"]

    def decl(self):
        start = self.expect("IDENT")
        name = self.expect("IDENT", "relation name")
        self.expect("LPAREN")
        types = []
        if not self.accept("RPAREN"):
            types.append(self.column_type())
            while self.accept("COMMA"):
                types.append(self.column_type())
            self.expect("RPAREN")
        self.expect("PERIOD")
        return ast.RelationDecl(name.text, tuple(types), start.pos)

    def column_type(self):
        tok = self.peek()
        if tok is None or tok.kind != "IDENT" or tok.text not in ast.COLUMN_TYPES:
            raise ParseError("type (int|sym|float)", self.describe(tok), tok.pos if tok else self.end_pos())
        self.i += 1
        return tok.text

    def query(self):
        start = self.expect("IDENT")
        atom = self.atom()
        self.expect("PERIOD")
        return ast.QueryDecl(atom.relation, atom, start.pos)

    def factline(self):
        start = self.peek()
        members = [self.member()]
        while self.accept("SEMI"):
            members.append(self.member())
        self.expect("PERIOD")
        kind = ast.CATEGORICAL if len(members) > 1 else ast.INDEPENDENT
        return ast.FactGroup(kind, tuple(members), start.pos)

    def member(self):
        slot = self.prob()
        self.expect("DOUBLECOLON")
        return ast.FactMember(self.atom(), slot)

    def prob(self):
        tok = self.peek()
        if tok is not None and tok.kind in ("FLOAT", "INT"):
            self.i += 1
            return ast.ConstProb(float(tok.value), tok.pos)
        if self.at_ident("nn"):
            self.i += 1
            self.expect("LPAREN")
            head = self.expect("IDENT", "neural head id")
            self.expect("COMMA")
            index = self.expect("INT", "output index")
            self.expect("RPAREN")
            return ast.NeuralSlot(head.text, index.value, tok.pos)
        raise ParseError("probability", self.describe(tok), tok.pos if tok else self.end_pos())

    def atom(self):
        name = self.expect("IDENT", "relation name")
        if name.text in AGGREGATES and self.peek() is not None and self.peek().kind in ("LPAREN", "LT"):
            raise UnsupportedFeature(f"aggregation '{name.text}'", name.pos)
        self.expect("LPAREN")
        args = []
        if not self.accept("RPAREN"):
            args.append(self.term())
            while self.accept("COMMA"):
                args.append(self.term())
            tok = self.peek()
            if tok is not None:
                self.reject_unsupported(tok)
            self.expect("RPAREN")
        return ast.Atom(name.text, tuple(args), name.pos)

    def term(self):
        tok = self.peek()
        if tok is None:
            raise ParseError("term", "end of input", self.end_pos())
        if tok.kind == "IDENT":
            self.i += 1
            return ast.Var(tok.text, tok.pos)
        if tok.kind in ("INT", "FLOAT", "STRING"):
            self.i += 1
            return ast.Const(tok.value, tok.pos)
        if tok.kind == "MINUS":
            nxt = self.peek(1)
            if nxt is not None and nxt.kind in ("INT", "FLOAT"):
                self.i += 2
                return ast.Const(-nxt.value, tok.pos)
        self.reject_unsupported(tok)
        raise ParseError("term", self.describe(tok), tok.pos)

    def literal(self):
        tok = self.peek()
        if tok is None:
            raise ParseError("literal", "end of input", self.end_pos())
        if self.at_ident("not") and self.peek(1) is not None and self.peek(1).kind == "IDENT":
            self.i += 1
            return ast.Negation(self.atom(), tok.pos)
        nxt = self.peek(1)
        if tok.kind == "IDENT" and nxt is not None and nxt.kind in ("LPAREN", "LT") and (
            nxt.kind == "LPAREN" or tok.text in AGGREGATES
        ):
            return self.atom()
        left = self.expr()
        op_tok = self.peek()
        if op_tok is None or op_tok.kind not in _CMP:
            if op_tok is not None:
                self.reject_unsupported(op_tok)
            raise ParseError("comparison operator", self.describe(op_tok), op_tok.pos if op_tok else self.end_pos())
        self.i += 1
        right = self.expr()
        return ast.Comparison(_CMP[op_tok.kind], left, right, tok.pos)

    def expr(self):
        left = self.mul_expr()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind in ("PLUS", "MINUS"):
                self.i += 1
                left = ast.BinOp("+" if tok.kind == "PLUS" else "-", left, self.mul_expr(), tok.pos)
            else:
                return left

    def mul_expr(self):
        left = self.factor()
        while self.peek() is not None and self.peek().kind == "STAR":
            tok = self.peek()
            self.i += 1
            left = ast.BinOp("*", left, self.factor(), tok.pos)
        return left

    def factor(self):
        tok = self.peek()
        if tok is None:
            raise ParseError("expression", "end of input", self.end_pos())
        if tok.kind == "IDENT":
            self.i += 1
            return ast.Var(tok.text, tok.pos)
        if tok.kind in ("INT", "FLOAT", "STRING"):
            self.i += 1
            return ast.Const(tok.value, tok.pos)
        if tok.kind == "LPAREN":
            self.i += 1
            inner = self.expr()
            self.expect("RPAREN")
            return inner
        if tok.kind == "MINUS":
            self.i += 1
            return ast.Neg(self.factor(), tok.pos)
        self.reject_unsupported(tok)
        raise ParseError("expression", self.describe(tok), tok.pos)


def parse_program(tokens: list[Token]) -> ast.Program:
    return _Parser(tokens).program()


def parse(source: str) -> ast.Program:
    """Tokenize and parse ``source`` in one step."""
    return parse_program(tokenize(source))
