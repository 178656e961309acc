"""Tokenizer for the ``.nsl`` Datalog dialect."""

from dataclasses import dataclass

from nesy.errors import LexError

# Longest match first.
_PUNCT = [
    (":-", "IMPLIES"),
    ("::", "DOUBLECOLON"),
    ("==", "EQ"),
    ("!=", "NE"),
    ("<=", "LE"),
    (">=", "GE"),
    ("(", "LPAREN"),
    (")", "RPAREN"),
    (",", "COMMA"),
    (".", "PERIOD"),
    (";", "SEMI"),
    ("+", "PLUS"),
    ("-", "MINUS"),
    ("*", "STAR"),
    ("<", "LT"),
    (">", "GT"),
    # Only lexed so the parser can reject aggregation syntax with a clear error.
    ("=", "ASSIGN"),
    (":", "COLON"),
]

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    value: object
    line: int
    col: int

    @property
    def pos(self):
        return (self.line, self.col)

    def __repr__(self):
        if self.kind in ("IDENT", "INT", "FLOAT", "STRING"):
            return f"{self.kind}({self.value!r})"
        return self.kind


def _is_ident_start(ch):
    return ch.isascii() and (ch.isalpha() or ch == "_")


def _is_ident_char(ch):
    return ch.isascii() and (ch.isalnum() or ch == "_")


def tokenize(source: str) -> list[Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(count):
        nonlocal i, line, col
        for _ in range(count):
            if source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(1)
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                advance(1)
            continue

        start_line, start_col, start = line, col, i

        if _is_ident_start(ch):
            j = i
            while j < n and _is_ident_char(source[j]):
                j += 1
            text = source[i:j]
            tokens.append(Token("IDENT", text, text, start_line, start_col))
            advance(j - i)
            continue

        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            is_float = False
            # "1." followed by a non-digit is INT then PERIOD (end of clause).
            if j + 1 < n and source[j] == "." and source[j + 1].isdigit():
                is_float = True
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    is_float = True
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            text = source[i:j]
            if is_float:
                tokens.append(Token("FLOAT", text, float(text), start_line, start_col))
            else:
                tokens.append(Token("INT", text, int(text), start_line, start_col))
            advance(j - i)
            continue

        if ch == '"':
            j = i + 1
            chars = []
            while True:
                if j >= n or source[j] == "\n":
                    raise LexError("unterminated string", start_line, start_col)
                c = source[j]
                if c == '"':
                    break
                if c == "\\":
                    if j + 1 >= n or source[j + 1] not in _ESCAPES:
                        raise LexError("bad escape", start_line, start_col + (j - i))
                    chars.append(_ESCAPES[source[j + 1]])
                    j += 2
                    continue
                chars.append(c)
                j += 1
            text = source[i:j + 1]
            tokens.append(Token("STRING", text, "".join(chars), start_line, start_col))
            advance(j + 1 - start)
            continue

        for lit, kind in _PUNCT:
            if source.startswith(lit, i):
                tokens.append(Token(kind, lit, None, start_line, start_col))
                advance(len(lit))
                break
        else:
            raise LexError(f"illegal character {ch!r}", start_line, start_col)

    return tokens
