"""The ``.nsl`` logic language: tokenizer, parser, validator, printer."""

from nesy.lang.ast import Program
from nesy.lang.lexer import Token, tokenize
from nesy.lang.parser import parse, parse_program
from nesy.lang.printer import pretty
from nesy.lang.validate import ValidatedProgram, validate


def load(source: str) -> ValidatedProgram:
    return validate(parse(source))


__all__ = [
    "Program",
    "Token",
    "ValidatedProgram",
    "load",
    "parse",
    "parse_program",
    "pretty",
    "tokenize",
    "validate",
]
