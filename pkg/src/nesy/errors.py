"""Exception hierarchy shared by every nesy module.

Each concrete error carries a stable ``code`` string so that tests and the
CLI can match on it without depending on message wording.
"""


class NesyError(Exception):
    code = "NesyError"


# -- language ---------------------------------------------------------------

class LexError(NesyError):
    code = "LexError"

    def __init__(self, message, line, col):
        super().__init__(f"{message} at {line}:{col}")
        self.line = line
        self.col = col


class ParseError(NesyError):
    code = "ParseError"

    def __init__(self, expected, found, position):
        line, col = position
        super().__init__(f"expected {expected}, found {found} at {line}:{col}")
        self.expected = expected
        self.found = found
        self.position = position


class UnsupportedFeature(ParseError):
    code = "UnsupportedFeature"

    def __init__(self, feature, position):
        NesyError.__init__(self, f"unsupported feature: {feature} at {position[0]}:{position[1]}")
        self.expected = "supported construct"
        self.found = feature
        self.position = position


class ValidationError(NesyError):
    code = "ValidationError"


class UnknownRelation(ValidationError):
    code = "UnknownRelation"


class DuplicateRelation(ValidationError):
    code = "DuplicateRelation"


class DuplicateQuery(ValidationError):
    code = "DuplicateQuery"


class ArityMismatch(ValidationError):
    code = "ArityMismatch"


class TypeMismatch(ValidationError):
    code = "TypeMismatch"


class NonGroundFact(ValidationError):
    code = "NonGroundFact"


class InvalidProbability(ValidationError):
    code = "InvalidProbability"


class RangeRestrictionViolation(ValidationError):
    code = "RangeRestrictionViolation"

    def __init__(self, rule, variable):
        super().__init__(f"variable {variable} is not range-restricted in rule: {rule}")
        self.rule = rule
        self.variable = variable


class UnstratifiableNegation(ValidationError):
    code = "UnstratifiableNegation"

    def __init__(self, cycle):
        super().__init__("negation through recursion: " + " -> ".join(cycle))
        self.cycle = list(cycle)


class ProbabilisticNegation(ValidationError):
    code = "ProbabilisticNegation"


# -- provenance / reasoning -------------------------------------------------

class TooManyFacts(NesyError):
    code = "TooManyFacts"


class TooManyWorlds(NesyError):
    code = "TooManyWorlds"


class MissingHead(NesyError):
    code = "MissingHead"


class IndexOutOfRange(NesyError):
    code = "IndexOutOfRange"


class NegativeProbability(NesyError):
    code = "NegativeProbability"


class NonTermination(NesyError):
    code = "NonTermination"


class UnknownQuery(NesyError):
    code = "UnknownQuery"


# -- neural ------------------------------------------------------------------

class ShapeMismatch(NesyError):
    code = "ShapeMismatch"


class NoCachedForward(NesyError):
    code = "NoCachedForward"


class BadTarget(NesyError):
    code = "BadTarget"


class CheckpointError(NesyError):
    code = "CheckpointError"


# -- constraints -------------------------------------------------------------

class UnboundVariable(NesyError):
    code = "UnboundVariable"


class SearchSpaceTooLarge(NesyError):
    code = "SearchSpaceTooLarge"


# -- data / config -----------------------------------------------------------

class BadMagic(NesyError):
    code = "BadMagic"


class TruncatedPayload(NesyError):
    code = "TruncatedPayload"


class ConfigError(NesyError):
    code = "ConfigError"


class DataError(NesyError):
    code = "DataError"
