"""Exception hierarchy.

Every error carries a numeric ``code`` (used as the CLI exit status) and the
name of the module that raised it.
"""

from __future__ import annotations


class HamfoldError(Exception):
    code = 1
    module = "hamfold"

    def record(self) -> str:
        msg = " ".join(str(self).split())
        return f"ERROR {self.code} {self.module} {msg}"


# expr
class ExprError(HamfoldError):
    code = 10
    module = "expr"


class ExprSyntaxError(ExprError):
    code = 11

    def __init__(self, message: str, offset: int, expected: frozenset[str] | set[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        exp = ""
        if self.expected:
            exp = " (expected one of: " + ", ".join(sorted(self.expected)) + ")"
        super().__init__(f"{message} at byte {offset}{exp}")


class UnknownFunction(ExprSyntaxError):
    code = 12


class MalformedSymbol(ExprSyntaxError):
    code = 13


class DomainError(ExprError):
    code = 14

    def __init__(self, message: str, subexpr=None):
        self.subexpr = subexpr
        where = f" in `{subexpr}`" if subexpr is not None else ""
        super().__init__(f"{message}{where}")


# model
class ModelError(HamfoldError):
    code = 20
    module = "model"


class ModelFileError(ModelError):
    code = 21


class DimensionError(ModelError):
    code = 22


class RankVariation(ModelError):
    code = 23

    def __init__(self, message: str, ranks=None, where=None):
        self.ranks = ranks
        self.where = where
        super().__init__(message)


class AllProbesDegenerate(ModelError):
    code = 24


class PartitionError(ModelError):
    code = 25


class SingularMatrix(ModelError):
    code = 26


# legendre
class LegendreError(HamfoldError):
    code = 30
    module = "legendre"


class NoConvergence(LegendreError):
    code = 31

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class SingularJacobian(LegendreError):
    code = 32


class VelocityDependenceViolation(LegendreError):
    code = 33


class RegimeError(LegendreError):
    code = 34


# brackets
class BracketError(HamfoldError):
    code = 40
    module = "brackets"


class SymbolSpaceMismatch(BracketError):
    code = 41


class SingularF(BracketError):
    code = 42


class MissingDecomposition(BracketError):
    code = 43


# dynamics
class DynamicsError(HamfoldError):
    code = 50
    module = "dynamics"


class InconsistentSystem(DynamicsError):
    code = 51

    def __init__(self, message: str, residual=None):
        self.residual = residual
        super().__init__(message)


class OracleUndefined(DynamicsError):
    code = 52


class TrajectoryTooShort(DynamicsError):
    code = 53


# dirac
class DiracError(HamfoldError):
    code = 60
    module = "dirac"


class OffSurface(DiracError):
    code = 61


class HigherStageConstraint(InconsistentSystem):
    code = 62
    module = "dirac"


# multitime
class MultiTimeError(HamfoldError):
    code = 70
    module = "multitime"


class PathError(MultiTimeError):
    code = 71


# cli
class ConfigError(HamfoldError):
    code = 80
    module = "cli"


class CriterionFailed(HamfoldError):
    code = 90
    module = "selftest"
