"""Exception hierarchy shared by every stage of the pipeline."""


class CarlError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""

    exit_code = 1


class ConfigError(CarlError, ValueError):
    exit_code = 1


class ShapeError(CarlError, ValueError):
    """Operand extents do not line up."""

    exit_code = 1

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NumericFault(CarlError, ArithmeticError):
    """A NaN or Inf showed up; ``op`` names the operation that produced it."""

    exit_code = 3

    def __init__(self, op, detail=""):
        self.op = op
        msg = f"non-finite value produced by '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DivergenceError(NumericFault):
    def __init__(self, detail):
        CarlError.__init__(self, f"training diverged: {detail}")
        self.op = "loss"


class DataError(CarlError):
    exit_code = 2


class ColdStartError(DataError, KeyError):
    """An id never seen in training was asked for."""

    def __str__(self):
        return str(self.args[0]) if self.args else "cold-start entity"
