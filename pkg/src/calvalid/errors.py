"""Exception hierarchy.

Every exception carries a short machine-readable ``code`` which the CLI
reports verbatim in its JSON error payload.
"""


class CalValidError(Exception):
    code = "Error"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    def to_dict(self):
        out = {"code": self.code, "message": str(self)}
        out.update({k: v for k, v in self.context.items() if v is not None})
        return out


class NonPositiveDepth(CalValidError):
    code = "NonPositiveDepth"

    def __init__(self, message="point lies behind the camera", index=None, depth=None):
        super().__init__(message, index=index, depth=depth)
        self.index = index
        self.depth = depth


class EmptyInput(CalValidError):
    code = "EmptyInput"


class InsufficientData(CalValidError):
    code = "InsufficientData"


class DegenerateSystem(CalValidError):
    code = "DegenerateSystem"


class AlignmentError(CalValidError):
    code = "AlignmentError"


class TooFewSamples(CalValidError):
    code = "TooFewSamples"


class TooManySamples(CalValidError):
    code = "TooManySamples"


class NonFinite(CalValidError):
    code = "NonFinite"


class ZeroVariance(CalValidError):
    code = "ZeroVariance"


class ConfigInvalid(CalValidError):
    code = "ConfigInvalid"


class NonConvergence(CalValidError):
    code = "NonConvergence"


class ParseError(CalValidError):
    """Malformed model or correspondence file.

    ``reason`` narrows the failure (``InvalidRotation``,
    ``DistortionOrderMismatch``, ``MissingField``, ``InvalidJSON``, ...).
    """

    code = "ParseError"

    def __init__(self, message, reason="Invalid", path=None, line=None, field=None):
        super().__init__(message, reason=reason, path=path, line=line, field=field)
        self.reason = reason
        self.path = path
        self.line = line
        self.field = field

    def __str__(self):
        loc = []
        if self.path is not None:
            loc.append(str(self.path))
        if self.line is not None:
            loc.append(f"line {self.line}")
        if self.field is not None:
            loc.append(f"field {self.field!r}")
        prefix = ":".join(loc)
        msg = super().__str__()
        return f"{prefix}: {self.reason}: {msg}" if prefix else f"{self.reason}: {msg}"
