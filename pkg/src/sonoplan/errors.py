"""Exception hierarchy shared across the planning engine."""


class SonoplanError(Exception):
    """Base class for every error raised by this package."""


# ---- volume / mask file I/O ----

class BadMagic(SonoplanError):
    pass


class TruncatedPayload(SonoplanError):
    pass


class NonPositiveDim(SonoplanError):
    pass


# ---- case documents ----

class MalformedDocument(SonoplanError):
    pass


class MissingField(SonoplanError):
    def __init__(self, name: str):
        super().__init__(f"missing field: {name}")
        self.name = name


# ---- segmentation ----

class EllipsoidOutOfBounds(SonoplanError):
    pass


class PromptOutOfBounds(SonoplanError):
    pass


class NoPositiveSeed(SonoplanError):
    pass


class DimMismatch(SonoplanError):
    pass


# ---- radiomics ----

class EmptyMask(SonoplanError):
    pass


class NoValidPairs(SonoplanError):
    pass


# ---- dose model ----

class TooFewReplicates(SonoplanError):
    pass


class NonFiniteInput(SonoplanError):
    pass


class EmptyTrainingSet(SonoplanError):
    pass


class SchemaMismatch(SonoplanError):
    pass


class SingleClass(SonoplanError):
    pass


# ---- memory ----

class EmptyText(SonoplanError):
    pass


class ProviderFailure(SonoplanError):
    pass


class ZeroVector(SonoplanError):
    pass


class EmptyIndex(SonoplanError):
    pass


# ---- plan text parsing ----

class MissingBlock(SonoplanError):
    pass


class MissingKey(SonoplanError):
    def __init__(self, name: str):
        super().__init__(f"missing plan key: {name}")
        self.name = name


class BadValue(SonoplanError):
    def __init__(self, key: str, detail: str = ""):
        super().__init__(f"bad value for {key}" + (f": {detail}" if detail else ""))
        self.key = key


# ---- verification / workflow ----

class UnknownPlanField(SonoplanError):
    pass


class EmptyViolations(SonoplanError):
    pass


class InvalidState(SonoplanError):
    pass


class InvalidTransition(SonoplanError):
    pass


class UnknownCase(SonoplanError):
    pass
