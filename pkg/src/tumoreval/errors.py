"""Exception hierarchy shared by every module of the package."""


class TumorEvalError(Exception):
    """Base class for all errors raised by tumoreval."""


class GeometryMismatch(TumorEvalError):
    pass


class UnmappedCode(TumorEvalError):
    def __init__(self, code: int):
        super().__init__(f"label code {code} has no entry in the remap table")
        self.code = code


class NonCanonicalLabels(TumorEvalError):
    def __init__(self, codes):
        codes = sorted(int(c) for c in codes)
        super().__init__(f"label codes {codes} are not canonical (expected 0..3); remap first")
        self.codes = codes


class EmptyMask(TumorEvalError):
    pass


class ComponentOverflow(TumorEvalError):
    pass


class EmptyEnsemble(TumorEvalError):
    pass


class PrimitiveOutOfBounds(TumorEvalError):
    pass


# NIfTI I/O


class NiftiError(TumorEvalError):
    pass


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    def __init__(self, code: int):
        super().__init__(f"unsupported NIfTI datatype code {code}")
        self.code = code


class TruncatedFile(NiftiError):
    pass


class DimMismatch(NiftiError):
    pass


class IoFailure(NiftiError):
    pass


class ChannelCountMismatch(NiftiError):
    pass


class ProbabilityOutOfRange(NiftiError):
    pass


# batch harness


class NoPairsFound(TumorEvalError):
    pass


class DuplicateCaseId(TumorEvalError):
    pass
