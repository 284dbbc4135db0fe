"""Exception hierarchy shared across the package."""


class LlmpiaError(ValueError):
    """Base class for data and contract errors raised by llmpia."""


class MalformedLine(LlmpiaError):
    def __init__(self, line_no: int, reason: str = "malformed line"):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class EmptyQuery(MalformedLine):
    def __init__(self, line_no: int):
        super().__init__(line_no, "no query tokens between BOS and EOS")


class EmptyCorpus(LlmpiaError):
    pass


class TooFewClasses(LlmpiaError):
    pass


class InsufficientClasses(LlmpiaError):
    pass


class InsufficientSamples(LlmpiaError):
    def __init__(self, label: str, needed: int, available: int):
        self.label = label
        super().__init__(f"class {label!r} has {available} samples, needs {needed}")


class ClassTooSmall(LlmpiaError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"class {label!r} needs at least 2 samples for a stratified split")


class MissingEmbedding(LlmpiaError):
    def __init__(self, utterance_id: str):
        self.utterance_id = utterance_id
        super().__init__(f"no stored embedding for utterance {utterance_id!r}")


class DimensionMismatch(LlmpiaError):
    pass


class BackendNotTrainable(LlmpiaError):
    pass


class EmptyTargets(LlmpiaError):
    pass


class AllStopwords(LlmpiaError):
    pass


class BatchTooSmall(LlmpiaError):
    pass


class AllMasked(LlmpiaError):
    pass


class ZeroNormVector(LlmpiaError):
    pass


class IndexOutOfRange(LlmpiaError):
    pass


class EmptyConfusion(LlmpiaError):
    pass


class CheckpointError(LlmpiaError):
    pass
