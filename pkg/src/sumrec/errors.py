"""Exception hierarchy shared across the pipeline."""


class SumRecError(Exception):
    """Base class for all pipeline errors."""


# --- corpus ---

class CorpusError(SumRecError):
    pass


class MissingFile(CorpusError):
    pass


class SchemaViolation(CorpusError):
    def __init__(self, record: str, field: str, message: str = ""):
        self.record = record
        self.field = field
        super().__init__(f"{record}: field '{field}' {message}".rstrip())


class DanglingSpotReference(CorpusError):
    pass


class ScoreOutOfRange(CorpusError):
    pass


class EmptyDataset(CorpusError):
    pass


# --- prompts ---

class PromptError(SumRecError):
    pass


class TemplateMismatch(PromptError):
    pass


class WrongExemplarCount(PromptError):
    pass


class InsufficientExemplars(PromptError):
    pass


# --- gateway ---

class GatewayError(SumRecError):
    pass


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class EmptyCompletion(GatewayError):
    pass


class UnscriptedRequest(GatewayError):
    pass


# --- scoring ---

class ScoringError(SumRecError):
    pass


class UnparseableScore(ScoringError):
    pass


class SummarySplitError(ScoringError):
    pass


class MissingArtifact(ScoringError):
    pass


class RemoteScorerUnavailable(ScoringError):
    pass


# --- metrics ---

class CoverageGap(SumRecError):
    def __init__(self, missing):
        self.missing = list(missing)
        preview = ", ".join(map(str, self.missing[:5]))
        super().__init__(f"{len(self.missing)} missing prediction triples (first: {preview})")
