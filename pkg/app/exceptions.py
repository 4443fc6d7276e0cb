from typing import Optional


class EngineError(Exception):
    """Base class for every error raised by the engine"""


class LineError(EngineError):
    """Error tied to one line of a line-delimited input file"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigError(EngineError):
    """Invalid or inconsistent run configuration"""


class OntologyLoadError(LineError):
    """Malformed ontology file"""


class CorpusLoadError(LineError):
    """Malformed corpus record or span that does not fit its sentence"""

    def __init__(self, message: str, line: Optional[int] = None, record_id: Optional[str] = None):
        self.record_id = record_id
        if record_id is not None:
            message = f"record {record_id!r}: {message}"
        super().__init__(message, line)


class CorpusMismatchError(EngineError):
    """Prediction and gold corpora disagree on a shared sentence"""


class EmbeddingStoreError(LineError):
    """Malformed embedding store or missing embedding"""


class ScriptLoadError(LineError):
    """Malformed replay script"""


class MissingScriptError(EngineError):
    """Scripted backend has no response for a request digest"""

    def __init__(self, backend: str, digest: str):
        self.backend = backend
        self.digest = digest
        super().__init__(f"backend {backend!r} has no scripted response for digest {digest}")


class BackendTransportError(EngineError):
    """HTTP backend failed after bounded retries"""


class OutputParseError(EngineError):
    """Model output does not match the expected answer format"""


class ParseExhaustedError(EngineError):
    """Every attempt produced unparseable output"""

    def __init__(self, backend: str, tag: str, attempts: int, last_text: str):
        self.backend = backend
        self.tag = tag
        self.attempts = attempts
        self.last_text = last_text
        super().__init__(f"{backend!r} gave no parseable output for {tag!r} after {attempts} attempts")


class PartitionError(EngineError):
    """Partition request that cannot be satisfied"""


class DegenerateGradientPointError(EngineError):
    """Gradient check evaluated at a hinge kink or a max tie"""


class EvaluationError(EngineError):
    """Scoring inputs violate a scorer precondition"""
