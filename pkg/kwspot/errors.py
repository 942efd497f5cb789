class KwsError(Exception):
    """Base class for every error raised by kwspot"""


class ConfigError(KwsError):
    """Invalid experiment or service configuration"""


class DataError(KwsError):
    """Problem with input data (lexicon, corpus, score files)"""


class UnknownWord(DataError):
    def __init__(self, word: str):
        super().__init__(f"no pronunciation for word: {word!r}")
        self.word = word


class UnknownUnit(DataError):
    def __init__(self, unit):
        super().__init__(f"unit not in vocabulary: {unit!r}")
        self.unit = unit


class LexiconError(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptyAlignment(DataError):
    pass


class EmptyScores(DataError):
    pass


class EmptyDev(DataError):
    pass


class UncoveredPhone(DataError):
    def __init__(self, phone: str):
        super().__init__(f"phone never aligned in the dev set: {phone!r}")
        self.phone = phone


class FormatError(DataError):
    pass


class AlignmentMismatch(DataError):
    pass


class LengthMismatch(KwsError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"length mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class DimensionMismatch(KwsError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class GraphError(KwsError):
    """Problem with a topology or a scoring lattice"""


class MissingSpecialUnit(GraphError):
    def __init__(self, special: str):
        super().__init__(f"inventory lacks the special unit {special!r}")
        self.special = special


class NoPath(GraphError):
    """No accepting path of the requested length exists"""


class Infeasible(NoPath):
    """Utterance is shorter than the minimal framing of its labels"""


class TooManyPaths(GraphError):
    pass
