"""Exception hierarchy.

Each family maps onto one CLI exit code (see ``cli.EXIT_CODES``).
"""


class SdohForgeError(Exception):
    exit_code = 5


class ConfigError(SdohForgeError):
    exit_code = 2


class DataError(SdohForgeError):
    exit_code = 3


class NetworkError(SdohForgeError):
    exit_code = 4


# corpus

class MissingSection(DataError):
    def __init__(self, name):
        super().__init__(f"missing section: {name!r}")
        self.name = name


class UnknownRawValue(DataError):
    def __init__(self, raw, category=None):
        where = f" for category {category!r}" if category else ""
        super().__init__(f"unknown raw value {raw!r}{where}")
        self.raw = raw
        self.category = category


class InsufficientClass(DataError):
    def __init__(self, label, have, need):
        super().__init__(f"insufficient {label} examples: have {have}, need {need}")
        self.label = label
        self.have = have
        self.need = need


class EmptyCorpus(DataError):
    pass


# prompt

class InvariantViolation(SdohForgeError):
    pass


class ParseFailure(SdohForgeError):
    def __init__(self, reply):
        super().__init__(f"could not parse reply: {reply!r}")
        self.reply = reply


# llm client

class EndpointUnreachable(NetworkError):
    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class AuthFailure(NetworkError):
    pass


class CorruptCheckpoint(DataError):
    pass


# shot selection

class MissingGold(DataError):
    def __init__(self, note_id):
        super().__init__(f"no gold label for id {note_id!r}")
        self.note_id = note_id


class EmptyPool(DataError):
    def __init__(self, pool, strategy):
        super().__init__(f"pool {pool} is empty; cannot build strategy {strategy}")
        self.pool = pool
        self.strategy = strategy


class MissingExplanation(DataError):
    def __init__(self, note_id):
        super().__init__(f"no explanation provided for id {note_id!r}")
        self.note_id = note_id


# gbdt

class DegenerateLabels(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# metrics

class SingleClass(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoOverlap(DataError):
    def __init__(self, a, b):
        super().__init__(f"sources {a!r} and {b!r} share no ids")
        self.pair = (a, b)


# pipeline

class IncompleteRun(DataError):
    pass
