"""Exception hierarchy for offer-set optimization."""


class OfferSetError(Exception):
    """Base class for all errors raised by the package."""


class InvalidVectorError(OfferSetError, ValueError):
    """Zero-norm, non-finite or off-sphere embedding."""


class DimensionMismatchError(OfferSetError, ValueError):
    """Vectors or structures of different dimension were combined."""

    def __init__(self, expected: int, actual: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class UnknownItemError(OfferSetError, KeyError):
    """An item id is not part of the universe or parameter map."""

    def __init__(self, item_id: int, where: str = "universe"):
        super().__init__(f"item {item_id} not found in {where}")
        self.item_id = item_id

    def __str__(self) -> str:
        return str(self.args[0])


class VectorFormatError(OfferSetError, ValueError):
    """Malformed vector file (bad header, truncated payload, NaN entries)."""


class IndexFormatError(OfferSetError, ValueError):
    """Corrupt or truncated serialized index."""


class IndexVersionError(IndexFormatError):
    """Serialized index written by an unsupported format version."""


class ConfigError(OfferSetError, ValueError):
    """Invalid experiment configuration."""

    exit_code = 2


class GuardViolationError(OfferSetError, RuntimeError):
    """Exhaustive enumeration would exceed the configured subset guard."""

    exit_code = 3

    def __init__(self, subsets: int, guard: int):
        super().__init__(f"instance too large: {subsets} subsets exceeds guard {guard}")
        self.subsets = subsets
        self.guard = guard


class EmptyEnsembleError(OfferSetError, ValueError):
    """Pruning was asked to run without any sampling index."""


class ItemAlreadySelectedError(OfferSetError, ValueError):
    """Marginal gain requested for an item already in the offer set."""


class DuplicateItemError(OfferSetError, ValueError):
    """An item id occurs more than once in a universe."""


class EnsembleTooSmallError(OfferSetError, ValueError):
    """Fewer sampling indices than the requested number of draws."""

    def __init__(self, available: int, required: int):
        super().__init__(f"ensemble holds {available} indices, {required} draws requested")
        self.available = available
        self.required = required
