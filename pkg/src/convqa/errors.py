"""Exception types shared across the library."""


class ConvqaError(Exception):
    """Base class for all library-specific errors."""


class ShapeError(ConvqaError, ValueError):
    """Operands have incompatible shapes or ranks."""


class SequenceTooShortError(ShapeError):
    """Sequence is shorter than the convolution receptive field."""


class QuestionTooLongError(ConvqaError, ValueError):
    """Question exceeds the fixed maximum length (no silent truncation)."""


class VocabularyError(ConvqaError, ValueError):
    """Token or image id outside the known vocabulary."""


class ParseError(ConvqaError, ValueError):
    """Malformed record in an input file; message carries the line number."""


class DuplicateIdError(ParseError):
    """The same id appears on more than one record."""


class NumericError(ConvqaError, ArithmeticError):
    """A computation produced a non-finite value."""


class TaxonomyError(ConvqaError, ValueError):
    """Taxonomy file or tree structure is invalid."""


class OutOfTaxonomyError(TaxonomyError):
    """A word is missing from the taxonomy (raised only in strict mode)."""


class ConfigError(ConvqaError, ValueError):
    """Configuration values are inconsistent or unsupported."""
