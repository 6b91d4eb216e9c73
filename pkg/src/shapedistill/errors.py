"""Exception hierarchy.

The CLI maps the three base classes onto exit codes (2 usage, 3 data, 4 numeric).
"""


class ShapeDistillError(Exception):
    exit_code = 1
    code = "ERROR"


class UsageError(ShapeDistillError):
    exit_code = 2
    code = "USAGE"


class DataError(ShapeDistillError, ValueError):
    exit_code = 3
    code = "DATA"


class NumericError(ShapeDistillError, ArithmeticError):
    exit_code = 4
    code = "NUMERIC"


# data errors
class MissingColumn(DataError):
    code = "MISSING_COLUMN"


class NonNumericCell(DataError):
    code = "NON_NUMERIC_CELL"

    def __init__(self, row: int, col: str, value: str):
        super().__init__(f"non-numeric cell {value!r} at row {row}, column {col!r}")
        self.row = row
        self.col = col
        self.value = value


class EmptyFile(DataError):
    code = "EMPTY_FILE"


class InvalidLabels(DataError):
    code = "INVALID_LABELS"


class UnknownFeature(DataError, KeyError):
    code = "UNKNOWN_FEATURE"

    def __str__(self):
        return Exception.__str__(self)


class MissingFeature(UnknownFeature):
    code = "MISSING_FEATURE"


class UnknownPairFeature(UnknownFeature):
    code = "UNKNOWN_PAIR_FEATURE"


class UnsortedCuts(DataError):
    code = "UNSORTED_CUTS"


class NoLabels(DataError):
    code = "NO_LABELS"


class DimensionMismatch(DataError):
    code = "DIMENSION_MISMATCH"


class LengthMismatch(DataError):
    code = "LENGTH_MISMATCH"


class EmptyDataset(DataError):
    code = "EMPTY_DATASET"


class EmptyBackground(DataError):
    code = "EMPTY_BACKGROUND"


class TooFewDistinctValues(DataError):
    code = "TOO_FEW_DISTINCT_VALUES"


class SchemaVersionMismatch(DataError):
    code = "SCHEMA_VERSION_MISMATCH"


class MissingArtifact(DataError):
    code = "MISSING_ARTIFACT"


class ExactModeTooManyFeatures(UsageError):
    code = "EXACT_MODE_TOO_MANY_FEATURES"


# numeric failures
class DivergedLoss(NumericError):
    code = "DIVERGED_LOSS"


class NonFiniteTarget(NumericError):
    code = "NON_FINITE_TARGET"


class SingularSystem(NumericError):
    code = "SINGULAR_SYSTEM"
