"""Exception types shared across the pipeline; each maps to a CLI exit code."""


class CourseXaiError(Exception):
    exit_code = 1


class MissingInputError(CourseXaiError, FileNotFoundError):
    exit_code = 2


class ValidationError(CourseXaiError, ValueError):
    exit_code = 3


class NumericError(CourseXaiError, ArithmeticError):
    exit_code = 4
