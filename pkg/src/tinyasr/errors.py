"""Exception types shared across the pipeline.

Each class carries the CLI exit code for failures of its kind:
1 = configuration error, 2 = data error, 3 = training failure.
"""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    """Bad configuration: unknown keys, invalid values, impossible requests."""

    exit_code = 1


class DataError(PipelineError):
    """Bad input data: malformed files, schema violations, format mismatches."""

    exit_code = 2


class TrainingError(PipelineError):
    """Training aborted: divergence or non-finite gradients."""

    exit_code = 3
