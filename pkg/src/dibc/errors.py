"""Exception taxonomy shared across the library, runtime and CLI."""


class DibcError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(DibcError, ValueError):
    """A sampler or model operation was called outside its parameter domain."""


class ConfigError(DibcError, ValueError):
    """Invalid pipeline, chain or CLI configuration."""


class NumericalError(DibcError, ArithmeticError):
    """A numerical operation (typically a Cholesky factorization) failed.

    Carries a ``diagnostics`` dict with matrix condition information and,
    where available, the cluster/subcomponent context of the failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def with_context(self, **context):
        self.diagnostics.update(context)
        return self


class TransportError(DibcError, IOError):
    """A message could not be delivered or decoded."""


class FileFormatError(DibcError, ValueError):
    """A CSV/binary artifact could not be parsed; carries file context."""


class LocalChainError(DibcError):
    """A local MCMC chain aborted; ``last_trace`` holds the last good state."""

    def __init__(self, message, last_trace=None, iteration=None):
        super().__init__(message)
        self.last_trace = last_trace
        self.iteration = iteration


class PipelineError(DibcError):
    """A pipeline step failed; names the step and wraps the cause."""

    def __init__(self, step, message, partial=None):
        super().__init__(f"pipeline step '{step}' failed: {message}")
        self.step = step
        self.partial = partial
