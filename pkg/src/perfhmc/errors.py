"""Exception types shared across the package."""


class PerfHmcError(Exception):
    """Base class for package errors."""


class ConfigError(PerfHmcError):
    """Invalid run configuration or input data; message names the field."""


class UnsupportedConfigError(PerfHmcError):
    """A configuration the pipeline deliberately does not support."""


class SingularMomentumError(PerfHmcError):
    """Kinetic gradient requested at p = 0 with beta < 2."""


class NonFiniteStateError(PerfHmcError):
    """Leapfrog state overflowed; records the first offending coordinate."""

    def __init__(self, what: str, coordinate: int):
        super().__init__(f"non-finite {what} at coordinate {coordinate}")
        self.coordinate = coordinate


class NonPositiveDefiniteError(PerfHmcError):
    """Hessian at the mode is not positive definite."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"Hessian not positive definite (eigenvalue {eigenvalue:.6g})")
        self.eigenvalue = eigenvalue


class CalibrationError(PerfHmcError):
    """Exploratory CFTP failed to reach full coalescence within the cap."""


class RocftpTimeoutError(PerfHmcError):
    """ROCFTP exceeded its block budget without enough coalesced blocks."""

    def __init__(self, blocks_run: int, blocks_coalesced: int, samples: int):
        super().__init__(
            f"no more coalesced blocks within budget: {blocks_coalesced} coalesced "
            f"of {blocks_run} blocks run, {samples} samples emitted"
        )
        self.blocks_run = blocks_run
        self.blocks_coalesced = blocks_coalesced
        self.samples = samples
