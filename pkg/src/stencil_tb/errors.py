"""Error types shared across the package."""


class OutOfDomainError(ValueError):
    """A physical coordinate lies outside the grid extent."""


class RegionError(ValueError):
    """An update region overlaps the halo or leaves the interior."""


class InvalidPlanError(ValueError):
    """An execution plan violates its structural constraints."""


class StabilityError(RuntimeError):
    """The time stepping produced non-finite values."""


class ConfigError(ValueError):
    """A run configuration is malformed.

    ``field`` names the offending entry so CLI diagnostics can point at it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
