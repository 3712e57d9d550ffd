"""Exception types raised across the package."""


class PotheoriesError(Exception):
    pass


class BadArgument(PotheoriesError, ValueError):
    pass


class CapExceeded(PotheoriesError):
    pass


class ZeroWeight(PotheoriesError):
    pass


class BadPartition(PotheoriesError, ValueError):
    pass


class StepSizeUnderflow(PotheoriesError):
    pass


class MissingSnapshot(PotheoriesError, KeyError):
    pass


class BadInit(PotheoriesError, ValueError):
    pass


class EmptyRegionMass(PotheoriesError):
    pass


class NoFlashes(PotheoriesError):
    """The flash readout is undefined for this run (no qualifying flashes)."""


class ZeroProbabilityOutcome(PotheoriesError):
    pass


class PartialZeta(PotheoriesError):
    """An outcome map is undefined on a reachable flash history."""


class DegenerateInput(PotheoriesError, ValueError):
    pass


class InsufficientBinMass(PotheoriesError):
    pass
