"""Exception types raised across the package."""


class NetredError(Exception):
    """Base class for all package-specific errors."""


class NetredWarning(UserWarning):
    """Base class for package-specific warnings (rank loss, ridge fixes...)."""


class DimensionError(NetredError):
    """Matrix arguments have incompatible or invalid dimensions."""


class UnstableMatrixError(NetredError):
    """An operation required a Hurwitz matrix and did not get one."""

    def __init__(self, message, max_real_part=None):
        super().__init__(message)
        self.max_real_part = max_real_part


class SpectraOverlapError(NetredError):
    """Two spectra that must be disjoint come closer than the allowed gap."""

    def __init__(self, message, closest_pair=None, distance=None):
        super().__init__(message)
        self.closest_pair = closest_pair
        self.distance = distance


class StructureError(NetredError):
    """A matrix violates the prescribed interconnection topology."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class SolverError(NetredError):
    """An iterative solver failed to converge or detected infeasibility."""


class PoleError(NetredError):
    """Transfer-function evaluation requested at (or too close to) a pole."""


class FixtureError(NetredError):
    """A bundled data fixture is missing or fails its checksum."""
