"""Exception types raised by the bandloc numerics."""


class BandlocError(Exception):
    """Base class for all package errors."""


class DomainError(BandlocError, ValueError):
    """An argument lies outside the domain of an operation."""


class ExactlySingular(BandlocError):
    """A Schur complement is numerically singular (measure-zero event)."""

    def __init__(self, index, smin=None, norm=None):
        self.index = index
        self.smin = smin
        self.norm = norm
        super().__init__(f"Gamma_{index} singular: smin={smin!r}, norm={norm!r}")


class NonDecaying(BandlocError):
    """A moment series shows no exponential decay."""


class DegenerateWeights(BandlocError):
    """Self-normalized weights collapsed onto too few samples."""


class RegimeViolation(BandlocError):
    """The shift parameters leave the regime where the maps are injective."""


class CapExceeded(BandlocError):
    """A dense computation would exceed its configured size cap."""
