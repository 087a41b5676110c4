"""Exception hierarchy shared by every puttlab module."""


class PuttlabError(Exception):
    """Base class for all library errors."""


# audio / WAV
class UnsupportedFormat(PuttlabError):
    pass


class CorruptHeader(PuttlabError):
    pass


class IoFailure(PuttlabError):
    pass


class ZeroEnergyInput(PuttlabError, ValueError):
    pass


# geometry
class DegenerateLine(PuttlabError, ValueError):
    """Clean and noisy coincide, so no S-X line exists."""


class DegenerateBasis(PuttlabError, ValueError):
    """The reference enhancement has a vanishing artifact or proximity part."""


# autodiff / nets
class ShapeMismatch(PuttlabError, ValueError):
    pass


class NotScalar(PuttlabError, ValueError):
    pass


class LengthNotAligned(PuttlabError, ValueError):
    pass


class LengthMismatch(PuttlabError, ValueError):
    pass


class RoleMismatch(PuttlabError, ValueError):
    pass


class VersionMismatch(PuttlabError):
    pass


class CorruptCheckpoint(PuttlabError):
    pass


# training
class NonFiniteLoss(PuttlabError, FloatingPointError):
    def __init__(self, batch_index, value):
        super().__init__(f"non-finite loss {value!r} at batch {batch_index}")
        self.batch_index = batch_index
        self.value = value


class SegmentTooLong(PuttlabError, ValueError):
    pass


# metrics
class ZeroReference(PuttlabError, ValueError):
    pass


class TooShort(PuttlabError, ValueError):
    pass


class UnsupportedRate(PuttlabError, ValueError):
    pass
