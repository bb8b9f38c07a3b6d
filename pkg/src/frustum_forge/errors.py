"""Exception hierarchy shared by every stage of the pipeline."""


class FrustumForgeError(Exception):
    pass


class DataError(FrustumForgeError):
    """Input data is malformed or inconsistent (CLI exit code 3)."""


class IoError(DataError, OSError):
    pass


class FormatError(DataError):
    pass


class ConfigError(FormatError):
    """Bad configuration value or key (CLI exit code 2)."""


class UnknownCameraError(DataError):
    """A record references a camera_id that is not part of the rig."""


class NonPositiveDepth(FrustumForgeError):
    pass


class BoxBehindCamera(FrustumForgeError):
    pass


class EmptyFrustum(FrustumForgeError):
    pass


class MissingAnchor(DataError):
    pass


class PlacementExhausted(FrustumForgeError):
    pass


class DegenerateEma(FrustumForgeError):
    pass


class DegenerateCluster(FrustumForgeError):
    pass


class EmptyClassSet(FrustumForgeError):
    pass
