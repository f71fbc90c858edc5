"""Exception hierarchy.

Every error raised by the library derives from :class:`AU3DError`. The three
intermediate classes map onto the CLI exit codes (1 usage/config, 2 data,
3 numerical).
"""


class AU3DError(Exception):
    exit_code = 2


class ConfigError(AU3DError):
    exit_code = 1


class DataError(AU3DError):
    exit_code = 2


class NumericalError(AU3DError):
    exit_code = 3


# landmark_io
class WrongCount(DataError):
    pass


class MalformedLine(DataError):
    pass


class NonFinite(DataError):
    pass


class UnknownCellValue(DataError):
    pass


class DuplicateFrame(DataError):
    pass


class EmptyTable(DataError):
    pass


class ManifestError(DataError):
    pass


# voxelizer
class DegenerateAxis(DataError):
    pass


class InvalidC(ConfigError):
    pass


class VoxelFileError(DataError):
    pass


# neuralnet
class InvalidDescriptor(ConfigError):
    pass


class ShapeMismatch(DataError):
    pass


class MissingCache(AU3DError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedData(DataError):
    pass


class NonFiniteValue(NumericalError):
    pass


class GradientCheckFailed(NumericalError):
    pass


# experiments
class TooFewSubjects(ConfigError):
    pass


class TooFewFolds(ConfigError):
    pass


class EmptyAUIntersection(DataError):
    pass


class NoPositives(DataError):
    pass


# synthgen
class InvalidSpec(ConfigError):
    pass
