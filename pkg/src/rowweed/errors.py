"""Exception hierarchy shared by every stage.

Each error carries the CLI exit code it maps to, so the command-line
frontend never needs a lookup table.
"""


class RowWeedError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(RowWeedError):
    exit_code = 2
    code = "bad_config"


class ConstantPlane(RowWeedError):
    code = "constant_plane"


class EmptySegmentation(RowWeedError):
    exit_code = 3
    code = "empty_segmentation"


class DegenerateComponent(RowWeedError):
    code = "degenerate_component"


class DimensionMismatch(RowWeedError):
    exit_code = 2
    code = "dimension_mismatch"


class EmptySkeleton(RowWeedError):
    exit_code = 4
    code = "empty_skeleton"


class NoLines(RowWeedError):
    exit_code = 4
    code = "no_lines"


class InvalidCount(RowWeedError):
    exit_code = 2
    code = "invalid_count"


class TooFewSamples(RowWeedError):
    exit_code = 5
    code = "too_few_samples"


class SingleClassTrainSet(TooFewSamples):
    code = "single_class_train_set"


class SingleClass(TooFewSamples):
    code = "single_class"


class MalformedCsv(RowWeedError):
    exit_code = 6
    code = "malformed_csv"


class UnknownPatch(RowWeedError):
    code = "unknown_patch"


class InvalidSpec(ConfigError):
    code = "invalid_spec"


class UnknownPreset(ConfigError):
    code = "unknown_preset"


class DatasetIOError(RowWeedError, OSError):
    exit_code = 6
    code = "io_error"
