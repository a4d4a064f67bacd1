"""Exception hierarchy. Library code raises these; only the CLI catches."""


class JailVoteError(Exception):
    """Base error. `code` is the stable machine-readable identifier."""

    code = "error"


class ConfigError(JailVoteError, ValueError):
    code = "config_invalid"


class RosterRecordError(JailVoteError, ValueError):
    code = "roster_record_invalid"


class NameParseError(JailVoteError, ValueError):
    code = "unparseable_name"


class SoundexError(JailVoteError, ValueError):
    code = "soundex_no_letters"


class CalendarError(JailVoteError, KeyError):
    code = "unknown_state"

    def __str__(self) -> str:
        # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class LinkageError(JailVoteError):
    code = "linkage_failed"


class InitializationError(LinkageError, ValueError):
    code = "initialization_degenerate"


class EMError(LinkageError):
    code = "em_degenerate"


class EconometricsError(JailVoteError):
    code = "regression_failed"


class RankDeficiencyError(EconometricsError, ValueError):
    code = "rank_deficient"

    def __init__(self, columns: list[str]):
        self.columns = list(columns)
        super().__init__(f"rank deficient design; collinear columns: {', '.join(self.columns)}")


class ClusterError(EconometricsError, ValueError):
    code = "too_few_clusters"


class SingularCovarianceError(EconometricsError):
    code = "singular_vcov"


class ConvergenceError(EconometricsError):
    code = "demeaning_not_converged"


class EmptySampleError(JailVoteError, ValueError):
    code = "empty_sample"


class InstanceTooLargeError(JailVoteError, ValueError):
    code = "instance_too_large"


class SynthConfigError(JailVoteError, ValueError):
    code = "synth_config_infeasible"


class MissingInputError(JailVoteError, FileNotFoundError):
    code = "missing_input"
