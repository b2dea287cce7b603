"""Exception types raised across the package.

Each class carries a short machine-readable ``code`` so the CLI can name the
failure it exits on.
"""


class SliceSimError(Exception):
    code = "slicesim-error"


class GridMismatchError(SliceSimError, ValueError):
    code = "grid-mismatch"


class PacketTooWideError(SliceSimError, ValueError):
    code = "packet-too-wide-for-grid"


class PulseOverlapError(SliceSimError, ValueError):
    code = "overlap-of-pulses"


class InstabilityError(SliceSimError, RuntimeError):
    code = "instability-detected"


class OverlappingSitesError(SliceSimError, ValueError):
    code = "overlapping-site-windows"


class CaptureRateError(SliceSimError, ValueError):
    code = "inconsistent-physics"


class BranchNotBoundError(SliceSimError, ValueError):
    code = "branch-not-bound"


class EmptyLedgerError(SliceSimError, ValueError):
    code = "empty-ledger"


class IncompleteRunError(SliceSimError, RuntimeError):
    code = "run-incomplete"


class SchemaViolation(SliceSimError, ValueError):
    code = "schema-violation"

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class InconsistentPhysics(SliceSimError, ValueError):
    code = "inconsistent-physics"


class SchemaMismatch(SliceSimError, ValueError):
    code = "schema-mismatch"


class AuditFailure(SliceSimError, RuntimeError):
    code = "audit-failure"

    def __init__(self, audit, message):
        self.audit = audit
        super().__init__(f"{audit}: {message}")
