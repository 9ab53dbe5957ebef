"""Exception hierarchy shared across the harness.

The CLI maps ConfigError to exit code 1 and any other MedbenchError
(or unexpected OS failure) to exit code 2.
"""


class MedbenchError(Exception):
    """Base class for all harness failures."""


class ConfigError(MedbenchError):
    """Invalid manifest, backend config, run config, or CLI usage."""


class ManifestError(ConfigError):
    """Manifest file violates the documented schema or its invariants."""


class RunError(MedbenchError):
    """Failure while executing a run (transport, aggregation, IO)."""
