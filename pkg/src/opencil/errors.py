"""Exception types shared across the package."""


class OpenCILError(Exception):
    """Base class for all errors raised by this package."""


class DataError(OpenCILError):
    """Malformed dataset contents or violated dataset contracts."""


class ModelError(OpenCILError):
    """Invalid model state or failed training preconditions."""


class ModelIOError(OpenCILError):
    """Unreadable, truncated, or version-incompatible model files."""


class ConfigError(OpenCILError):
    """Bad command-line usage or configuration file contents."""
