"""
Error hierarchy for semdrive
Every error raised by the library derives from SemDriveError
"""

from typing import List, Optional


class SemDriveError(Exception):
    """Base exception for all semdrive errors"""
    pass


class ConfigurationError(SemDriveError):
    """Invalid configuration, unknown registry entry or unreadable config file"""
    pass


class ArgumentError(SemDriveError, ValueError):
    """Invalid argument: bad shape, out-of-range value or malformed input"""
    pass


class ProtocolError(SemDriveError):
    """Operation called in the wrong lifecycle state"""
    pass


class EmptyBufferError(SemDriveError):
    """No bucket of the replay buffer can supply a sequence"""
    pass


class NumericalError(SemDriveError):
    """A loss component became non-finite"""

    def __init__(self, component: str, value: Optional[float] = None):
        self.component = component
        self.value = value
        super().__init__(f"Non-finite value in loss component '{component}': {value}")


class CheckpointMismatchError(ConfigurationError):
    """Checkpoint was written with an incompatible configuration"""

    def __init__(self, mismatched_keys: List[str]):
        self.mismatched_keys = list(mismatched_keys)
        super().__init__(
            "Checkpoint configuration does not match: " + ", ".join(self.mismatched_keys)
        )
