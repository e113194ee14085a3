class TBTMError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TBTMError):
    pass


class CipherError(TBTMError):
    """Ciphertext could not be decrypted (wrong key, tampering or bad length)."""


class MiningError(TBTMError):
    pass


class LedgerError(TBTMError):
    pass


class DomainError(TBTMError, ValueError):
    """An argument is outside the domain the operation is defined on."""


class AlreadyRegistered(TBTMError):
    pass


class NotRegistered(TBTMError, KeyError):
    pass


class AuthenticationError(TBTMError):
    pass


class IngestError(TBTMError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
