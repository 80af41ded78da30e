"""Exception hierarchy shared across the package."""


class LuckchainError(Exception):
    pass


class ConfigurationError(LuckchainError):
    """Invalid scenario or object configuration.

    ``line`` is the 1-based config line the problem was found on, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DecodeError(LuckchainError):
    """Malformed canonical encoding."""


class EnclaveAssertion(LuckchainError):
    """An assertion inside an emulated enclave failed; no proof is produced."""


class NoRound(EnclaveAssertion):
    pass


class BadLink(EnclaveAssertion):
    pass


class WrongParent(EnclaveAssertion):
    pass


class TooEarly(EnclaveAssertion):
    pass


class ConcurrentInvocation(EnclaveAssertion):
    pass


class PowExhausted(EnclaveAssertion):
    """Inner proof-of-work search hit its iteration cap."""


class CompromiseRequired(LuckchainError):
    """Forgery attempted through a CPU that is not marked compromised."""


class InsufficientProofs(LuckchainError):
    pass
