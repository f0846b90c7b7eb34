from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_REJECTED = 3
EXIT_CONTRACT = 4
EXIT_NETWORK = 5


class DbcAbacError(Exception):
    """Base error; ``code`` is the name reported in result envelopes."""
    code = 'Error'
    exit_code = 1

    def __init__(self, message: str = ''):
        super().__init__(message or self.code)
        self.message = message or self.code

    def to_envelope(self) -> dict:
        return {'code': self.code, 'message': self.message}


class ConfigError(DbcAbacError):
    code = 'ConfigError'
    exit_code = EXIT_USAGE


# contracts

class ContractError(DbcAbacError):
    code = 'ContractError'
    exit_code = EXIT_CONTRACT


class InvalidPolicy(ContractError):
    code = 'InvalidPolicy'

    def __init__(self, violations: list[str]):
        super().__init__('; '.join(violations))
        self.violations = list(violations)


class PolicyExists(ContractError):
    code = 'PolicyExists'


class NotFound(ContractError):
    code = 'NotFound'


class KeyMismatch(ContractError):
    code = 'KeyMismatch'


class Unauthorized(ContractError):
    code = 'Unauthorized'


class NotOwner(ContractError):
    code = 'NotOwner'


class UnknownUser(ContractError):
    code = 'UnknownUser'


class BadCertificate(ContractError):
    code = 'BadCertificate'


class UnknownFunction(ContractError):
    code = 'UnknownFunction'


class MalformedRequest(ContractError):
    code = 'MalformedRequest'


# identity

class BadSecret(ContractError):
    code = 'BadSecret'


class UnknownId(ContractError):
    code = 'UnknownId'


class AlreadyRegistered(ContractError):
    code = 'AlreadyRegistered'


# ledger

class LedgerError(DbcAbacError):
    code = 'LedgerError'
    exit_code = EXIT_CONTRACT


class EndorsementMismatch(LedgerError):
    code = 'EndorsementMismatch'


class InsufficientEndorsements(LedgerError):
    code = 'InsufficientEndorsements'


class BrokenChain(LedgerError):
    code = 'BrokenChain'

    def __init__(self, message: str = '', height: int | None = None):
        super().__init__(message)
        self.height = height


class StateAccessOutsideSimulation(LedgerError):
    code = 'StateAccessOutsideSimulation'


class TxInvalidated(LedgerError):
    code = 'TxInvalidated'


class ClockSkew(LedgerError):
    code = 'ClockSkew'


# domains

class AccessRejected(DbcAbacError):
    code = 'AccessRejected'
    exit_code = EXIT_REJECTED

    def __init__(self, reason: str):
        super().__init__(f'reject: {reason}')
        self.reason = reason


class DataNotFound(ContractError):
    code = 'DataNotFound'


class GrantNotFound(ContractError):
    code = 'GrantNotFound'


class HashMismatch(ContractError):
    code = 'HashMismatch'


class NetworkError(DbcAbacError):
    code = 'NetworkError'
    exit_code = EXIT_NETWORK


class UnknownDomain(NetworkError):
    code = 'UnknownDomain'


class ForwardFailed(NetworkError):
    code = 'ForwardFailed'


class PortInUse(NetworkError):
    code = 'PortInUse'


class TransportError(NetworkError):
    code = 'TransportError'


# bench

class FixtureError(DbcAbacError):
    code = 'FixtureError'
    exit_code = EXIT_CONTRACT


def _subclasses(cls):
    for sub in cls.__subclasses__():
        yield sub
        yield from _subclasses(sub)


_BY_CODE = {cls.code: cls for cls in _subclasses(DbcAbacError)}


def from_code(code: str, message: str) -> DbcAbacError:
    """
    The from_code function rebuilds an exception received in a result envelope.
    Unknown codes fall back to a plain ContractError carrying the code in its message.

    :param code: str: Error name from the envelope
    :param message: str: Error message from the envelope
    :return: The matching exception instance
    """
    cls = _BY_CODE.get(code)
    if cls is None:
        return ContractError(f'{code}: {message}')
    if cls is InvalidPolicy:
        return InvalidPolicy(message.split('; ') if message else [])
    if cls is AccessRejected:
        return AccessRejected(message.removeprefix('reject: '))
    if cls is BrokenChain:
        return BrokenChain(message)
    err = cls.__new__(cls)
    DbcAbacError.__init__(err, message)
    return err
