from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec
from jose import jws
from jose.exceptions import JOSEError
from jose.utils import base64url_encode

ALGORITHM = 'ES256'


def generate_keypair() -> tuple[str, str]:
    """
    The generate_keypair function creates a fresh P-256 signing key.

    :return: (private key PEM, public key PEM)
    """
    key = ec.generate_private_key(ec.SECP256R1())
    private_pem = key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    ).decode('ascii')
    public_pem = key.public_key().public_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    ).decode('ascii')
    return private_pem, public_pem


def sign(payload: bytes, private_key: str) -> str:
    """
    The sign function produces a detached JWS (``header..signature``) over the payload.
    The payload itself is not embedded; the verifier supplies it again.

    :param payload: bytes: Canonical bytes to sign
    :param private_key: str: PEM private key
    :return: The detached signature
    """
    token = jws.sign(payload, private_key, algorithm=ALGORITHM)
    header, _, signature = token.split('.')
    return f'{header}..{signature}'


def verify(payload: bytes, signature: str, public_key: str) -> bool:
    """
    The verify function checks a detached signature produced by sign.

    :param payload: bytes: The bytes that were signed
    :param signature: str: Detached JWS
    :param public_key: str: PEM public key of the signer
    :return: True if the signature verifies
    """
    parts = signature.split('.')
    if len(parts) != 3 or parts[1]:
        return False
    token = '.'.join((parts[0], base64url_encode(payload).decode('ascii'), parts[2]))
    try:
        jws.verify(token, public_key, algorithms=[ALGORITHM])
    except (JOSEError, ValueError, TypeError):
        return False
    return True
