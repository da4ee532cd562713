"""Cryptographic core for the group contact exchange.

Keypairs and the group key agreement run over Curve25519 (32-byte
encodings, commutative scalar multiplication). Hashing is SHA-256
throughout. Contact payloads are sealed with ChaCha20-Poly1305 under the
shared group key.

All functions are pure: randomness comes in through an explicitly passed
RNG object exposing ``randbytes``, so a fixed seed reproduces every byte.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

# Standard Curve25519 base point (u = 9), as a 32-byte group element.
BASE_ELEMENT = bytes([9]) + bytes(31)

PARTICIPANT_ID_LEN = 16
ELEMENT_LEN = 32
NONCE_LEN = 32
DIGEST_LEN = 32
OOB_TRUNCATION_LEN = 16

_COMMIT_TAG = b"soundpair.commitment.v1"
_VHASH_TAG = b"soundpair.verification-hash.v1"
_GROUPKEY_TAG = b"soundpair.group-key.v1"
_SEAL_NONCE_TAG = b"soundpair.payload-nonce.v1"


class CryptoError(Exception):
    """Base class for failures in the crypto core."""


class MalformedElement(CryptoError):
    """A group element failed validation (wrong length or degenerate)."""


class PayloadAuthError(CryptoError):
    """Authenticated decryption of a contact payload failed."""


class DuplicateParticipant(CryptoError):
    """Two bundles carry the same participant id."""


class SerializationError(CryptoError):
    """A canonical byte encoding could not be parsed."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def pack_fields(*fields: bytes) -> bytes:
    """Canonical serialization: each field prefixed with a big-endian u32 length."""
    out = bytearray()
    for f in fields:
        out += struct.pack(">I", len(f))
        out += f
    return bytes(out)


def unpack_fields(data: bytes, count: int) -> list[bytes]:
    """Inverse of pack_fields; raises SerializationError on malformed input."""
    fields = []
    off = 0
    for _ in range(count):
        if off + 4 > len(data):
            raise SerializationError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, off)
        off += 4
        if off + n > len(data):
            raise SerializationError("field exceeds buffer")
        fields.append(data[off : off + n])
        off += n
    if off != len(data):
        raise SerializationError("trailing bytes after last field")
    return fields


@dataclass(frozen=True)
class ContactCard:
    """One participant's identity payload."""

    name: str
    avatar_digest: bytes
    description: str
    public_key: bytes

    def to_bytes(self) -> bytes:
        if len(self.public_key) != ELEMENT_LEN:
            raise SerializationError("public_key must be 32 bytes")
        if len(self.avatar_digest) != DIGEST_LEN:
            raise SerializationError("avatar_digest must be 32 bytes")
        return pack_fields(
            self.name.encode("utf-8"),
            self.avatar_digest,
            self.description.encode("utf-8"),
            self.public_key,
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ContactCard":
        name, avatar, desc, pk = unpack_fields(data, 4)
        if len(pk) != ELEMENT_LEN or len(avatar) != DIGEST_LEN:
            raise SerializationError("bad field length in contact card")
        return cls(
            name=name.decode("utf-8"),
            avatar_digest=avatar,
            description=desc.decode("utf-8"),
            public_key=pk,
        )


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_scalar: bytes


@dataclass(frozen=True)
class NoncePair:
    success_nonce: bytes
    abort_nonce: bytes


@dataclass(frozen=True)
class GroupKey:
    key: bytes
    transcript_binding: bytes


@dataclass(frozen=True)
class CommitmentBundle:
    """Nested commitment plus the sealed contact payload for one participant.

    outer_commitment binds the participant id, both nonce digests, the DH
    public element, and a digest of the ciphertext, so any party holding
    the bundle can re-check it without secrets.
    """

    participant_id: bytes
    success_digest: bytes
    abort_digest: bytes
    payload_ciphertext: bytes
    dh_public: bytes
    outer_commitment: bytes

    def to_bytes(self) -> bytes:
        return pack_fields(
            self.participant_id,
            self.success_digest,
            self.abort_digest,
            self.payload_ciphertext,
            self.dh_public,
            self.outer_commitment,
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CommitmentBundle":
        pid, sd, ad, ct, dh, oc = unpack_fields(data, 6)
        if (
            len(pid) != PARTICIPANT_ID_LEN
            or len(sd) != DIGEST_LEN
            or len(ad) != DIGEST_LEN
            or len(dh) != ELEMENT_LEN
            or len(oc) != DIGEST_LEN
        ):
            raise SerializationError("bad field length in commitment bundle")
        return cls(pid, sd, ad, ct, dh, oc)


@dataclass(frozen=True)
class VerificationHash:
    digest: bytes
    oob_truncation: bytes


def gen_keypair(rng) -> KeyPair:
    """Sample a Curve25519 keypair from the given RNG."""
    secret = rng.randbytes(ELEMENT_LEN)
    return KeyPair(public_key=derive_public(secret), secret_scalar=secret)


def derive_public(secret_scalar: bytes) -> bytes:
    return element_exp(BASE_ELEMENT, secret_scalar)


def gen_nonces(rng) -> NoncePair:
    success = rng.randbytes(NONCE_LEN)
    abort = rng.randbytes(NONCE_LEN)
    while abort == success:  # pragma: no cover - probability 2^-256
        abort = rng.randbytes(NONCE_LEN)
    return NoncePair(success_nonce=success, abort_nonce=abort)


def element_exp(element: bytes, scalar: bytes) -> bytes:
    """Raise a 32-byte group element by a 32-byte scalar (X25519 scalar mult)."""
    if len(element) != ELEMENT_LEN:
        raise MalformedElement(f"group element must be 32 bytes, got {len(element)}")
    if len(scalar) != ELEMENT_LEN:
        raise MalformedElement("scalar must be 32 bytes")
    sk = X25519PrivateKey.from_private_bytes(scalar)
    try:
        return sk.exchange(X25519PublicKey.from_public_bytes(element))
    except ValueError as exc:  # low-order / all-zero result
        raise MalformedElement(str(exc)) from exc


def _outer_commitment(
    participant_id: bytes,
    success_digest: bytes,
    abort_digest: bytes,
    dh_public: bytes,
    payload_ciphertext: bytes,
) -> bytes:
    return sha256(
        pack_fields(
            _COMMIT_TAG,
            participant_id,
            success_digest,
            abort_digest,
            dh_public,
            sha256(payload_ciphertext),
        )
    )


def commit(
    card: ContactCard,
    nonces: NoncePair,
    dh_public: bytes,
    group_key: GroupKey,
    participant_id: bytes,
) -> CommitmentBundle:
    """Build this participant's commitment bundle.

    The contact card is sealed under the group key; the commitment itself
    contains no secrets and is verifiable by anyone holding the bundle.
    """
    if len(participant_id) != PARTICIPANT_ID_LEN:
        raise SerializationError("participant_id must be 16 bytes")
    if len(dh_public) != ELEMENT_LEN:
        raise MalformedElement("dh_public must be 32 bytes")
    ciphertext = seal_payload(card, group_key)
    success_digest = sha256(nonces.success_nonce)
    abort_digest = sha256(nonces.abort_nonce)
    outer = _outer_commitment(
        participant_id, success_digest, abort_digest, dh_public, ciphertext
    )
    return CommitmentBundle(
        participant_id=participant_id,
        success_digest=success_digest,
        abort_digest=abort_digest,
        payload_ciphertext=ciphertext,
        dh_public=dh_public,
        outer_commitment=outer,
    )


def verify_commitment(bundle: CommitmentBundle) -> bool:
    """True iff the outer commitment recomputes from the bundle's own fields."""
    expected = _outer_commitment(
        bundle.participant_id,
        bundle.success_digest,
        bundle.abort_digest,
        bundle.dh_public,
        bundle.payload_ciphertext,
    )
    return expected == bundle.outer_commitment


def open_success(bundle: CommitmentBundle, revealed_nonce: bytes) -> bool:
    return sha256(revealed_nonce) == bundle.success_digest


def open_abort(bundle: CommitmentBundle, revealed_nonce: bytes) -> bool:
    return sha256(revealed_nonce) == bundle.abort_digest


def verification_hash(bundles: list[CommitmentBundle]) -> VerificationHash:
    """Hash over all commitments and bundles in canonical (ascending id) order.

    Raises DuplicateParticipant on repeated ids and ValueError for groups
    smaller than two.
    """
    if len(bundles) < 2:
        raise ValueError("verification hash requires a group of at least 2")
    ordered = sorted(bundles, key=lambda b: b.participant_id)
    ids = [b.participant_id for b in ordered]
    if len(set(ids)) != len(ids):
        raise DuplicateParticipant("duplicate participant id in bundle set")
    fields = [_VHASH_TAG]
    fields += [b.outer_commitment for b in ordered]
    fields += [b.to_bytes() for b in ordered]
    digest = sha256(pack_fields(*fields))
    return VerificationHash(digest=digest, oob_truncation=digest[:OOB_TRUNCATION_LEN])


def seal_payload(card: ContactCard, group_key: GroupKey) -> bytes:
    """Authenticated encryption of a contact card under the group key.

    The AEAD nonce is derived from (key, plaintext), so sealing is
    deterministic; the group key is unique per session, which keeps
    nonce reuse confined to byte-identical payloads.
    """
    plaintext = card.to_bytes()
    nonce = sha256(pack_fields(_SEAL_NONCE_TAG, group_key.key, plaintext))[:12]
    ct = ChaCha20Poly1305(group_key.key).encrypt(nonce, plaintext, None)
    return nonce + ct


def open_payload(ciphertext: bytes, group_key: GroupKey) -> ContactCard:
    """Inverse of seal_payload; raises PayloadAuthError on any tampering."""
    if len(ciphertext) < 12 + 16:
        raise PayloadAuthError("ciphertext too short")
    nonce, ct = ciphertext[:12], ciphertext[12:]
    try:
        plaintext = ChaCha20Poly1305(group_key.key).decrypt(nonce, ct, None)
    except InvalidTag as exc:
        raise PayloadAuthError("authentication tag mismatch") from exc
    return ContactCard.from_bytes(plaintext)


# --- Group Diffie-Hellman (chained up-flow / down-flow) -------------------
#
# Participants are totally ordered (ascending participant_id). The up-flow
# message after participant k holds k+1 elements:
#
#     [ g^(x1..xk / xi)  for i = 1..k ]  ++  [ g^(x1..xk) ]
#
# Each participant raises every incoming intermediate by its own scalar
# and forwards. The last participant derives K = g^(x1..xn) from the
# running product and broadcasts the down-flow list, from which everyone
# else derives the same K with one exponentiation.


@dataclass
class GdhState:
    secret_scalar: bytes
    position: int  # 0-based index in the canonical ordering
    group_size: int
    shared_element: bytes | None = None

    @property
    def is_first(self) -> bool:
        return self.position == 0

    @property
    def is_last(self) -> bool:
        return self.position == self.group_size - 1


def gdh_contribute(state: GdhState, incoming: list[bytes]) -> list[bytes]:
    """Process one up-flow hop; returns the message to forward.

    For the first participant ``incoming`` must be empty. For the last
    participant the return value is the down-flow broadcast (one element
    per earlier participant) and ``state.shared_element`` is set.
    """
    x = state.secret_scalar
    if state.is_first:
        if incoming:
            raise MalformedElement("first participant expects no incoming elements")
        return [BASE_ELEMENT, element_exp(BASE_ELEMENT, x)]
    if len(incoming) != state.position + 1:
        raise MalformedElement(
            f"expected {state.position + 1} up-flow elements, got {len(incoming)}"
        )
    partials, running = incoming[:-1], incoming[-1]
    if state.is_last:
        state.shared_element = element_exp(running, x)
        return [element_exp(p, x) for p in partials]
    return [element_exp(p, x) for p in partials] + [running, element_exp(running, x)]


def gdh_finish(state: GdhState, downflow: list[bytes]) -> bytes:
    """Derive the shared element from the down-flow broadcast."""
    if state.is_last:
        if state.shared_element is None:
            raise MalformedElement("last participant has not processed the up-flow")
        return state.shared_element
    if len(downflow) != state.group_size - 1:
        raise MalformedElement(
            f"expected {state.group_size - 1} down-flow elements, got {len(downflow)}"
        )
    state.shared_element = element_exp(downflow[state.position], state.secret_scalar)
    return state.shared_element


def derive_group_key(shared_element: bytes, dh_publics: list[bytes]) -> GroupKey:
    """Hash the shared element and the ordered public values into a GroupKey."""
    binding = sha256(pack_fields(*dh_publics))
    key = sha256(pack_fields(_GROUPKEY_TAG, shared_element, binding))
    return GroupKey(key=key, transcript_binding=binding)
