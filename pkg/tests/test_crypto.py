import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soundpair import crypto
from soundpair.crypto import (
    BASE_ELEMENT,
    ContactCard,
    DuplicateParticipant,
    GdhState,
    MalformedElement,
    PayloadAuthError,
    SerializationError,
)


def make_card(i=0):
    return ContactCard(
        name=f"user{i}",
        avatar_digest=crypto.sha256(f"avatar{i}".encode()),
        description="desk",
        public_key=crypto.gen_keypair(random.Random(1000 + i)).public_key,
    )


def make_session(seed=0, n=3):
    """A full set of per-participant material sharing one group key."""
    rng = random.Random(seed)
    ids = sorted(rng.randbytes(16) for _ in range(n))
    dh = [crypto.gen_keypair(rng) for _ in range(n)]
    nonces = [crypto.gen_nonces(rng) for _ in range(n)]
    shared = BASE_ELEMENT
    for kp in dh:
        shared = crypto.element_exp(shared, kp.secret_scalar)
    key = crypto.derive_group_key(shared, [kp.public_key for kp in dh])
    bundles = [
        crypto.commit(make_card(i), nonces[i], dh[i].public_key, key, ids[i])
        for i in range(n)
    ]
    return ids, dh, nonces, key, bundles


class TestKeyPair:
    def test_deterministic_for_fixed_seed(self):
        a = crypto.gen_keypair(random.Random(0))
        b = crypto.gen_keypair(random.Random(0))
        assert a == b

    def test_distinct_seeds_distinct_keys(self):
        a = crypto.gen_keypair(random.Random(0))
        b = crypto.gen_keypair(random.Random(1))
        assert a.public_key != b.public_key

    def test_public_rederives_from_secret(self):
        kp = crypto.gen_keypair(random.Random(7))
        assert crypto.derive_public(kp.secret_scalar) == kp.public_key


class TestNonces:
    def test_success_differs_from_abort(self):
        for seed in range(50):
            np_ = crypto.gen_nonces(random.Random(seed))
            assert np_.success_nonce != np_.abort_nonce
            assert len(np_.success_nonce) == 32 and len(np_.abort_nonce) == 32


class TestCommitment:
    def test_roundtrip_verifies(self):
        _, _, _, _, bundles = make_session()
        assert all(crypto.verify_commitment(b) for b in bundles)

    def test_any_ciphertext_byte_flip_fails(self):
        _, _, _, _, bundles = make_session()
        b = bundles[0]
        ct = bytearray(b.payload_ciphertext)
        ct[len(ct) // 2] ^= 0x01
        tampered = crypto.CommitmentBundle(
            b.participant_id, b.success_digest, b.abort_digest, bytes(ct), b.dh_public, b.outer_commitment
        )
        assert not crypto.verify_commitment(tampered)

    def test_altered_success_digest_fails(self):
        _, _, _, _, bundles = make_session()
        b = bundles[0]
        tampered = crypto.CommitmentBundle(
            b.participant_id, bytes(32), b.abort_digest, b.payload_ciphertext, b.dh_public, b.outer_commitment
        )
        assert not crypto.verify_commitment(tampered)

    def test_altered_dh_public_fails(self):
        _, _, _, _, bundles = make_session()
        b = bundles[0]
        other = crypto.gen_keypair(random.Random(999)).public_key
        tampered = crypto.CommitmentBundle(
            b.participant_id, b.success_digest, b.abort_digest, b.payload_ciphertext, other, b.outer_commitment
        )
        assert not crypto.verify_commitment(tampered)

    def test_same_inputs_identical_bundle(self):
        a = make_session(seed=5)[-1]
        b = make_session(seed=5)[-1]
        assert [x.to_bytes() for x in a] == [y.to_bytes() for y in b]

    def test_serialization_roundtrip(self):
        _, _, _, _, bundles = make_session()
        for b in bundles:
            assert crypto.CommitmentBundle.from_bytes(b.to_bytes()) == b

    @given(st.integers(min_value=0, max_value=2**32), st.data())
    @settings(max_examples=300, deadline=None)
    def test_binding_random_single_byte_mutation(self, seed, data):
        _, _, _, _, bundles = make_session(seed=seed % 16)
        blob = bytearray(bundles[seed % len(bundles)].to_bytes())
        pos = data.draw(st.integers(min_value=0, max_value=len(blob) - 1))
        xor = data.draw(st.integers(min_value=1, max_value=255))
        blob[pos] ^= xor
        try:
            mutated = crypto.CommitmentBundle.from_bytes(bytes(blob))
        except SerializationError:
            return  # mutation hit a length prefix; rejected even earlier
        assert not crypto.verify_commitment(mutated)


class TestNonceOpenings:
    def test_correct_success_nonce_opens(self):
        _, _, nonces, _, bundles = make_session()
        assert crypto.open_success(bundles[0], nonces[0].success_nonce)

    def test_abort_nonce_does_not_open_success(self):
        _, _, nonces, _, bundles = make_session()
        assert not crypto.open_success(bundles[0], nonces[0].abort_nonce)

    def test_zeroed_nonce_rejected_across_sessions(self):
        # Independent check: H(0^32) never equals a sampled session digest.
        zero_digest = crypto.sha256(bytes(32))
        for seed in range(20):
            _, _, _, _, bundles = make_session(seed=seed)
            for b in bundles:
                assert zero_digest != b.success_digest
                assert not crypto.open_success(b, bytes(32))

    def test_correct_abort_nonce_opens(self):
        _, _, nonces, _, bundles = make_session()
        assert crypto.open_abort(bundles[1], nonces[1].abort_nonce)
        assert not crypto.open_abort(bundles[1], nonces[1].success_nonce)

    def test_random_nonce_rejected(self):
        _, _, _, _, bundles = make_session()
        assert not crypto.open_abort(bundles[0], random.Random(42).randbytes(32))

    def test_never_both_open(self):
        for seed in range(30):
            _, _, nonces, _, bundles = make_session(seed=seed, n=2)
            for np_, b in zip(nonces, bundles):
                for nonce in (np_.success_nonce, np_.abort_nonce):
                    assert not (crypto.open_success(b, nonce) and crypto.open_abort(b, nonce))


def run_chain(keypairs):
    """Drive the up-flow/down-flow chain; returns each member's shared element."""
    n = len(keypairs)
    states = [GdhState(kp.secret_scalar, i, n) for i, kp in enumerate(keypairs)]
    msg = crypto.gdh_contribute(states[0], [])
    for i in range(1, n):
        msg = crypto.gdh_contribute(states[i], msg)
    downflow = msg
    return [
        states[i].shared_element if states[i].is_last else crypto.gdh_finish(states[i], downflow)
        for i in range(n)
    ]


def oracle_shared(keypairs, order):
    """Independent oracle: fold the base element through the scalars directly."""
    elem = BASE_ELEMENT
    for i in order:
        elem = crypto.element_exp(elem, keypairs[i].secret_scalar)
    return elem


class TestGroupKeyAgreement:
    def test_two_party_equals_plain_dh(self):
        rng = random.Random(0)
        a, b = crypto.gen_keypair(rng), crypto.gen_keypair(rng)
        shared = run_chain([a, b])
        plain = crypto.element_exp(b.public_key, a.secret_scalar)
        assert shared[0] == shared[1] == plain
        assert plain == crypto.element_exp(a.public_key, b.secret_scalar)

    def test_three_party_matches_scalar_oracle(self):
        rng = random.Random(3)
        kps = [crypto.gen_keypair(rng) for _ in range(3)]
        shared = run_chain(kps)
        assert shared[0] == shared[1] == shared[2]
        assert shared[0] == oracle_shared(kps, [0, 1, 2])
        # scalar multiplication commutes, so any fold order agrees
        assert shared[0] == oracle_shared(kps, [2, 0, 1])

    @pytest.mark.parametrize("n", range(2, 9))
    def test_agreement_all_sizes(self, n):
        for seed in range(5):
            rng = random.Random(seed)
            kps = [crypto.gen_keypair(rng) for _ in range(n)]
            shared = run_chain(kps)
            assert len(set(shared)) == 1
            assert shared[0] == oracle_shared(kps, list(range(n)))
            key = crypto.derive_group_key(shared[0], [k.public_key for k in kps])
            key2 = crypto.derive_group_key(shared[1], [k.public_key for k in kps])
            assert key == key2 and len(key.key) == 32

    def test_substituted_scalar_changes_key_but_honest_parties_agree(self):
        rng = random.Random(9)
        kps = [crypto.gen_keypair(rng) for _ in range(3)]
        adversary = crypto.gen_keypair(random.Random(666))
        honest = run_chain(kps)
        swapped = run_chain([kps[0], adversary, kps[2]])
        assert len(set(swapped)) == 1
        assert swapped[0] != honest[0]

    def test_malformed_element_rejected(self):
        state = GdhState(crypto.gen_keypair(random.Random(0)).secret_scalar, 1, 2)
        with pytest.raises(MalformedElement):
            crypto.gdh_contribute(state, [b"\x01" * 31, b"\x02" * 32])
        with pytest.raises(MalformedElement):
            crypto.gdh_contribute(state, [b"\x01" * 32])  # wrong count

    def test_zero_element_rejected(self):
        with pytest.raises(MalformedElement):
            crypto.element_exp(bytes(32), crypto.gen_keypair(random.Random(0)).secret_scalar)


class TestVerificationHash:
    def test_order_invariant(self):
        _, _, _, _, bundles = make_session()
        a = crypto.verification_hash(bundles)
        b = crypto.verification_hash(list(reversed(bundles)))
        assert a == b

    def test_single_field_flip_changes_digest(self):
        _, _, _, _, bundles = make_session()
        base = crypto.verification_hash(bundles).digest
        b0 = bundles[0]
        other = crypto.gen_keypair(random.Random(31337)).public_key
        flipped = crypto.CommitmentBundle(
            b0.participant_id, b0.success_digest, b0.abort_digest, b0.payload_ciphertext, other, b0.outer_commitment
        )
        assert crypto.verification_hash([flipped] + bundles[1:]).digest != base

    def test_group_of_one_rejected(self):
        _, _, _, _, bundles = make_session()
        with pytest.raises(ValueError):
            crypto.verification_hash(bundles[:1])

    def test_duplicate_id_rejected(self):
        _, _, _, _, bundles = make_session()
        with pytest.raises(DuplicateParticipant):
            crypto.verification_hash([bundles[0]] + bundles)

    def test_oob_truncation_strength(self):
        _, _, _, _, bundles = make_session()
        vh = crypto.verification_hash(bundles)
        assert len(vh.oob_truncation) == 16
        assert len(vh.oob_truncation) * 8 == 128 > 24
        assert vh.oob_truncation == vh.digest[:16]


class TestPayloadSealing:
    def test_roundtrip(self):
        _, _, _, key, _ = make_session()
        card = make_card(5)
        assert crypto.open_payload(crypto.seal_payload(card, key), key) == card

    def test_wrong_key_fails_cleanly(self):
        _, _, _, key, _ = make_session(seed=0)
        _, _, _, other, _ = make_session(seed=1)
        ct = crypto.seal_payload(make_card(), key)
        with pytest.raises(PayloadAuthError):
            crypto.open_payload(ct, other)

    def test_truncation_fails(self):
        _, _, _, key, _ = make_session()
        ct = crypto.seal_payload(make_card(), key)
        with pytest.raises(PayloadAuthError):
            crypto.open_payload(ct[:-1], key)

    def test_card_serialization_roundtrip(self):
        card = make_card(3)
        assert ContactCard.from_bytes(card.to_bytes()) == card

    def test_malformed_card_bytes_rejected(self):
        with pytest.raises(SerializationError):
            ContactCard.from_bytes(b"\x00\x00\x00\xffshort")


class TestCanonicalSerialization:
    def test_pack_unpack_roundtrip(self):
        fields = [b"", b"a", b"xy" * 100]
        assert crypto.unpack_fields(crypto.pack_fields(*fields), 3) == fields

    def test_trailing_bytes_rejected(self):
        with pytest.raises(SerializationError):
            crypto.unpack_fields(crypto.pack_fields(b"a") + b"junk", 1)

    def test_truncated_rejected(self):
        with pytest.raises(SerializationError):
            crypto.unpack_fields(crypto.pack_fields(b"abc")[:-1], 1)
