import itertools
import random

import pytest

from soundpair import crypto, engine as eng
from soundpair.crypto import ContactCard
from soundpair.engine import (
    Engine,
    InBand,
    MsgKind,
    OobReceived,
    OobVerdictEvent,
    Phase,
    ReportOutcome,
    Role,
    SendInBand,
    EmitOob,
    StartListenWindow,
    Tick,
    UserConfirm,
    Verdict,
    WireMessage,
    new_session,
    pairwise_action_count,
)
from soundpair.modem import FrameKind, ListenVerdict, OobFrame


def make_card(i, rng):
    return ContactCard(
        name=f"person-{i}",
        avatar_digest=crypto.sha256(bytes([i])),
        description="",
        public_key=crypto.gen_keypair(rng).public_key,
    )


class Bus:
    """Minimal lockstep harness: immediate delivery, no adversary."""

    def __init__(self, n, seed=0, tamper=None, confirms=None):
        rng = random.Random(seed)
        self.engines = [
            new_session(Role.COORDINATOR if i == 0 else Role.PARTICIPANT, n, make_card(i, rng), rng)
            for i in range(n)
        ]
        self.tamper = tamper
        self.confirms = confirms or {}
        self.outcomes = {}
        self.confirmed = set()

    def dispatch(self, i, actions):
        for act in actions:
            if isinstance(act, ReportOutcome):
                self.outcomes[i] = act.outcome
            elif isinstance(act, SendInBand):
                msg = act.message
                if self.tamper:
                    msg = self.tamper(msg) or msg
                for j, e in enumerate(self.engines):
                    if j == i:
                        continue
                    if act.dest is None or act.dest == e.self_id:
                        self.dispatch(j, e.step(InBand(msg)))
            elif isinstance(act, EmitOob):
                frame = act.frame
                for j, e in enumerate(self.engines):
                    if j == i:
                        continue
                    if frame.kind is FrameKind.NETWORK_INIT:
                        self.dispatch(j, e.step(OobReceived(frame)))
                    elif e.phase is Phase.AWAIT_OOB_HASH:
                        expected = e.expected_hash.oob_truncation + e.session_id
                        verdict = (
                            ListenVerdict.MATCH if frame.payload == expected else ListenVerdict.MISMATCH
                        )
                        self.dispatch(j, e.step(OobVerdictEvent(verdict)))

    def run(self, max_ticks=120):
        for tick in range(max_ticks):
            for i, e in enumerate(self.engines):
                if e.phase is Phase.AWAIT_USER_CONFIRM and i not in self.confirmed:
                    self.confirmed.add(i)
                    ok = self.confirms.get(i, True)
                    self.dispatch(i, e.step(UserConfirm(ok)))
            for i, e in enumerate(self.engines):
                self.dispatch(i, e.step(Tick(tick)))
            if len(self.outcomes) == len(self.engines):
                break
        return self.outcomes


class TestHonestRuns:
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_everyone_imports_everyone_else(self, n):
        outcomes = Bus(n, seed=n).run()
        assert len(outcomes) == n
        for i, out in outcomes.items():
            assert out.verdict is Verdict.CONTACTS_IMPORTED
            names = sorted(c.name for c in out.contacts)
            assert names == sorted(f"person-{j}" for j in range(n) if j != i)

    def test_duplicate_display_name_flagged(self):
        bus = Bus(3, seed=1)
        dup = bus.engines[2].identity
        bus.engines[1].identity = ContactCard("person-2", dup.avatar_digest, "", dup.public_key)
        outcomes = bus.run()
        assert all(o.verdict is Verdict.CONTACTS_IMPORTED for o in outcomes.values())
        assert any("duplicate-display-name" in o.flags for o in outcomes.values())


class TestUserDecision:
    def test_one_rejection_aborts_everyone(self):
        outcomes = Bus(4, seed=2, confirms={2: False}).run()
        assert outcomes[2].verdict is Verdict.ABORTED_BY_USER
        for i, out in outcomes.items():
            assert out.verdict is not Verdict.CONTACTS_IMPORTED
            assert out.contacts == ()

    def test_rejecting_releases_abort_nonce(self):
        rng = random.Random(0)
        e = new_session(Role.PARTICIPANT, 0, make_card(0, rng), rng)
        e.phase = Phase.AWAIT_USER_CONFIRM
        e.own_bundle = object()  # only checked for presence on the abort path
        actions = e.step(UserConfirm(False))
        sends = [a for a in actions if isinstance(a, SendInBand)]
        assert len(sends) == 1 and sends[0].message.kind is MsgKind.ABORT_NONCE
        assert sends[0].message.body == e.nonces.abort_nonce
        assert e.finalize().verdict is Verdict.ABORTED_BY_USER


class TestTampering:
    def test_rewritten_commit_detected_at_dispersal(self):
        mallory = crypto.gen_keypair(random.Random(31337))

        def tamper(msg):
            if msg.kind is MsgKind.COMMIT:
                b = crypto.CommitmentBundle.from_bytes(msg.body)
                forged = crypto.CommitmentBundle(
                    b.participant_id, b.success_digest, b.abort_digest,
                    b.payload_ciphertext, mallory.public_key, b.outer_commitment,
                )
                return WireMessage(msg.kind, msg.session_id, msg.sender, forged.to_bytes())
            return msg

        outcomes = Bus(3, seed=3, tamper=tamper).run()
        assert all(o.verdict is not Verdict.CONTACTS_IMPORTED for o in outcomes.values())
        assert any(o.verdict is Verdict.ABORTED_MISMATCH for o in outcomes.values())

    def test_forged_success_nonce_rejected(self):
        def tamper(msg):
            if msg.kind is MsgKind.SUCCESS_NONCE:
                return WireMessage(msg.kind, msg.session_id, msg.sender, bytes(32))
            return msg

        outcomes = Bus(3, seed=4, tamper=tamper).run()
        assert all(o.verdict is not Verdict.CONTACTS_IMPORTED for o in outcomes.values())


class TestEngineMechanics:
    def test_coordinator_announces_on_first_tick(self):
        rng = random.Random(5)
        e = new_session(Role.COORDINATOR, 4, make_card(0, rng), rng)
        actions = e.step(Tick(0))
        assert len(actions) == 1 and isinstance(actions[0], EmitOob)
        assert actions[0].frame.kind is FrameKind.NETWORK_INIT
        assert e.phase is Phase.JOINING

    def test_participant_joins_on_announcement(self):
        rng = random.Random(6)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        frame = OobFrame(FrameKind.NETWORK_INIT, b"N" * 6 + b"K" * 8 + b"S" * 16)
        actions = e.step(OobReceived(frame))
        assert e.session_id == b"S" * 16 and e.phase is Phase.JOINING
        assert len(actions) == 1 and actions[0].message.kind is MsgKind.JOIN

    def test_ready_participant_ignores_inband(self):
        rng = random.Random(7)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        msg = WireMessage(MsgKind.ROSTER, b"s" * 16, b"x" * 16, b"garbage")
        assert e.step(InBand(msg)) == []
        assert e.phase is Phase.READY

    def test_coordinator_needs_group_of_two(self):
        rng = random.Random(8)
        with pytest.raises(ValueError):
            new_session(Role.COORDINATOR, 1, make_card(0, rng), rng)

    def test_timeout_aborts(self):
        rng = random.Random(9)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        actions = e.step(Tick(e.timeout_ticks + 1))
        assert e.finalize().verdict is Verdict.ABORTED_TIMEOUT
        assert any(isinstance(a, ReportOutcome) for a in actions)

    def test_finalize_before_terminal_raises(self):
        rng = random.Random(10)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        with pytest.raises(RuntimeError):
            e.finalize()

    def test_terminal_engine_ignores_events(self):
        rng = random.Random(11)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        e.step(Tick(e.timeout_ticks + 1))
        assert e.step(Tick(999)) == []
        assert e.step(UserConfirm(True)) == []

    def test_nothing_verdict_keeps_listening(self):
        rng = random.Random(12)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        e.phase = Phase.AWAIT_OOB_HASH
        actions = e.step(OobVerdictEvent(ListenVerdict.NOTHING))
        assert actions == [StartListenWindow()]
        assert e.phase is Phase.AWAIT_OOB_HASH

    def test_foreign_frame_verdict_aborts(self):
        rng = random.Random(13)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        e.phase = Phase.AWAIT_OOB_HASH
        e.step(OobVerdictEvent(ListenVerdict.FOREIGN_FRAME))
        assert e.finalize().verdict is Verdict.ABORTED_FOREIGN_OOB

    def test_unverifiable_abort_nonce_ignored(self):
        rng = random.Random(14)
        e = new_session(Role.PARTICIPANT, 0, make_card(1, rng), rng)
        e.phase = Phase.AWAIT_NONCES
        msg = WireMessage(MsgKind.ABORT_NONCE, e.session_id, b"u" * 16, bytes(32))
        assert e.step(InBand(msg)) == []
        assert e.phase is Phase.AWAIT_NONCES

    def test_wire_message_roundtrip(self):
        msg = WireMessage(MsgKind.GDH_UP, b"s" * 16, b"i" * 16, b"\x00\x01\x02")
        assert WireMessage.from_bytes(msg.to_bytes()) == msg


class TestFuzzTotality:
    """Arbitrary event sequences never raise and never skip the terminal check."""

    def _random_event(self, rng, e):
        roll = rng.randrange(6)
        if roll == 0:
            return Tick(rng.randrange(100))
        if roll == 1:
            kind = MsgKind(rng.randrange(1, 9))
            # half the messages carry the right session id so they reach
            # the handlers instead of being filtered at the door
            sid = e.session_id if rng.random() < 0.5 and e.session_id else rng.randbytes(16)
            return InBand(
                WireMessage(kind, sid, rng.randbytes(16), rng.randbytes(rng.randrange(0, 80)))
            )
        if roll == 2:
            k = rng.choice([FrameKind.NETWORK_INIT, FrameKind.VERIFY_HASH])
            return OobReceived(OobFrame(k, rng.randbytes(rng.randrange(0, 40))))
        if roll == 3:
            return OobVerdictEvent(rng.choice(list(ListenVerdict)))
        if roll == 4:
            return UserConfirm(rng.random() < 0.5)
        return Tick(rng.randrange(200))

    @pytest.mark.parametrize("role", [Role.COORDINATOR, Role.PARTICIPANT])
    def test_random_event_storm(self, role):
        for seed in range(40):
            rng = random.Random(seed)
            e = new_session(role, 3, make_card(0, rng), rng)
            for _ in range(60):
                actions = e.step(self._random_event(rng, e))
                assert isinstance(actions, list)
                assert isinstance(e.phase, Phase)
            if e.phase in eng.TERMINAL_PHASES:
                assert e.finalize().verdict in Verdict


class TestPairwiseCount:
    def test_known_values(self):
        assert pairwise_action_count(2) == 1
        assert pairwise_action_count(7) == 21

    def test_matches_pair_enumeration(self):
        for n in range(2, 10):
            assert pairwise_action_count(n) == len(list(itertools.combinations(range(n), 2)))

    def test_rejects_singleton(self):
        with pytest.raises(ValueError):
            pairwise_action_count(1)
