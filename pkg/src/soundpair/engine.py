"""Event-driven session engines for the group exchange protocol.

One Engine instance drives one device through the three phases
(initialization, verification, finalization). The engine performs no
I/O: events go in, actions come out, and the surrounding harness owns
clocks, channels, and user prompts. With a fixed RNG the engine is fully
deterministic, which is what makes adversarial schedules replayable.

Coordinator timeline: announce the session acoustically, collect joins,
broadcast the roster, take part in the key agreement, disperse all
commitment bundles, then emit the verification hash on the acoustic
channel. Participants join on hearing the announcement, contribute to
the key agreement, commit, and judge the verification hash against the
bundles they received. Success and abort nonces settle the outcome.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import crypto
from .crypto import (
    CommitmentBundle,
    ContactCard,
    CryptoError,
    GdhState,
    GroupKey,
    NoncePair,
    VerificationHash,
)
from .modem import FrameKind, ListenVerdict, OobFrame, make_network_init, make_verify_hash

DEFAULT_TIMEOUT_TICKS = 50
OOB_EMIT_DELAY_TICKS = 3  # dispersal settle time before the hash is played


class Role(enum.Enum):
    COORDINATOR = "coordinator"
    PARTICIPANT = "participant"


class Phase(enum.Enum):
    IDLE = "idle"
    READY = "ready"
    JOINING = "joining"
    COMMITTING = "committing"
    DISPERSING = "dispersing"
    AWAIT_OOB_HASH = "await-oob-hash"
    AWAIT_USER_CONFIRM = "await-user-confirm"
    AWAIT_NONCES = "await-nonces"
    ACCEPTED = "accepted"
    ABORTED = "aborted"


TERMINAL_PHASES = (Phase.ACCEPTED, Phase.ABORTED)


class Verdict(enum.Enum):
    CONTACTS_IMPORTED = "contacts-imported"
    ABORTED_BY_USER = "aborted-by-user"
    ABORTED_MISMATCH = "aborted-mismatch"
    ABORTED_FOREIGN_OOB = "aborted-foreign-oob"
    ABORTED_TIMEOUT = "aborted-timeout"
    ABORTED_PROTOCOL = "aborted-protocol"


class MsgKind(enum.IntEnum):
    JOIN = 1
    ROSTER = 2
    GDH_UP = 3
    GDH_DOWN = 4
    COMMIT = 5
    DISPERSE = 6
    SUCCESS_NONCE = 7
    ABORT_NONCE = 8


@dataclass(frozen=True)
class WireMessage:
    kind: MsgKind
    session_id: bytes
    sender: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return crypto.pack_fields(bytes([self.kind]), self.session_id, self.sender, self.body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WireMessage":
        kind, sid, sender, body = crypto.unpack_fields(data, 4)
        return cls(MsgKind(kind[0]), sid, sender, body)


# -- events ---------------------------------------------------------------


@dataclass(frozen=True)
class InBand:
    message: WireMessage


@dataclass(frozen=True)
class OobReceived:
    frame: OobFrame


@dataclass(frozen=True)
class OobVerdictEvent:
    verdict: ListenVerdict


@dataclass(frozen=True)
class UserConfirm:
    confirmed: bool


@dataclass(frozen=True)
class Tick:
    tick: int


Event = InBand | OobReceived | OobVerdictEvent | UserConfirm | Tick


# -- actions --------------------------------------------------------------


@dataclass(frozen=True)
class SendInBand:
    message: WireMessage
    dest: bytes | None = None  # None = broadcast


@dataclass(frozen=True)
class EmitOob:
    frame: OobFrame


@dataclass(frozen=True)
class StartListenWindow:
    pass


@dataclass(frozen=True)
class ReportOutcome:
    outcome: "Outcome"


Action = SendInBand | EmitOob | StartListenWindow | ReportOutcome


@dataclass(frozen=True)
class Outcome:
    verdict: Verdict
    contacts: tuple[ContactCard, ...] = ()
    flags: tuple[str, ...] = ()


def pairwise_action_count(n: int) -> int:
    """Manual verifications needed if every pair authenticated separately."""
    if n < 2:
        raise ValueError("group size must be at least 2")
    return n * (n - 1) // 2


# -- wire body encodings --------------------------------------------------


def _encode_elements(elements: list[bytes]) -> bytes:
    return struct.pack(">I", len(elements)) + b"".join(elements)


def _decode_elements(body: bytes) -> list[bytes]:
    if len(body) < 4:
        raise crypto.SerializationError("truncated element list")
    (count,) = struct.unpack_from(">I", body, 0)
    rest = body[4:]
    if len(rest) != count * 32:
        raise crypto.SerializationError("element list length mismatch")
    return [rest[i * 32 : (i + 1) * 32] for i in range(count)]


def _encode_roster(roster: list[tuple[bytes, bytes]]) -> bytes:
    fields = []
    for pid, dh in roster:
        fields += [pid, dh]
    return struct.pack(">I", len(roster)) + crypto.pack_fields(*fields)


def _decode_roster(body: bytes) -> list[tuple[bytes, bytes]]:
    if len(body) < 4:
        raise crypto.SerializationError("truncated roster")
    (count,) = struct.unpack_from(">I", body, 0)
    fields = crypto.unpack_fields(body[4:], count * 2)
    return [(fields[2 * i], fields[2 * i + 1]) for i in range(count)]


def _encode_bundles(bundles: list[CommitmentBundle]) -> bytes:
    blobs = [b.to_bytes() for b in bundles]
    return struct.pack(">I", len(blobs)) + crypto.pack_fields(*blobs)


def _decode_bundles(body: bytes) -> list[CommitmentBundle]:
    if len(body) < 4:
        raise crypto.SerializationError("truncated bundle list")
    (count,) = struct.unpack_from(">I", body, 0)
    blobs = crypto.unpack_fields(body[4:], count)
    return [CommitmentBundle.from_bytes(b) for b in blobs]


# -- engine ---------------------------------------------------------------


class Engine:
    """State machine for one device in one exchange session."""

    def __init__(
        self,
        role: Role,
        n: int,
        identity: ContactCard,
        rng,
        timeout_ticks: int = DEFAULT_TIMEOUT_TICKS,
    ):
        if role is Role.COORDINATOR and n < 2:
            raise ValueError("coordinator requires a group size of at least 2")
        self.role = role
        self.n = n if role is Role.COORDINATOR else 0
        self.identity = identity
        self.timeout_ticks = timeout_ticks

        self.self_id = rng.randbytes(16)
        self.dh_keypair = crypto.gen_keypair(rng)
        self.nonces: NoncePair = crypto.gen_nonces(rng)
        if role is Role.COORDINATOR:
            self.session_id = rng.randbytes(16)
            self.network_id = rng.randbytes(6)
            self.network_key = rng.randbytes(8)
        else:
            self.session_id = b""

        self.phase = Phase.READY
        self.outcome: Outcome | None = None
        self.current_tick = 0
        self.phase_entry_tick = 0
        self.started = False

        self.coordinator_id: bytes | None = self.self_id if role is Role.COORDINATOR else None
        self.roster: list[tuple[bytes, bytes]] = []  # (participant_id, dh_public), canonical order
        self.gdh: GdhState | None = None
        self.group_key: GroupKey | None = None
        self.own_bundle: CommitmentBundle | None = None
        self.bundles: dict[bytes, CommitmentBundle] = {}
        self.expected_hash: VerificationHash | None = None
        self.success_nonces: dict[bytes, bytes] = {}
        self.flags: list[str] = []
        self._commit_pool: dict[bytes, CommitmentBundle] = {}  # coordinator only
        self._oob_emit_tick: int | None = None
        self._roster_body: bytes | None = None
        self._disperse_body: bytes | None = None

    # -- public API --

    def step(self, event: Event) -> list[Action]:
        if self.phase in TERMINAL_PHASES:
            return []
        if isinstance(event, Tick):
            return self._on_tick(event.tick)
        if isinstance(event, InBand):
            return self._on_message(event.message)
        if isinstance(event, OobReceived):
            return self._on_oob_frame(event.frame)
        if isinstance(event, OobVerdictEvent):
            return self._on_oob_verdict(event.verdict)
        if isinstance(event, UserConfirm):
            return self._on_user_confirm(event.confirmed)
        return self._abort(Verdict.ABORTED_PROTOCOL)

    def finalize(self) -> Outcome:
        if self.phase not in TERMINAL_PHASES or self.outcome is None:
            raise RuntimeError("finalize called before the session terminated")
        return self.outcome

    # -- phase helpers --

    def _enter(self, phase: Phase) -> None:
        self.phase = phase
        self.phase_entry_tick = self.current_tick

    def _abort(self, verdict: Verdict, release_nonce: bool = False) -> list[Action]:
        actions: list[Action] = []
        if release_nonce and self.own_bundle is not None:
            actions.append(self._broadcast(MsgKind.ABORT_NONCE, self.nonces.abort_nonce))
        self.outcome = Outcome(verdict=verdict, contacts=(), flags=tuple(self.flags))
        self._enter(Phase.ABORTED)
        actions.append(ReportOutcome(self.outcome))
        return actions

    def _broadcast(self, kind: MsgKind, body: bytes) -> SendInBand:
        return SendInBand(WireMessage(kind, self.session_id, self.self_id, body), dest=None)

    def _unicast(self, kind: MsgKind, body: bytes, dest: bytes) -> SendInBand:
        return SendInBand(WireMessage(kind, self.session_id, self.self_id, body), dest=dest)

    def _position(self) -> int:
        for i, (pid, _) in enumerate(self.roster):
            if pid == self.self_id:
                return i
        raise RuntimeError("self not in roster")

    # -- event handlers --

    def _on_tick(self, tick: int) -> list[Action]:
        self.current_tick = tick
        actions: list[Action] = []
        if self.role is Role.COORDINATOR and not self.started and self.phase is Phase.READY:
            self.started = True
            self.roster = [(self.self_id, self.dh_keypair.public_key)]
            self._enter(Phase.JOINING)
            frame = make_network_init(self.network_id, self.network_key, self.session_id)
            actions.append(EmitOob(frame))
            return actions
        if self._oob_emit_tick is not None and tick >= self._oob_emit_tick:
            self._oob_emit_tick = None
            assert self.expected_hash is not None
            frame = make_verify_hash(self.expected_hash.oob_truncation, self.session_id)
            actions.append(EmitOob(frame))
            # The coordinator does not listen to its own emission; it moves
            # straight to the checkmark prompt.
            self._enter(Phase.AWAIT_USER_CONFIRM)
            return actions
        if tick - self.phase_entry_tick > self.timeout_ticks:
            return self._abort(Verdict.ABORTED_TIMEOUT, release_nonce=True)
        return actions

    def _on_oob_frame(self, frame: OobFrame) -> list[Action]:
        if self.role is Role.PARTICIPANT and self.phase is Phase.READY:
            if frame.kind is not FrameKind.NETWORK_INIT or len(frame.payload) != 30:
                return []
            self.session_id = frame.payload[14:30]
            self._enter(Phase.JOINING)
            return [self._broadcast(MsgKind.JOIN, self.dh_keypair.public_key)]
        return []

    def _on_oob_verdict(self, verdict: ListenVerdict) -> list[Action]:
        if self.phase is not Phase.AWAIT_OOB_HASH:
            return []
        if verdict is ListenVerdict.MATCH:
            self._enter(Phase.AWAIT_USER_CONFIRM)
            return []
        if verdict is ListenVerdict.NOTHING:
            return [StartListenWindow()]  # keep listening until timeout
        if verdict is ListenVerdict.MISMATCH:
            return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        return self._abort(Verdict.ABORTED_FOREIGN_OOB, release_nonce=True)

    def _on_user_confirm(self, confirmed: bool) -> list[Action]:
        if self.phase is not Phase.AWAIT_USER_CONFIRM:
            return []
        if not confirmed:
            return self._abort(Verdict.ABORTED_BY_USER, release_nonce=True)
        self.success_nonces[self.self_id] = self.nonces.success_nonce
        self._enter(Phase.AWAIT_NONCES)
        actions: list[Action] = [self._broadcast(MsgKind.SUCCESS_NONCE, self.nonces.success_nonce)]
        actions += self._maybe_accept()
        return actions

    def _on_message(self, msg: WireMessage) -> list[Action]:
        if self.role is Role.PARTICIPANT and self.phase is Phase.READY:
            return []  # not in any session until the acoustic announcement
        if self.session_id and msg.session_id != self.session_id:
            return []
        try:
            handler = {
                MsgKind.JOIN: self._on_join,
                MsgKind.ROSTER: self._on_roster,
                MsgKind.GDH_UP: self._on_gdh_up,
                MsgKind.GDH_DOWN: self._on_gdh_down,
                MsgKind.COMMIT: self._on_commit,
                MsgKind.DISPERSE: self._on_disperse,
                MsgKind.SUCCESS_NONCE: self._on_success_nonce,
                MsgKind.ABORT_NONCE: self._on_abort_nonce,
            }[msg.kind]
            return handler(msg)
        except (CryptoError, struct.error):
            return self._abort(Verdict.ABORTED_PROTOCOL, release_nonce=True)

    def _on_join(self, msg: WireMessage) -> list[Action]:
        if self.role is not Role.COORDINATOR:
            return []
        if self.phase is not Phase.JOINING:
            return []
        known = dict(self.roster)
        if msg.sender in known:
            if known[msg.sender] == msg.body:
                return []  # duplicate delivery of the same join
            # Same id, different key: impersonation within the group.
            return self._abort(Verdict.ABORTED_PROTOCOL)
        if len(self.roster) >= self.n:
            return []  # group full, extra joiners rejected
        if len(msg.body) != 32:
            return self._abort(Verdict.ABORTED_PROTOCOL)
        self.roster.append((msg.sender, msg.body))
        if len(self.roster) < self.n:
            return []
        self.roster.sort(key=lambda e: e[0])
        self._roster_body = _encode_roster(self.roster)
        self._enter(Phase.COMMITTING)
        actions: list[Action] = [self._broadcast(MsgKind.ROSTER, self._roster_body)]
        actions += self._start_gdh_if_first()
        return actions

    def _on_roster(self, msg: WireMessage) -> list[Action]:
        if self.role is not Role.PARTICIPANT:
            return []
        if self.phase is not Phase.JOINING:
            if self._roster_body == msg.body:
                return []  # replayed roster
            return self._abort(Verdict.ABORTED_PROTOCOL, release_nonce=True)
        roster = _decode_roster(msg.body)
        ids = [pid for pid, _ in roster]
        if self.self_id not in ids or len(set(ids)) != len(ids) or len(roster) < 2:
            return self._abort(Verdict.ABORTED_PROTOCOL)
        own_dh = dict(roster)[self.self_id]
        if own_dh != self.dh_keypair.public_key:
            return self._abort(Verdict.ABORTED_PROTOCOL)
        self.roster = sorted(roster, key=lambda e: e[0])
        self._roster_body = msg.body
        self.n = len(roster)
        self.coordinator_id = msg.sender
        self._enter(Phase.COMMITTING)
        return self._start_gdh_if_first()

    def _start_gdh_if_first(self) -> list[Action]:
        self.gdh = GdhState(
            secret_scalar=self.dh_keypair.secret_scalar,
            position=self._position(),
            group_size=self.n,
        )
        if self.gdh.position != 0:
            return []
        out = crypto.gdh_contribute(self.gdh, [])
        next_id = self.roster[1][0]
        return [self._unicast(MsgKind.GDH_UP, _encode_elements(out), next_id)]

    def _on_gdh_up(self, msg: WireMessage) -> list[Action]:
        if self.phase is not Phase.COMMITTING or self.gdh is None:
            return []
        if self.gdh.shared_element is not None or self.gdh.position == 0:
            return []  # already contributed; duplicate or misrouted
        incoming = _decode_elements(msg.body)
        out = crypto.gdh_contribute(self.gdh, incoming)
        if self.gdh.is_last:
            actions = [self._broadcast(MsgKind.GDH_DOWN, _encode_elements(out))]
            actions += self._establish_key()
            return actions
        next_id = self.roster[self.gdh.position + 1][0]
        return [self._unicast(MsgKind.GDH_UP, _encode_elements(out), next_id)]

    def _on_gdh_down(self, msg: WireMessage) -> list[Action]:
        if self.phase is not Phase.COMMITTING or self.gdh is None:
            return []
        if self.group_key is not None or self.gdh.is_last:
            return []
        downflow = _decode_elements(msg.body)
        crypto.gdh_finish(self.gdh, downflow)
        return self._establish_key()

    def _establish_key(self) -> list[Action]:
        assert self.gdh is not None and self.gdh.shared_element is not None
        dh_publics = [dh for _, dh in self.roster]
        self.group_key = crypto.derive_group_key(self.gdh.shared_element, dh_publics)
        self.own_bundle = crypto.commit(
            self.identity,
            self.nonces,
            self.dh_keypair.public_key,
            self.group_key,
            self.self_id,
        )
        if self.role is Role.COORDINATOR:
            self._commit_pool[self.self_id] = self.own_bundle
            self._enter(Phase.DISPERSING)
            return self._maybe_disperse()
        assert self.coordinator_id is not None
        self._enter(Phase.DISPERSING)
        return [self._unicast(MsgKind.COMMIT, self.own_bundle.to_bytes(), self.coordinator_id)]

    def _on_commit(self, msg: WireMessage) -> list[Action]:
        if self.role is not Role.COORDINATOR:
            return []
        if self.phase not in (Phase.COMMITTING, Phase.DISPERSING):
            return []
        bundle = CommitmentBundle.from_bytes(msg.body)
        roster_map = dict(self.roster)
        if bundle.participant_id != msg.sender or msg.sender not in roster_map:
            return []  # not a roster member; ignore
        if msg.sender in self._commit_pool:
            if self._commit_pool[msg.sender].to_bytes() == msg.body:
                return []
            return self._abort(Verdict.ABORTED_PROTOCOL, release_nonce=True)
        # The coordinator is untrusted and only relays: structural checks
        # here, substantive verification happens at every participant and
        # through the acoustic hash.
        self._commit_pool[msg.sender] = bundle
        return self._maybe_disperse()

    def _maybe_disperse(self) -> list[Action]:
        if self.phase is not Phase.DISPERSING or len(self._commit_pool) < self.n:
            return []
        ordered = [self._commit_pool[pid] for pid, _ in self.roster]
        self.bundles = {b.participant_id: b for b in ordered}
        self.expected_hash = crypto.verification_hash(ordered)
        self._disperse_body = _encode_bundles(ordered)
        self._oob_emit_tick = self.current_tick + OOB_EMIT_DELAY_TICKS
        return [self._broadcast(MsgKind.DISPERSE, self._disperse_body)]

    def _on_disperse(self, msg: WireMessage) -> list[Action]:
        if self.role is not Role.PARTICIPANT:
            return []
        if self.phase is not Phase.DISPERSING:
            if self._disperse_body == msg.body:
                return []
            return self._abort(Verdict.ABORTED_PROTOCOL, release_nonce=True)
        bundles = _decode_bundles(msg.body)
        by_id = {b.participant_id: b for b in bundles}
        roster_map = dict(self.roster)
        if len(bundles) != self.n or len(by_id) != self.n or set(by_id) != set(roster_map):
            return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        assert self.own_bundle is not None
        if by_id[self.self_id].to_bytes() != self.own_bundle.to_bytes():
            # Our own commitment came back altered: someone rewrote it in flight.
            return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        for b in bundles:
            if not crypto.verify_commitment(b) or b.dh_public != roster_map[b.participant_id]:
                return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        self.bundles = by_id
        self.expected_hash = crypto.verification_hash(bundles)
        self._disperse_body = msg.body
        self._enter(Phase.AWAIT_OOB_HASH)
        return [StartListenWindow()]

    def _on_success_nonce(self, msg: WireMessage) -> list[Action]:
        if self.phase not in (Phase.AWAIT_OOB_HASH, Phase.AWAIT_USER_CONFIRM, Phase.AWAIT_NONCES):
            return []
        bundle = self.bundles.get(msg.sender)
        if bundle is None:
            return []
        if msg.sender in self.success_nonces:
            if self.success_nonces[msg.sender] == msg.body:
                return []
            return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        if not crypto.open_success(bundle, msg.body):
            return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        self.success_nonces[msg.sender] = msg.body
        return self._maybe_accept()

    def _on_abort_nonce(self, msg: WireMessage) -> list[Action]:
        bundle = self.bundles.get(msg.sender)
        if bundle is None or not crypto.open_abort(bundle, msg.body):
            return []  # unverifiable abort claims are ignored
        return self._abort(Verdict.ABORTED_PROTOCOL)

    def _maybe_accept(self) -> list[Action]:
        if self.phase is not Phase.AWAIT_NONCES:
            return []
        if set(self.success_nonces) != {pid for pid, _ in self.roster}:
            return []
        assert self.group_key is not None
        contacts: list[ContactCard] = []
        for pid, _ in self.roster:
            if pid == self.self_id:
                continue
            try:
                contacts.append(crypto.open_payload(self.bundles[pid].payload_ciphertext, self.group_key))
            except CryptoError:
                return self._abort(Verdict.ABORTED_MISMATCH, release_nonce=True)
        names = [c.name for c in contacts] + [self.identity.name]
        if len(set(names)) != len(names):
            self.flags.append("duplicate-display-name")
        self.outcome = Outcome(
            verdict=Verdict.CONTACTS_IMPORTED,
            contacts=tuple(contacts),
            flags=tuple(self.flags),
        )
        self._enter(Phase.ACCEPTED)
        return [ReportOutcome(self.outcome)]


def new_session(role: Role, n: int, identity: ContactCard, rng, **kwargs) -> Engine:
    return Engine(role, n, identity, rng, **kwargs)
