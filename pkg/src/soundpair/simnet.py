"""Deterministic two-channel network simulator.

The in-band channel is fully adversary-controlled: every message passes
through the policy's rule list before delivery, and rules may drop,
modify, replay, or inject. The acoustic channel is modeled physically:
emissions become PCM buffers (superposed when concurrent, plus noise),
so an adversary may inject sound but can never suppress or replace a
frame already in the air.

Everything is driven by a lockstep tick clock; a (seed, policy, n)
triple determines every transcript byte.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import random
from dataclasses import dataclass, field

import numpy as np

from . import crypto, engine as eng, modem
from .crypto import CommitmentBundle, ContactCard
from .engine import (
    Engine,
    EmitOob,
    InBand,
    MsgKind,
    OobReceived,
    OobVerdictEvent,
    Outcome,
    Phase,
    ReportOutcome,
    Role,
    SendInBand,
    StartListenWindow,
    Tick,
    UserConfirm,
    Verdict,
    WireMessage,
)
from .modem import DecodeStatus, FrameKind, ListenVerdict, ModemProfile, OobFrame

SAMPLES_PER_TICK = 2048
LISTEN_WINDOW_TICKS = 8
INBAND_LATENCY = 1
OOB_LATENCY = 2
USER_REACTION_TICKS = 2
MAX_TICKS = 400


# -- noise ----------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "clean"  # clean | awgn | impulsive
    snr_db: float = 20.0
    rate: float = 5.0  # impulses per second
    amplitude: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        if text == "clean":
            return cls("clean")
        if text.startswith("awgn"):
            return cls("awgn", snr_db=float(text.split(":")[1]) if ":" in text else 20.0)
        if text.startswith("impulsive"):
            parts = text.split(":")[1:]
            rate = float(parts[0]) if parts else 5.0
            amp = float(parts[1]) if len(parts) > 1 else 1.0
            return cls("impulsive", rate=rate, amplitude=amp)
        raise ValueError(f"unknown noise model {text!r}")


# Mean-square level of a reference frame; fixes the AWGN signal reference
# so silence-only buffers get the same noise floor.
_REF_POWER = float(np.mean(modem.encode(ModemProfile(), OobFrame(FrameKind.VERIFY_HASH, bytes(32))) ** 2))


def apply_noise(samples: np.ndarray, noise: NoiseModel, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    if noise.kind == "clean":
        return samples
    out = samples.astype(np.float64).copy()
    if noise.kind == "awgn":
        sigma = np.sqrt(_REF_POWER / (10.0 ** (noise.snr_db / 10.0)))
        out += rng.normal(0.0, sigma, len(out))
        return out
    if noise.kind == "impulsive":
        n_bursts = rng.poisson(noise.rate * len(out) / sample_rate)
        for _ in range(n_bursts):
            start = int(rng.integers(0, max(1, len(out) - 128)))
            out[start : start + 128] += noise.amplitude * rng.uniform(-1, 1, 128)
        return out
    raise ValueError(noise.kind)


# -- adversary policy -----------------------------------------------------


@dataclass(frozen=True)
class InbandRule:
    """First-match-wins interception rule for in-band traffic.

    kind/sender/dest match a MsgKind name or endpoint index ('*' = any);
    tick matches an absolute tick or '*'. ``times`` caps how often the
    rule fires (None = unlimited).
    """

    action: str  # pass | drop | modify | replay | replace_key | replace_payload | duplicate_join
    kind: str = "*"
    sender: str = "*"
    dest: str = "*"
    tick: str = "*"
    times: int | None = None
    param: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OobInjectRule:
    """Inject a frame on the acoustic channel; never replaces real frames.

    when: 'window' fires once inside every verification listen window,
    an integer fires at that absolute tick.
    """

    when: str = "window"
    kind: str = "VERIFY_HASH"
    payload: str = "random"  # 'random' or hex string


@dataclass(frozen=True)
class AdversaryPolicy:
    inband_rules: tuple[InbandRule, ...] = ()
    oob_rules: tuple[OobInjectRule, ...] = ()
    seed: int = 0

    @property
    def is_passthrough(self) -> bool:
        return not self.inband_rules and not self.oob_rules


def policy_from_file(path: str) -> AdversaryPolicy:
    """Load a policy from the line-oriented rule format.

    Each non-comment line is ``inband key=value ...`` or ``oob inject
    key=value ...``; keys mirror the rule dataclass fields.
    """
    inband: list[InbandRule] = []
    oob: list[OobInjectRule] = []
    seed = 0
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if tokens[0] == "seed":
                seed = int(tokens[1])
                continue
            kv = dict(t.split("=", 1) for t in tokens[1:] if "=" in t)
            if tokens[0] == "inband":
                inband.append(
                    InbandRule(
                        action=kv.get("action", "pass"),
                        kind=kv.get("kind", "*"),
                        sender=kv.get("sender", "*"),
                        dest=kv.get("dest", "*"),
                        tick=kv.get("tick", "*"),
                        times=int(kv["times"]) if "times" in kv else None,
                    )
                )
            elif tokens[0] == "oob" and tokens[1] == "inject":
                kv = dict(t.split("=", 1) for t in tokens[2:] if "=" in t)
                oob.append(OobInjectRule(when=kv.get("when", "window"), payload=kv.get("payload", "random")))
            else:
                raise ValueError(f"unparseable policy line: {line!r}")
    return AdversaryPolicy(tuple(inband), tuple(oob), seed)


def attack_catalog() -> dict[str, AdversaryPolicy]:
    """Named adversary presets used by the campaigns."""
    return {
        "none": AdversaryPolicy(),
        "mitm_key_substitution": AdversaryPolicy(
            inband_rules=(InbandRule(action="replace_key", kind="COMMIT", sender="1", times=1),)
        ),
        "message_drop": AdversaryPolicy(
            inband_rules=(InbandRule(action="drop", kind="DISPERSE", dest="1"),)
        ),
        "replay": AdversaryPolicy(
            inband_rules=(InbandRule(action="replay", kind="SUCCESS_NONCE", param={"delay": 3}),)
        ),
        "sybil_duplicate_id": AdversaryPolicy(
            inband_rules=(InbandRule(action="duplicate_join", kind="JOIN", sender="1", times=1),)
        ),
        "group_in_the_middle": AdversaryPolicy(
            inband_rules=(InbandRule(action="replace_key", kind="DISPERSE", dest="bridge"),),
            oob_rules=(OobInjectRule(when="window"),),
        ),
        "oob_inject": AdversaryPolicy(oob_rules=(OobInjectRule(when="window"),)),
    }


# -- user scripts ---------------------------------------------------------


@dataclass(frozen=True)
class UserScript:
    mode: str = "confirm-all"  # confirm-all | reject-one | rushing
    p: float = 0.9
    reject_index: int = 1

    @classmethod
    def parse(cls, text: str) -> "UserScript":
        if text == "confirm-all":
            return cls("confirm-all")
        if text == "reject-one":
            return cls("reject-one")
        if text.startswith("rushing"):
            p = float(text.split(":")[1]) if ":" in text else 0.9
            return cls("rushing", p=p)
        raise ValueError(f"unknown user script {text!r}")

    def decide(self, endpoint: int, n: int, rng: random.Random) -> bool:
        if self.mode == "confirm-all":
            return True
        if self.mode == "reject-one":
            return endpoint != self.reject_index % n
        return rng.random() < self.p


# -- acoustic channel -----------------------------------------------------


def acoustic_channel(
    profile: ModemProfile,
    emissions: list[tuple[int, np.ndarray]],
    start_tick: int,
    n_ticks: int,
    proximity: list[bool],
    noise: NoiseModel,
    noise_rngs: list[np.random.Generator],
) -> list[np.ndarray]:
    """Superpose emissions into one PCM buffer per endpoint.

    ``emissions`` holds (tick, samples); each lands at an offset set by
    its tick. Out-of-proximity endpoints hear noise only.
    """
    max_len = max((len(s) for _, s in emissions), default=0)
    total = n_ticks * SAMPLES_PER_TICK + max_len + 2 * SAMPLES_PER_TICK
    base = np.zeros(total)
    for tick, samples in emissions:
        off = (tick - start_tick) * SAMPLES_PER_TICK + SAMPLES_PER_TICK // 2
        base[off : off + len(samples)] += samples
    buffers = []
    for i, near in enumerate(proximity):
        buf = base if near else np.zeros(total)
        buffers.append(apply_noise(buf, noise, noise_rngs[i], profile.sample_rate))
    return buffers


def _verdict_from_results(results: list[modem.DecodeResult], expected: bytes) -> ListenVerdict:
    if not results:
        return ListenVerdict.NOTHING
    frames = [r.frame for r in results if r.status is DecodeStatus.FRAME]
    corrupt = sum(1 for r in results if r.status is DecodeStatus.CORRUPT)
    expected_frame = OobFrame(FrameKind.VERIFY_HASH, expected)
    matches = [f for f in frames if f == expected_frame]
    others = [f for f in frames if f != expected_frame]
    if corrupt or len(matches) > 1 or (matches and others):
        return ListenVerdict.FOREIGN_FRAME
    if len(matches) == 1:
        return ListenVerdict.MATCH
    if others:
        if len(others) == 1 and others[0].kind is FrameKind.VERIFY_HASH:
            return ListenVerdict.MISMATCH
        return ListenVerdict.FOREIGN_FRAME
    return ListenVerdict.NOTHING


# -- the simulator --------------------------------------------------------


@dataclass
class RunResult:
    outcomes: list[tuple[str, Outcome]]
    transcript: list[dict]
    ticks: int

    @property
    def all_imported(self) -> bool:
        return all(o.verdict is Verdict.CONTACTS_IMPORTED for _, o in self.outcomes)

    @property
    def any_imported(self) -> bool:
        return any(o.verdict is Verdict.CONTACTS_IMPORTED for _, o in self.outcomes)

    def transcript_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.transcript) + "\n"


def default_cards(n: int, rng: random.Random) -> list[ContactCard]:
    cards = []
    for i in range(n):
        kp = crypto.gen_keypair(rng)
        cards.append(
            ContactCard(
                name=f"user{i}",
                avatar_digest=crypto.sha256(f"avatar{i}".encode()),
                description=f"endpoint {i}",
                public_key=kp.public_key,
            )
        )
    return cards


class _Adversary:
    """Applies one policy's rules to the in-band traffic."""

    def __init__(self, policy: AdversaryPolicy, n: int):
        self.policy = policy
        self.n = n
        self.rng = random.Random(policy.seed ^ 0x5EEDFACE)
        self.keypair = crypto.gen_keypair(self.rng)
        self.fired: dict[int, int] = {}

    def _matches(self, rule: InbandRule, msg: WireMessage, sender: int, dest: int, tick: int) -> bool:
        if rule.kind != "*" and rule.kind != msg.kind.name:
            return False
        if rule.sender != "*" and rule.sender != str(sender):
            return False
        if rule.dest == "bridge":
            if dest < (self.n + 1) // 2:
                return False
        elif rule.dest != "*" and rule.dest != str(dest):
            return False
        if rule.tick != "*" and int(rule.tick) != tick:
            return False
        return True

    def intercept(
        self, msg: WireMessage, sender: int, dest: int, tick: int
    ) -> tuple[list[tuple[WireMessage, int]], str]:
        """Returns (deliveries as (message, delay), rule action name)."""
        for i, rule in enumerate(self.policy.inband_rules):
            if rule.times is not None and self.fired.get(i, 0) >= rule.times:
                continue
            if not self._matches(rule, msg, sender, dest, tick):
                continue
            self.fired[i] = self.fired.get(i, 0) + 1
            if rule.action == "pass":
                return [(msg, INBAND_LATENCY)], "pass"
            if rule.action == "drop":
                return [], "drop"
            if rule.action == "modify":
                body = bytearray(msg.body)
                off = rule.param.get("offset", 0) % max(1, len(body))
                if body:
                    body[off] ^= rule.param.get("xor", 0xFF)
                return [(dataclasses.replace(msg, body=bytes(body)), INBAND_LATENCY)], "modify"
            if rule.action == "replay":
                delay = rule.param.get("delay", 3)
                return [(msg, INBAND_LATENCY), (msg, INBAND_LATENCY + delay)], "replay"
            if rule.action == "replace_key":
                return [(self._replace_key(msg), INBAND_LATENCY)], "replace_key"
            if rule.action == "replace_payload":
                return [(self._replace_payload(msg), INBAND_LATENCY)], "replace_payload"
            if rule.action == "duplicate_join":
                forged = dataclasses.replace(msg, body=self.keypair.public_key)
                return [(msg, INBAND_LATENCY), (forged, INBAND_LATENCY)], "duplicate_join"
            raise ValueError(f"unknown rule action {rule.action!r}")
        return [(msg, INBAND_LATENCY)], "pass"

    def _rebundle(self, bundle: CommitmentBundle, dh_public: bytes, ciphertext: bytes) -> CommitmentBundle:
        outer = crypto._outer_commitment(
            bundle.participant_id,
            bundle.success_digest,
            bundle.abort_digest,
            dh_public,
            ciphertext,
        )
        return CommitmentBundle(
            bundle.participant_id,
            bundle.success_digest,
            bundle.abort_digest,
            ciphertext,
            dh_public,
            outer,
        )

    def _tampered_bundle(self, bundle: CommitmentBundle) -> CommitmentBundle:
        fake_ct = self.rng.randbytes(len(bundle.payload_ciphertext))
        return self._rebundle(bundle, self.keypair.public_key, fake_ct)

    def _replace_key(self, msg: WireMessage) -> WireMessage:
        if msg.kind is MsgKind.JOIN:
            return dataclasses.replace(msg, body=self.keypair.public_key)
        if msg.kind is MsgKind.COMMIT:
            bundle = CommitmentBundle.from_bytes(msg.body)
            return dataclasses.replace(msg, body=self._tampered_bundle(bundle).to_bytes())
        if msg.kind is MsgKind.DISPERSE:
            bundles = eng._decode_bundles(msg.body)
            swapped = [self._tampered_bundle(b) for b in bundles[: (len(bundles) + 1) // 2]]
            swapped += bundles[(len(bundles) + 1) // 2 :]
            return dataclasses.replace(msg, body=eng._encode_bundles(swapped))
        return msg

    def _replace_payload(self, msg: WireMessage) -> WireMessage:
        if msg.kind is MsgKind.COMMIT:
            bundle = CommitmentBundle.from_bytes(msg.body)
            fake_ct = self.rng.randbytes(len(bundle.payload_ciphertext))
            return dataclasses.replace(msg, body=self._rebundle(bundle, bundle.dh_public, fake_ct).to_bytes())
        return msg

    def make_inject_frame(self, rule: OobInjectRule, session_id: bytes) -> OobFrame:
        if rule.payload == "random":
            payload = self.rng.randbytes(16) + session_id
        else:
            payload = bytes.fromhex(rule.payload)
        return OobFrame(FrameKind[rule.kind], payload)


@dataclass
class _Window:
    endpoint: int
    start: int
    emissions: list[tuple[int, OobFrame]] = field(default_factory=list)
    injected: bool = False


def run_session(
    n: int,
    policy: AdversaryPolicy | None = None,
    user_script: UserScript | None = None,
    seed: int = 0,
    noise: NoiseModel | None = None,
    proximity: list[bool] | None = None,
    profile: ModemProfile | None = None,
    cards: list[ContactCard] | None = None,
    max_ticks: int = MAX_TICKS,
) -> RunResult:
    """Drive n engines to terminal phases under the given adversary.

    Endpoint 0 is the coordinator. Returns per-endpoint outcomes and the
    full JSON-serializable transcript.
    """
    if n < 2:
        raise ValueError("group size must be at least 2")
    policy = policy or AdversaryPolicy()
    user_script = user_script or UserScript()
    noise = noise or NoiseModel()
    profile = profile or ModemProfile()
    proximity = proximity if proximity is not None else [True] * n

    master = random.Random(seed)
    cards = cards or default_cards(n, master)
    engines: list[Engine] = []
    for i in range(n):
        erng = random.Random(master.randrange(2**63))
        role = Role.COORDINATOR if i == 0 else Role.PARTICIPANT
        engines.append(Engine(role, n if i == 0 else 0, cards[i], erng))
    user_rng = random.Random(master.randrange(2**63))
    noise_rngs = [np.random.default_rng(master.randrange(2**63)) for _ in range(n)]
    adversary = _Adversary(policy, n)

    id_to_idx = {e.self_id: i for i, e in enumerate(engines)}
    pending: list[tuple[int, int, int, object]] = []  # (tick, seq, endpoint, event)
    seq = 0
    windows: dict[int, _Window] = {}
    prompted = [False] * n
    transcript: list[dict] = []
    frame_cache: dict[bytes, np.ndarray] = {}

    def log(tick: int, **kw) -> None:
        transcript.append({"tick": tick, **kw})

    def schedule(tick: int, endpoint: int, event) -> None:
        nonlocal seq
        heapq.heappush(pending, (tick, seq, endpoint, event))
        seq += 1

    def encode_frame(frame: OobFrame) -> np.ndarray:
        key = bytes([frame.kind]) + frame.payload
        if key not in frame_cache:
            frame_cache[key] = modem.encode(profile, frame).astype(np.float64)
        return frame_cache[key]

    def handle_actions(tick: int, endpoint: int, actions) -> None:
        for action in actions:
            if isinstance(action, SendInBand):
                msg = action.message
                dests = (
                    [id_to_idx[action.dest]]
                    if action.dest is not None and action.dest in id_to_idx
                    else [j for j in range(n) if j != endpoint]
                )
                for dest in dests:
                    deliveries, applied = adversary.intercept(msg, endpoint, dest, tick)
                    log(
                        tick,
                        type="inband",
                        kind=msg.kind.name,
                        src=endpoint,
                        dst=dest,
                        rule=applied,
                        bytes=crypto.sha256(msg.to_bytes()).hex()[:16],
                    )
                    for out_msg, delay in deliveries:
                        schedule(tick + delay, dest, InBand(out_msg))
            elif isinstance(action, EmitOob):
                frame = action.frame
                log(tick, type="oob-emit", src=endpoint, kind=frame.kind.name, bytes=frame.payload.hex())
                deliver_oob(tick, endpoint, frame)
            elif isinstance(action, StartListenWindow):
                windows[endpoint] = _Window(endpoint=endpoint, start=tick)
                log(tick, type="listen-start", src=endpoint)
            elif isinstance(action, ReportOutcome):
                log(tick, type="outcome", src=endpoint, verdict=action.outcome.verdict.value)

    def deliver_oob(tick: int, emitter: int, frame: OobFrame) -> None:
        # Frames land in any open listen window; everyone else gets a
        # passive decode delivery.
        for j in range(n):
            if j == emitter:
                continue
            win = windows.get(j)
            if win is not None and win.start <= tick < win.start + LISTEN_WINDOW_TICKS:
                win.emissions.append((tick, frame))
            else:
                schedule(tick + OOB_LATENCY, j, ("oob-passive", tick, frame))

    def inject_into_window(win: _Window, tick: int) -> None:
        for rule in policy.oob_rules:
            if rule.when == "window" and not win.injected:
                session_id = engines[win.endpoint].session_id or bytes(16)
                frame = adversary.make_inject_frame(rule, session_id)
                win.emissions.append((tick, frame))
                win.injected = True
                log(tick, type="oob-inject", dst=win.endpoint, bytes=frame.payload.hex())
            elif rule.when != "window" and int(rule.when) == tick:
                frame = adversary.make_inject_frame(rule, engines[win.endpoint].session_id or bytes(16))
                win.emissions.append((tick, frame))
                log(tick, type="oob-inject", dst=win.endpoint, bytes=frame.payload.hex())

    def close_window(win: _Window, tick: int) -> None:
        endpoint = win.endpoint
        e = engines[endpoint]
        expected = b""
        if e.expected_hash is not None:
            expected = e.expected_hash.oob_truncation + e.session_id
        emissions = [(t, encode_frame(f)) for t, f in win.emissions]
        bufs = acoustic_channel(
            profile,
            emissions,
            win.start,
            LISTEN_WINDOW_TICKS,
            [proximity[endpoint]],
            noise,
            [noise_rngs[endpoint]],
        )
        verdict = _verdict_from_results(modem.decode_all(profile, bufs[0]), expected)
        log(tick, type="listen-verdict", src=endpoint, verdict=verdict.value)
        del windows[endpoint]
        step(tick, endpoint, OobVerdictEvent(verdict))

    def step(tick: int, endpoint: int, event) -> None:
        e = engines[endpoint]
        before = e.phase
        actions = e.step(event)
        if e.phase is not before:
            log(tick, type="phase", src=endpoint, before=before.value, after=e.phase.value)
        handle_actions(tick, endpoint, actions)
        if e.phase is Phase.AWAIT_USER_CONFIRM and not prompted[endpoint]:
            prompted[endpoint] = True
            decision = user_script.decide(endpoint, n, user_rng)
            log(tick, type="user-confirm", src=endpoint, confirmed=decision)
            schedule(tick + USER_REACTION_TICKS, endpoint, UserConfirm(decision))

    tick = 0
    while tick < max_ticks:
        # Inject scheduled OOB attacks into open windows, then close expired ones.
        for win in list(windows.values()):
            if tick == win.start + 1:
                inject_into_window(win, tick)
            if tick >= win.start + LISTEN_WINDOW_TICKS:
                close_window(win, tick)
        for i in range(n):
            step(tick, i, Tick(tick))
        while pending and pending[0][0] <= tick:
            _, _, endpoint, event = heapq.heappop(pending)
            if isinstance(event, tuple) and event[0] == "oob-passive":
                _, emit_tick, frame = event
                bufs = acoustic_channel(
                    profile,
                    [(emit_tick, encode_frame(frame))],
                    emit_tick,
                    1,
                    [proximity[endpoint]],
                    noise,
                    [noise_rngs[endpoint]],
                )
                for result in modem.decode_all(profile, bufs[0]):
                    if result.status is DecodeStatus.FRAME:
                        step(tick, endpoint, OobReceived(result.frame))
            else:
                step(tick, endpoint, event)
        if all(e.phase in eng.TERMINAL_PHASES for e in engines) and not pending and not windows:
            break
        tick += 1

    outcomes = []
    for i, e in enumerate(engines):
        if e.phase not in eng.TERMINAL_PHASES:
            e.outcome = Outcome(Verdict.ABORTED_TIMEOUT)
            e.phase = Phase.ABORTED
        outcomes.append((f"e{i}", e.finalize()))
    return RunResult(outcomes=outcomes, transcript=transcript, ticks=tick)


def honest_card_map(n: int, seed: int) -> dict[str, ContactCard]:
    """The cards the honest endpoints of run_session(seed=seed) exchange."""
    master = random.Random(seed)
    cards = default_cards(n, master)
    return {f"user{i}": cards[i] for i in range(n)}


def false_accept_count(result: RunResult, n: int, seed: int) -> int:
    """Endpoints that imported anything other than the honest card set.

    The ground truth is reconstructed from the session seed; any accepted
    outcome whose contacts deviate in membership or content counts as a
    false accept.
    """
    honest = honest_card_map(n, seed)
    bad = 0
    for ep, outcome in result.outcomes:
        if outcome.verdict is not Verdict.CONTACTS_IMPORTED:
            continue
        idx = int(ep[1:])
        expected_names = {f"user{j}" for j in range(n) if j != idx}
        ok = (
            len(outcome.contacts) == n - 1
            and {c.name for c in outcome.contacts} == expected_names
            and all(c == honest[c.name] for c in outcome.contacts)
        )
        bad += not ok
    return bad
