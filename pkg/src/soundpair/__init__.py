"""Group contact exchange with acoustic out-of-band verification."""

from .crypto import (
    CommitmentBundle,
    ContactCard,
    GroupKey,
    KeyPair,
    NoncePair,
    VerificationHash,
)
from .engine import Engine, Outcome, Phase, Role, Verdict, new_session, pairwise_action_count
from .modem import ListenVerdict, ModemProfile, OobFrame, decode, encode, listen_window, tone_frequency
from .simnet import AdversaryPolicy, NoiseModel, RunResult, UserScript, attack_catalog, run_session

__all__ = [
    "AdversaryPolicy",
    "CommitmentBundle",
    "ContactCard",
    "Engine",
    "GroupKey",
    "KeyPair",
    "ListenVerdict",
    "ModemProfile",
    "NoiseModel",
    "NoncePair",
    "OobFrame",
    "Outcome",
    "Phase",
    "Role",
    "RunResult",
    "UserScript",
    "Verdict",
    "VerificationHash",
    "attack_catalog",
    "decode",
    "encode",
    "listen_window",
    "new_session",
    "pairwise_action_count",
    "run_session",
    "tone_frequency",
]
