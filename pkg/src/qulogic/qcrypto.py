"""Toeplitz-hash authentication, simulated pairwise key pools and the
quantum three-pass direct-communication protocol."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .qubit import GATES, Basis, Label, PhaseGate, QubitState, apply_gate, basis_state, measure


class SizingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bit helpers
# ---------------------------------------------------------------------------


def as_bits(bits) -> np.ndarray:
    if isinstance(bits, str):
        arr = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    else:
        arr = np.asarray(bits, dtype=np.uint8)
    if arr.size and arr.max() > 1:
        raise ValueError("bit strings may only contain 0 and 1")
    return arr.astype(np.uint8, copy=False)


def bytes_to_bits(data: bytes) -> np.ndarray:
    """Most-significant bit first."""
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_hex(bits) -> str:
    return np.packbits(as_bits(bits)).tobytes().hex()


def hex_to_bits(text: str, nbits: Optional[int] = None) -> np.ndarray:
    bits = bytes_to_bits(bytes.fromhex(text))
    return bits if nbits is None else bits[:nbits]


def bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in as_bits(bits))


# ---------------------------------------------------------------------------
# key pools
# ---------------------------------------------------------------------------

_BLOCK_BITS = 512  # one blake2b-512 output


@dataclass
class KeyPool:
    """One endpoint's view of the secret bit stream shared by a node pair.

    Both endpoints build a pool from the same (pair_id, seed) and therefore
    see the same stream; each keeps its own cursor.  The stream is a
    counter-mode blake2b expansion, so any block can be recomputed
    independently of the others.
    """

    pair_id: tuple[str, str]
    seed: int
    cursor: int = 0
    _key: bytes = field(init=False, repr=False)

    def __post_init__(self):
        a, b = sorted(map(str, self.pair_id))
        material = f"{a}|{b}|{int(self.seed)}".encode()
        self._key = hashlib.blake2b(material, digest_size=64).digest()

    def _block(self, index: int) -> np.ndarray:
        h = hashlib.blake2b(index.to_bytes(8, "big"), key=self._key, digest_size=64)
        return bytes_to_bits(h.digest())

    def peek(self, start: int, count: int) -> np.ndarray:
        if count == 0:
            return np.zeros(0, dtype=np.uint8)
        first, last = start // _BLOCK_BITS, (start + count - 1) // _BLOCK_BITS
        blob = np.concatenate([self._block(i) for i in range(first, last + 1)])
        off = start - first * _BLOCK_BITS
        return blob[off : off + count]

    def draw(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("cannot draw a negative number of key bits")
        bits = self.peek(self.cursor, count)
        self.cursor += count
        return bits

    def twin(self) -> KeyPool:
        """The other endpoint's pool, positioned at the same cursor."""
        return KeyPool((self.pair_id[1], self.pair_id[0]), self.seed, self.cursor)


def draw_keys(pool: KeyPool, count: int) -> np.ndarray:
    return pool.draw(count)


# ---------------------------------------------------------------------------
# Toeplitz hashing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToeplitzSpec:
    """Seed S (digest_len + msg_len - 1 bits) and one-time pad r (digest_len bits).

    The hashing matrix is T[i][j] = S[i - j + msg_len - 1]: its first row is
    S[msg_len-1], ..., S[0] and its first column is S[msg_len-1:].
    """

    seed_bits: np.ndarray
    pad: np.ndarray
    digest_len: int
    msg_len: int

    def __post_init__(self):
        if self.digest_len <= 0:
            raise SizingError("digest length must be positive")
        if len(self.seed_bits) != self.digest_len + self.msg_len - 1:
            raise SizingError(
                f"Toeplitz seed has {len(self.seed_bits)} bits, "
                f"need digest_len + msg_len - 1 = {self.digest_len + self.msg_len - 1}"
            )
        if len(self.pad) != self.digest_len:
            raise SizingError(f"pad has {len(self.pad)} bits, need {self.digest_len}")

    def matrix(self) -> np.ndarray:
        i = np.arange(self.digest_len)[:, None]
        j = np.arange(self.msg_len)[None, :]
        return np.asarray(self.seed_bits, dtype=np.uint8)[i - j + self.msg_len - 1]


def toeplitz_hash(spec: ToeplitzSpec, msg) -> np.ndarray:
    msg = as_bits(msg)
    if len(msg) != spec.msg_len:
        raise SizingError(f"message has {len(msg)} bits, spec expects {spec.msg_len}")
    pad = as_bits(spec.pad)
    if spec.msg_len == 0:
        return pad.copy()
    seed = np.asarray(spec.seed_bits, dtype=np.int64)
    # row i of T is S[i : i + msg_len] reversed
    windows = np.lib.stride_tricks.sliding_window_view(seed, spec.msg_len)
    prod = windows @ msg[::-1].astype(np.int64)
    return ((prod & 1).astype(np.uint8)) ^ pad


@dataclass(frozen=True)
class MacConfig:
    """Digest size and the fixed per-message key frame.

    Every authenticated message consumes exactly one frame of
    ``digest_len + max_msg_bits - 1`` seed bits plus ``digest_len`` pad
    bits, whatever its length, so a rejected message of the wrong size
    cannot knock the two endpoints' cursors out of step.
    """

    digest_len: int = 128
    max_msg_bits: int = 1 << 15

    @property
    def frame_bits(self) -> int:
        return 2 * self.digest_len + self.max_msg_bits - 1


def next_toeplitz_spec(pool: KeyPool, msg_len: int, config: MacConfig = MacConfig()) -> ToeplitzSpec:
    frame = pool.draw(config.frame_bits)
    if msg_len > config.max_msg_bits:
        raise SizingError(f"message of {msg_len} bits exceeds the {config.max_msg_bits}-bit frame")
    seed_len = config.digest_len + config.max_msg_bits - 1
    return ToeplitzSpec(
        seed_bits=frame[: config.digest_len + msg_len - 1],
        pad=frame[seed_len:],
        digest_len=config.digest_len,
        msg_len=msg_len,
    )


def mac(pool: KeyPool, msg, config: MacConfig = MacConfig()) -> np.ndarray:
    msg = as_bits(msg)
    return toeplitz_hash(next_toeplitz_spec(pool, len(msg), config), msg)


def verify_mac(pool: KeyPool, msg, digest, config: MacConfig = MacConfig()) -> bool:
    """Consumes the next key frame even when the check fails."""
    msg = as_bits(msg)
    try:
        spec = next_toeplitz_spec(pool, len(msg), config)
    except SizingError:
        return False
    digest = as_bits(digest)
    return len(digest) == config.digest_len and bool(np.array_equal(toeplitz_hash(spec, msg), digest))


def frame_fields(fields: Sequence[bytes]) -> bytes:
    """Canonical serialization: each field prefixed by its 32-bit big-endian length."""
    return b"".join(struct.pack(">I", len(f)) + f for f in fields)


def message_bits(fields: Sequence[bytes]) -> np.ndarray:
    return bytes_to_bits(frame_fields(fields))


# ---------------------------------------------------------------------------
# quantum three-pass protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThreePassKey:
    gates: tuple[PhaseGate, ...]

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> ThreePassKey:
        return cls(tuple(GATES[q] for q in rng.integers(0, 4, size=n)))

    @classmethod
    def of(cls, quarter_turns: Sequence[int]) -> ThreePassKey:
        return cls(tuple(PhaseGate(int(q)) for q in quarter_turns))

    def inverse(self) -> ThreePassKey:
        return ThreePassKey(tuple(g.inverse() for g in self.gates))

    def __len__(self):
        return len(self.gates)


def three_pass_encrypt(bits, k: ThreePassKey) -> list[QubitState]:
    bits = as_bits(bits)
    if len(bits) != len(k):
        raise SizingError("key length must equal payload length")
    return [apply_gate(g, basis_state(Label.ONE if b else Label.ZERO)) for b, g in zip(bits, k.gates)]


def three_pass_step(qubits: Sequence[QubitState], k: ThreePassKey) -> list[QubitState]:
    if len(qubits) != len(k):
        raise SizingError("key length must equal number of qubits")
    return [apply_gate(g, s) for s, g in zip(qubits, k.gates)]


class Tap(Protocol):
    """Eavesdropper on the quantum channel.

    Called once per transmission with the pass index (0, 1, 2) and the
    qubits in flight; returns the qubits that continue down the channel.
    """

    def __call__(self, pass_index: int, qubits: list[QubitState], rng: np.random.Generator) -> list[QubitState]: ...


@dataclass
class InterceptResend:
    """Measures every qubit of the chosen passes and forwards the post-measurement states."""

    passes: tuple[int, ...] = (0,)
    basis: Basis = Basis.COMPUTATIONAL
    observed: list = field(default_factory=list)

    def __call__(self, pass_index, qubits, rng):
        if pass_index not in self.passes:
            return qubits
        results = [measure(s, self.basis, rng) for s in qubits]
        self.observed.append((pass_index, [o for o, _ in results]))
        return [post for _, post in results]


@dataclass
class ThreePassTranscript:
    passes: list[list[QubitState]] = field(default_factory=list)
    decoy_alarm: Optional[bool] = None


def run_three_pass(
    sender_bits,
    k1: ThreePassKey,
    k2: ThreePassKey,
    rng: np.random.Generator,
    tap: Optional[Tap] = None,
    decoy_check: Optional[Callable[[ThreePassTranscript], bool]] = None,
) -> tuple[np.ndarray, ThreePassTranscript]:
    """Sender (key k1) delivers `sender_bits` to the receiver (key k2).

    The transcript holds the three lists that crossed the channel, as seen
    after any tap.  `decoy_check` is an extension point for decoy-qubit
    eavesdropper detection; none is installed by default.
    """
    bits = as_bits(sender_bits)
    if not (len(bits) == len(k1) == len(k2)):
        raise SizingError("payload and both keys must have equal length")
    transcript = ThreePassTranscript()

    def send(i, qubits):
        if tap is not None:
            qubits = list(tap(i, qubits, rng))
        transcript.passes.append(qubits)
        return qubits

    b = send(0, three_pass_encrypt(bits, k1))
    c = send(1, three_pass_step(b, k2))
    d = send(2, three_pass_step(c, k1.inverse()))
    e = three_pass_step(d, k2.inverse())
    received = np.array([measure(s, Basis.COMPUTATIONAL, rng)[0] for s in e], dtype=np.uint8)
    if decoy_check is not None:
        transcript.decoy_alarm = bool(decoy_check(transcript))
    return received, transcript
