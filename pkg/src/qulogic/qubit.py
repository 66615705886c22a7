"""Single-qubit simulation: states, the X(m) phase-gate family and measurement.

Every quantum object in the system is a product of single qubits, so a
state is just a pair of complex amplitudes.  The four X(m) gates are

    X(m) = |+><+| + e^{im} |-><-|,   m in {0, pi/2, pi, 3pi/2}

and are stored as a quarter-turn count.  The four "canonical" states
|0>, |i>, |1>, |i-bar> form a cycle under X(pi/2):

    |0> -> |i> -> |1> -> |i-bar> -> |0>

which is why `Label` is numbered 0..3 in cycle order.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Sequence

import numpy as np

NORM_TOL = 1e-9

# e^{i k pi/2}, exact
_QUARTER_PHASES = (1 + 0j, 1j, -1 + 0j, -1j)


@dataclass(frozen=True)
class QubitState:
    amp0: complex
    amp1: complex

    def __post_init__(self):
        norm = abs(self.amp0) ** 2 + abs(self.amp1) ** 2
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"qubit state not normalized (|a0|^2+|a1|^2={norm!r})")

    def vector(self) -> np.ndarray:
        return np.array([self.amp0, self.amp1], dtype=complex)

    def inner(self, other: QubitState) -> complex:
        """<self|other>"""
        return self.amp0.conjugate() * other.amp0 + self.amp1.conjugate() * other.amp1


@dataclass(frozen=True)
class PhaseGate:
    """X(quarter_turns * pi/2)."""

    quarter_turns: int

    def __post_init__(self):
        object.__setattr__(self, "quarter_turns", self.quarter_turns % 4)

    @property
    def phase(self) -> float:
        return self.quarter_turns * math.pi / 2

    def inverse(self) -> PhaseGate:
        # X(2pi - m)
        return PhaseGate(-self.quarter_turns)

    def then(self, other: PhaseGate) -> PhaseGate:
        return PhaseGate(self.quarter_turns + other.quarter_turns)

    def matrix(self) -> np.ndarray:
        e = _QUARTER_PHASES[self.quarter_turns]
        return 0.5 * np.array([[1 + e, 1 - e], [1 - e, 1 + e]], dtype=complex)

    def __repr__(self):
        return f"X({('0', 'pi/2', 'pi', '3pi/2')[self.quarter_turns]})"


GATES = tuple(PhaseGate(q) for q in range(4))


class Basis(Enum):
    COMPUTATIONAL = "computational"  # {|0>, |1>}
    CIRCULAR = "circular"  # {|i>, |i-bar>}


class Label(IntEnum):
    """Canonical states, numbered so that X(q) sends label c to c + q (mod 4)."""

    ZERO = 0
    PLUS_I = 1
    ONE = 2
    MINUS_I = 3

    @property
    def basis(self) -> Basis:
        return Basis.COMPUTATIONAL if self % 2 == 0 else Basis.CIRCULAR

    @property
    def outcome(self) -> int:
        """Measurement outcome this state yields in its own basis."""
        return 0 if self in (Label.ZERO, Label.PLUS_I) else 1

    def rotated(self, gate: PhaseGate) -> Label:
        return Label((self + gate.quarter_turns) % 4)

    @staticmethod
    def of(basis: Basis, outcome: int) -> Label:
        if basis is Basis.COMPUTATIONAL:
            return Label.ONE if outcome else Label.ZERO
        return Label.MINUS_I if outcome else Label.PLUS_I


def canonical_phase(s: QubitState) -> QubitState:
    """Fix the global phase so amp0 is real and non-negative (amp1 if amp0 == 0)."""
    lead = s.amp0 if abs(s.amp0) > NORM_TOL else s.amp1
    rot = cmath.exp(-1j * cmath.phase(lead))
    return QubitState(s.amp0 * rot, s.amp1 * rot)


def apply_gate(g: PhaseGate, s: QubitState) -> QubitState:
    if g.quarter_turns == 0:
        return s
    e = _QUARTER_PHASES[g.quarter_turns]
    p, q = 0.5 * (1 + e), 0.5 * (1 - e)
    return QubitState(p * s.amp0 + q * s.amp1, q * s.amp0 + p * s.amp1)


_ZERO = QubitState(1 + 0j, 0j)
_CANONICAL = {
    Label.ZERO: _ZERO,
    Label.ONE: QubitState(0j, 1 + 0j),
    Label.PLUS_I: canonical_phase(apply_gate(GATES[1], _ZERO)),
    Label.MINUS_I: canonical_phase(apply_gate(GATES[3], _ZERO)),
}


def basis_state(label: Label) -> QubitState:
    return _CANONICAL[Label(label)]


def eigenstate(basis: Basis, outcome: int) -> QubitState:
    return _CANONICAL[Label.of(basis, outcome)]


def outcome_probability(s: QubitState, basis: Basis, outcome: int) -> float:
    """Born probability of `outcome` when measuring `s` in `basis`."""
    return abs(eigenstate(basis, outcome).inner(s)) ** 2


def measure(s: QubitState, basis: Basis, rng: np.random.Generator) -> tuple[int, QubitState]:
    p0 = outcome_probability(s, basis, 0)
    outcome = 0 if rng.random() < p0 else 1
    return outcome, eigenstate(basis, outcome)


def equal_up_to_phase(a: QubitState, b: QubitState, tol: float = NORM_TOL) -> bool:
    return abs(a.inner(b)) >= 1 - tol


def swap_pairs(states: Sequence, swaps: Sequence[int]) -> list:
    """Exchange elements 2j and 2j+1 wherever swaps[j] == 1.

    Stands in for a SWAP gate on adjacent qubits: every state here is a
    product state, so a positional exchange is exact.
    """
    if len(states) != 2 * len(swaps):
        raise ValueError("swap string must have one bit per adjacent pair")
    out = list(states)
    for j, bit in enumerate(swaps):
        if bit:
            out[2 * j], out[2 * j + 1] = out[2 * j + 1], out[2 * j]
    return out
