"""Two-player urn model: types, tenability checks, transition law, simulation.

The urn holds red and blue balls.  At every step a coin with success
probability ``theta`` picks the player: player A (history-aware) samples a
ball uniformly from the urn and keeps its color with probability ``p``,
player B (i.i.d.) picks blue with probability ``p`` regardless of the urn.
The chosen color selects a column of the replacement matrix: the R-column
adds ``(a, b)`` red/blue balls, the B-column adds ``(c, d)``.

The matrix is balanced (``a+b = c+d = K``), so the total count after ``n``
steps is deterministic: ``T_n = K*n + T_0``.  A *memory lapse* is a maximal
run of steps taken by player B.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .rng import stream_generator

__all__ = [
    "ReplacementMatrix",
    "ModelParams",
    "UrnState",
    "StepRecord",
    "Trajectory",
    "LapseRecord",
    "ValidationError",
    "ValidationResult",
    "validate_model",
    "conditional_red_probability",
    "marginal_red_probability",
    "step",
    "simulate",
    "extract_lapses",
]


class ValidationError(ValueError):
    """A model violates one of the tenability assumptions (a)-(d)."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("model violates tenability assumptions: " + "; ".join(self.violations))


@dataclass(frozen=True)
class ReplacementMatrix:
    """Balanced 2x2 replacement matrix with columns ``(a, b)`` and ``(c, d)``."""

    a: int
    b: int
    c: int
    d: int

    @property
    def K(self) -> int:
        """Balance constant: number of balls added per step (column sum)."""
        return self.a + self.b

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.c], [self.b, self.d]], dtype=float)

    def column_swapped(self) -> "ReplacementMatrix":
        """Matrix with the roles of the two columns exchanged."""
        return ReplacementMatrix(self.c, self.d, self.a, self.b)


@dataclass(frozen=True)
class ModelParams:
    """Full model description: matrix, strategy probabilities, initial counts.

    ``p`` and ``theta`` may be floats or exact rationals
    (:class:`fractions.Fraction`); exact values enable exact regime
    classification and the rational oracle mode.
    """

    matrix: ReplacementMatrix
    p: float
    theta: float
    R0: int = 1
    B0: int = 1

    @property
    def T0(self) -> int:
        return self.R0 + self.B0

    def describe(self) -> dict:
        m = self.matrix
        return {
            "a": m.a, "b": m.b, "c": m.c, "d": m.d, "K": m.K,
            "p": float(self.p), "theta": float(self.theta),
            "R0": self.R0, "B0": self.B0,
        }


@dataclass(frozen=True)
class UrnState:
    """Urn composition after ``n`` steps."""

    n: int
    R: int
    B: int

    @property
    def T(self) -> int:
        return self.R + self.B


@dataclass(frozen=True)
class StepRecord:
    """One reinforcement step: player indicator and applied column."""

    y: int            # 1 = player A, 0 = player B
    column: str       # "R" or "B"


@dataclass(frozen=True)
class LapseRecord:
    """Maximal run of player-B steps: start index and length."""

    start: int
    length: int


@dataclass(frozen=True)
class Trajectory:
    """A simulated path: states ``0..n`` and the ``n`` step records."""

    params: ModelParams
    seed: int
    replicate: int | None
    states: tuple[UrnState, ...]
    steps: tuple[StepRecord, ...]

    @property
    def n(self) -> int:
        return len(self.steps)

    def y_sequence(self) -> list[int]:
        return [s.y for s in self.steps]

    def to_csv(self, path=None) -> str | None:
        """Write ``n,R,B,T,y,column`` rows; the initial row has empty y/column.

        Returns the CSV text when ``path`` is None.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "R", "B", "T", "y", "column"])
        w.writerow([0, self.states[0].R, self.states[0].B, self.states[0].T, "", ""])
        for st, rec in zip(self.states[1:], self.steps):
            w.writerow([st.n, st.R, st.B, st.T, rec.y, rec.column])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        return None


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...]


def validate_model(params: ModelParams) -> ValidationResult:
    """Check tenability assumptions (a)-(d); violations are reported, never fixed.

    (a) positive initial count, (b) balanced matrix, (c) ``a != c``,
    (d) non-negative entries.
    """
    m = params.matrix
    violations = []
    if params.T0 <= 0:
        violations.append("(a) initial count T0 = R0 + B0 must be positive")
    if m.a + m.b != m.c + m.d or m.a + m.b < 1:
        violations.append("(b) matrix must be balanced with K = a+b = c+d >= 1")
    if m.a == m.c:
        violations.append("(c) a != c required, otherwise the red count is deterministic")
    if min(m.a, m.b, m.c, m.d) < 0:
        violations.append("(d) all matrix entries must be non-negative")
    if params.R0 < 0 or params.B0 < 0:
        violations.append("(a) initial counts must be non-negative")
    if not (0 <= params.p <= 1):
        violations.append("p must lie in [0, 1]")
    if not (0 <= params.theta <= 1):
        violations.append("theta must lie in [0, 1]")
    return ValidationResult(not violations, tuple(violations))


def require_valid(params: ModelParams) -> None:
    res = validate_model(params)
    if not res.ok:
        raise ValidationError(res.violations)


def conditional_red_probability(r, T, y, p):
    """P(apply R-column | r red of T balls, player indicator y).

    Equals ``1 - p + (2p - 1) * y * r/T``: player A (y=1) keeps the sampled
    color with probability p, player B (y=0) picks red with probability 1-p.
    Accepts scalars or numpy arrays; exact with Fraction inputs.
    """
    if np.any(np.asarray(T) <= 0):
        raise ValueError("total count T must be positive")
    rr = np.asarray(r)
    if np.any(rr < 0) or np.any(rr > np.asarray(T)):
        raise ValueError("red count r must satisfy 0 <= r <= T")
    return (1 - p) + (2 * p - 1) * y * (r / T)


def marginal_red_probability(r, T, p, theta):
    """P(apply R-column | r red of T balls), player coin averaged out.

    Equals ``1 - p + theta * (2p - 1) * r/T``.
    """
    if np.any(np.asarray(T) <= 0):
        raise ValueError("total count T must be positive")
    rr = np.asarray(r)
    if np.any(rr < 0) or np.any(rr > np.asarray(T)):
        raise ValueError("red count r must satisfy 0 <= r <= T")
    return (1 - p) + theta * (2 * p - 1) * (r / T)


def step(state: UrnState, params: ModelParams, rng: np.random.Generator) -> tuple[UrnState, StepRecord]:
    """Advance the urn one step.

    Draw order is fixed for reproducibility: first the player coin
    (Y ~ Bernoulli(theta)), then the column uniform.
    """
    if state.R < 0 or state.B < 0 or state.T <= 0:
        raise ValueError(f"invalid urn state {state}")
    m = params.matrix
    y = 1 if rng.random() < params.theta else 0
    q = conditional_red_probability(state.R, state.T, y, params.p)
    red = rng.random() < q
    if red:
        new = UrnState(state.n + 1, state.R + m.a, state.B + m.b)
    else:
        new = UrnState(state.n + 1, state.R + m.c, state.B + m.d)
    return new, StepRecord(y=y, column="R" if red else "B")


def simulate(params: ModelParams, n: int, seed: int, replicate: int | None = None) -> Trajectory:
    """Simulate ``n`` steps; bit-reproducible for fixed ``(params, n, seed, replicate)``.

    ``replicate`` selects the derived stream used by the ensemble engine for
    that replicate index, so single trajectories can be replayed from an
    ensemble run.
    """
    require_valid(params)
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = stream_generator(seed, replicate)
    states = [UrnState(0, params.R0, params.B0)]
    steps: list[StepRecord] = []
    st = states[0]
    for _ in range(n):
        st, rec = step(st, params, rng)
        states.append(st)
        steps.append(rec)
    return Trajectory(params=params, seed=seed, replicate=replicate,
                      states=tuple(states), steps=tuple(steps))


def extract_lapses(y_sequence: Iterable[int]) -> list[LapseRecord]:
    """All maximal runs of zeros (player-B stretches), in order.

    Concatenating the returned runs with the runs of ones reconstructs the
    input sequence exactly.
    """
    lapses = []
    start = None
    idx = -1
    for idx, y in enumerate(y_sequence):
        if y == 0:
            if start is None:
                start = idx
        else:
            if start is not None:
                lapses.append(LapseRecord(start=start, length=idx - start))
                start = None
    if start is not None:
        lapses.append(LapseRecord(start=start, length=idx - start + 1))
    return lapses
