"""State spaces S^D, interpolation schedules and exact dense distributions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DomainError, NormalizationError, SpaceMismatchError

MAX_STATES = 2**24
NORM_TOL = 1e-10


@dataclass(frozen=True)
class StateSpace:
    """The product space {1..vocab_size}^dim.

    Flat indices are row-major with coordinate 0 most significant.
    """

    vocab_size: int
    dim: int

    def __post_init__(self):
        if int(self.vocab_size) != self.vocab_size or self.vocab_size < 2:
            raise DomainError(f"vocab_size must be an integer >= 2, got {self.vocab_size!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dim must be an integer >= 1, got {self.dim!r}")
        if self.vocab_size**self.dim > MAX_STATES:
            raise DomainError(
                f"|S|^D = {self.vocab_size}^{self.dim} exceeds the desk-scale limit 2^24"
            )

    @property
    def n_states(self) -> int:
        return self.vocab_size**self.dim

    @cached_property
    def _strides(self) -> np.ndarray:
        return self.vocab_size ** np.arange(self.dim - 1, -1, -1, dtype=np.int64)

    @cached_property
    def symbols(self) -> np.ndarray:
        """(n_states, dim) table of 0-based symbols for every flat index."""
        idx = np.arange(self.n_states, dtype=np.int64)
        return (idx[:, None] // self._strides[None, :]) % self.vocab_size

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(n_states, dim, vocab_size) flat index of x with coordinate d set to z.

        Entries with z == x^d point back at x itself.
        """
        sym = self.symbols
        base = np.arange(self.n_states, dtype=np.int64)
        z = np.arange(self.vocab_size, dtype=np.int64)
        delta = (z[None, None, :] - sym[:, :, None]) * self._strides[None, :, None]
        return base[:, None, None] + delta

    @cached_property
    def self_mask(self) -> np.ndarray:
        """(n_states, dim, vocab_size) boolean, True where z == x^d."""
        z = np.arange(self.vocab_size)
        return self.symbols[:, :, None] == z[None, None, :]

    def encode(self, coords: Sequence[int]) -> int:
        """Flat index of a state given its 1-based symbols."""
        arr = np.asarray(coords, dtype=np.int64)
        if arr.shape != (self.dim,):
            raise DomainError(f"expected {self.dim} coordinates, got {len(arr)}")
        if arr.min() < 1 or arr.max() > self.vocab_size:
            raise DomainError(f"symbols must lie in 1..{self.vocab_size}, got {tuple(arr)}")
        return int((arr - 1) @ self._strides)

    def decode(self, index: int) -> tuple[int, ...]:
        """1-based symbols of a flat index."""
        index = int(index)
        if not 0 <= index < self.n_states:
            raise DomainError(f"flat index {index} outside [0, {self.n_states})")
        return tuple(int(s) + 1 for s in (index // self._strides) % self.vocab_size)

    def state(self, coords: Sequence[int]) -> State:
        return State(self, tuple(int(c) for c in coords))

    def state_at(self, index: int) -> State:
        return State(self, self.decode(index))


@dataclass(frozen=True)
class State:
    """A point of S^D with 1-based symbols."""

    space: StateSpace
    coords: tuple[int, ...]

    def __post_init__(self):
        self.space.encode(self.coords)

    @property
    def index(self) -> int:
        return self.space.encode(self.coords)

    def coord(self, d: int) -> int:
        return self.coords[d]

    def complement(self, d: int) -> tuple[int, ...]:
        """All coordinates except d."""
        return self.coords[:d] + self.coords[d + 1:]

    def replace(self, d: int, symbol: int) -> State:
        c = list(self.coords)
        c[d] = symbol
        return State(self.space, tuple(c))


def hamming(a: State, b: State) -> int:
    if a.space != b.space:
        raise SpaceMismatchError("hamming distance between states of different spaces")
    return sum(x != y for x, y in zip(a.coords, b.coords))


_SCHEDULE_KINDS = ("linear", "polynomial", "cosine")


@dataclass(frozen=True)
class Schedule:
    """Nondecreasing kappa on [0, 1] with kappa(0) = 0 and kappa(1) = 1.

    ``linear``: t; ``polynomial``: t**s with s >= 1; ``cosine``: cos^2(pi (1 - t) / 2).
    """

    kind: str = "linear"
    s: float = 1.0

    def __post_init__(self):
        if self.kind not in _SCHEDULE_KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "polynomial" and not self.s >= 1:
            raise DomainError(f"polynomial schedule needs s >= 1, got {self.s}")

    def __call__(self, t):
        """Return ``(kappa, kappa_dot)``; accepts scalars or arrays."""
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
            raise DomainError(f"schedule evaluated outside [0, 1]: {t!r}")
        if self.kind == "linear":
            k, kd = arr, np.ones_like(arr)
        elif self.kind == "polynomial":
            k = arr**self.s
            kd = self.s * arr ** (self.s - 1) if self.s != 1 else np.ones_like(arr)
        else:
            # cos^2(pi (1 - t) / 2) written as sin^2(pi t / 2) so both endpoints are exact
            a = 0.5 * np.pi * arr
            k = np.sin(a) ** 2
            kd = 0.5 * np.pi * np.sin(np.pi * arr)
        if np.ndim(t) == 0:
            return float(k), float(kd)
        return k, kd

    def rate_factor(self, t):
        """kappa_dot / (1 - kappa), the conditional jump intensity toward x_1."""
        k, kd = self(t)
        arr = np.asarray(t, dtype=float)
        if self.kind == "cosine":
            out = np.pi * np.tan(0.5 * np.pi * arr)
        elif self.kind == "polynomial":
            with np.errstate(divide="ignore"):
                out = kd / -np.expm1(self.s * np.log(arr))
        else:
            out = kd / (1.0 - k)
        return float(out) if np.ndim(t) == 0 else out

    def to_dict(self) -> dict:
        if self.kind == "polynomial":
            return {"kind": self.kind, "s": self.s}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> Schedule:
        return cls(d["kind"], float(d.get("s", 1.0)))


def schedule_eval(sched: Schedule, t: float) -> tuple[float, float]:
    return sched(float(t))


@dataclass(frozen=True, eq=False)
class DenseDistribution:
    """A probability vector over the flat indices of a state space."""

    space: StateSpace
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.shape != (self.space.n_states,):
            raise NormalizationError(
                f"mass has shape {m.shape}, expected ({self.space.n_states},)"
            )
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise NormalizationError("mass entries must be finite and nonnegative")
        total = math.fsum(m)
        if abs(total - 1.0) > NORM_TOL:
            raise NormalizationError(f"mass sums to {total!r}, not 1 within {NORM_TOL}")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @classmethod
    def renormalize(cls, space: StateSpace, mass) -> DenseDistribution:
        """Explicitly rescale a nonnegative vector to sum to one."""
        m = np.asarray(mass, dtype=float)
        if np.any(m < 0):
            raise NormalizationError("cannot renormalize negative mass")
        total = math.fsum(m)
        if not total > 0:
            raise NormalizationError("cannot renormalize zero mass")
        return cls(space, m / total)

    def prob(self, state: State) -> float:
        if state.space != self.space:
            raise SpaceMismatchError("state from a different space")
        return float(self.mass[state.index])

    @property
    def full_support(self) -> bool:
        return bool(np.all(self.mass > 0))

    def to_json(self) -> dict:
        return {
            "vocab_size": self.space.vocab_size,
            "dim": self.space.dim,
            "mass": [float(v) for v in self.mass],
        }

    @classmethod
    def from_json(cls, obj: dict) -> DenseDistribution:
        space = StateSpace(int(obj["vocab_size"]), int(obj["dim"]))
        return cls(space, np.asarray(obj["mass"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> DenseDistribution:
        return cls.from_json(json.loads(Path(path).read_text()))


def make_uniform(space: StateSpace) -> DenseDistribution:
    n = space.n_states
    return DenseDistribution(space, np.full(n, 1.0 / n))


def point_mass(space: StateSpace, index: int) -> DenseDistribution:
    m = np.zeros(space.n_states)
    m[int(index)] = 1.0
    return DenseDistribution(space, m)


def product_distribution(space: StateSpace, marginals) -> DenseDistribution:
    """Independent coordinates with per-coordinate tables of shape (dim, vocab_size)."""
    marg = np.asarray(marginals, dtype=float)
    if marg.shape != (space.dim, space.vocab_size):
        raise DomainError(f"marginals must have shape {(space.dim, space.vocab_size)}")
    d_idx = np.arange(space.dim)
    mass = np.prod(marg[d_idx[None, :], space.symbols], axis=1)
    return DenseDistribution.renormalize(space, mass)


def random_distribution(space: StateSpace, rng: np.random.Generator, alpha: float = 1.0,
                        full_support: bool = True) -> DenseDistribution:
    """Dirichlet(alpha) draw, floored away from zero when ``full_support``."""
    m = rng.dirichlet(np.full(space.n_states, alpha))
    if full_support:
        m = np.maximum(m, 1e-3)
    return DenseDistribution.renormalize(space, m)


def _check_same(p: DenseDistribution, q: DenseDistribution) -> None:
    if p.space != q.space:
        raise SpaceMismatchError("distributions live on different state spaces")


def total_variation(p: DenseDistribution, q: DenseDistribution) -> float:
    _check_same(p, q)
    return 0.5 * math.fsum(np.abs(p.mass - q.mass))


def kl_divergence(p: DenseDistribution, q: DenseDistribution) -> float:
    _check_same(p, q)
    pos = p.mass > 0
    if np.any(q.mass[pos] == 0):
        raise DomainError("KL undefined: p is not absolutely continuous w.r.t. q")
    pm, qm = p.mass[pos], q.mass[pos]
    return max(0.0, math.fsum(pm * np.log(pm / qm)))
