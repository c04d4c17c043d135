"""Exact finite probability space for doubly stochastic equations.

The forward motion W and the backward motion B are discretised as
independent Rademacher walks: each of the N steps carries one W
increment and one B increment, both valued +/- sqrt(dt) with equal
probability, all 4^N sign combinations forming the sample space with
uniform weight 4^(-N).

Information is two-sided.  A sigma-field is a pair (a, b): the W
increments with index < a are known, together with the B increments
with index >= b.  The time-t_i field is (i, i); it knows the forward
past of W and the backward future of B.  The family {(i, i)} is
neither increasing nor decreasing in i, so it is not a filtration --
conditional expectations onto it do not commute across times, which is
the feature everything downstream exercises.

A random variable is stored as a compact table indexed only by the
increments its field knows: shape (2^a, 2^(M-b)) where M is the number
of increment slots.  Bit j of the W index is the sign of the j-th W
increment; bit p of the B index is the sign of B increment b+p.  All
conditional expectations are exact finite averages over the unknown
axes, so every identity checked downstream holds to rounding error
only; no regression or Monte Carlo noise enters anywhere.

A lattice may carry several independent walk pairs per time step
("lanes"); the interacting particle system uses one lane per particle
on a joint lattice, with time-node fields at multiples of the lane
count.  Single-equation work always uses lanes=1.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import (
    IndexOutOfRange,
    LatticeMismatch,
    MeasurabilityViolation,
    NonPositiveHorizon,
    StepCountOutOfRange,
)

MAX_STEPS = 14  # memory guard: the path count is 4^N


@dataclass(frozen=True)
class LatticeSpec:
    """Discrete doubly stochastic probability space.

    n_steps time steps of size dt = horizon/n_steps; each step carries
    `lanes` independent (W, B) increment pairs of size +/- sqrt(dt).
    Bit index of lane l at time step j is j*lanes + l.
    """

    n_steps: int
    horizon: float
    lanes: int = 1

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def inc(self) -> float:
        return sqrt(self.dt)

    @property
    def n_bits(self) -> int:
        return self.n_steps * self.lanes

    def node(self, i: int) -> float:
        """Grid time t_i = i*dt."""
        return i * self.dt

    def bit_of(self, step: int, lane: int = 0) -> int:
        return step * self.lanes + lane


def build_lattice(n_steps: int, horizon: float, lanes: int = 1) -> LatticeSpec:
    """Validated lattice constructor."""
    if not (1 <= n_steps <= MAX_STEPS):
        raise StepCountOutOfRange(f"n_steps={n_steps} outside 1..{MAX_STEPS}")
    if not horizon > 0:
        raise NonPositiveHorizon(f"horizon={horizon} must be > 0")
    if lanes < 1:
        raise StepCountOutOfRange(f"lanes={lanes} must be >= 1")
    return LatticeSpec(n_steps=n_steps, horizon=float(horizon), lanes=lanes)


@dataclass(frozen=True)
class SigmaField:
    """Two-sided information: W bits < w_upto and B bits >= b_from known."""

    lattice: LatticeSpec
    w_upto: int
    b_from: int

    def __post_init__(self):
        m = self.lattice.n_bits
        if not (0 <= self.w_upto <= m and 0 <= self.b_from <= m):
            raise IndexOutOfRange(
                f"field ({self.w_upto}, {self.b_from}) outside 0..{m}"
            )

    def contains(self, other: SigmaField) -> bool:
        """True when `other` is a sub-field of self (self knows more)."""
        return other.w_upto <= self.w_upto and other.b_from >= self.b_from

    def join(self, other: SigmaField) -> SigmaField:
        """Coarsest field refining both operands."""
        if self.lattice != other.lattice:
            raise LatticeMismatch("fields live on different lattices")
        return SigmaField(
            self.lattice,
            max(self.w_upto, other.w_upto),
            min(self.b_from, other.b_from),
        )

    @property
    def table_shape(self) -> tuple[int, int]:
        return (1 << self.w_upto, 1 << (self.lattice.n_bits - self.b_from))


def time_field(lat: LatticeSpec, i: int) -> SigmaField:
    """The field F_{t_i} = (i*lanes, i*lanes) available at grid node i."""
    if not 0 <= i <= lat.n_steps:
        raise IndexOutOfRange(f"node {i} outside 0..{lat.n_steps}")
    return SigmaField(lat, i * lat.lanes, i * lat.lanes)


def trivial_field(lat: LatticeSpec) -> SigmaField:
    """No information at all: constants only."""
    return SigmaField(lat, 0, lat.n_bits)


def full_field(lat: LatticeSpec) -> SigmaField:
    return SigmaField(lat, lat.n_bits, 0)


@dataclass(frozen=True)
class PathIndex:
    """One sample point: sign codes for all W and all B increments.

    Bit j of w_bits (resp. b_bits) is 1 when increment j is +inc.
    """

    w_bits: int
    b_bits: int


def all_paths(lat: LatticeSpec) -> Iterator[PathIndex]:
    """Total ordered enumeration of all 4^M paths (use on small lattices)."""
    m = 1 << lat.n_bits
    for w in range(m):
        for b in range(m):
            yield PathIndex(w, b)


class MeasurableRV:
    """A random variable tagged with the field it is measurable against.

    values has shape field.table_shape; entries are the exact values on
    each combination of known increments.  Instances are immutable:
    every operation returns a fresh object and tables are write-locked.
    """

    __slots__ = ("field", "values")

    def __init__(self, field: SigmaField, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != field.table_shape:
            raise MeasurabilityViolation(
                f"table shape {values.shape} does not match field "
                f"({field.w_upto}, {field.b_from}) -> {field.table_shape}"
            )
        if values.flags.writeable:
            values = values.copy()
            values.flags.writeable = False
        object.__setattr__(self, "field", field)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("MeasurableRV is immutable")

    @property
    def lattice(self) -> LatticeSpec:
        return self.field.lattice

    # -- construction helpers -------------------------------------------

    @staticmethod
    def constant(lat: LatticeSpec, value: float) -> MeasurableRV:
        f = trivial_field(lat)
        return MeasurableRV(f, np.full(f.table_shape, float(value)))

    # -- elementwise algebra (operands lifted to the join field) --------

    def _binary(self, other, op) -> MeasurableRV:
        if isinstance(other, MeasurableRV):
            if self.lattice != other.lattice:
                raise LatticeMismatch("operands on different lattices")
            f = self.field.join(other.field)
            return MeasurableRV(f, op(lift(self, f).values, lift(other, f).values))
        return MeasurableRV(self.field, op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return MeasurableRV(self.field, -self.values)

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> MeasurableRV:
        """Apply a vectorised pointwise function."""
        return MeasurableRV(self.field, func(self.values))

    # -- evaluation ------------------------------------------------------

    def at(self, path: PathIndex) -> float:
        w = path.w_bits & ((1 << self.field.w_upto) - 1)
        b = path.b_bits >> self.field.b_from
        return float(self.values[w, b])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def zero_rv(lat: LatticeSpec) -> MeasurableRV:
    return MeasurableRV.constant(lat, 0.0)


def w_increment(lat: LatticeSpec, j: int) -> MeasurableRV:
    """The j-th forward increment, +/- inc by sign bit j."""
    _check_bit(lat, j)
    f = SigmaField(lat, j + 1, lat.n_bits)
    w = np.arange(1 << (j + 1))
    signs = 2.0 * ((w >> j) & 1) - 1.0
    return MeasurableRV(f, (lat.inc * signs)[:, None])


def b_increment(lat: LatticeSpec, j: int) -> MeasurableRV:
    """The j-th backward increment, +/- inc by sign bit j."""
    _check_bit(lat, j)
    f = SigmaField(lat, 0, j)
    c = np.arange(1 << (lat.n_bits - j))
    signs = 2.0 * (c & 1) - 1.0
    return MeasurableRV(f, (lat.inc * signs)[None, :])


def w_level(lat: LatticeSpec, i: int) -> MeasurableRV:
    """Walk value W(t_i) = sum of the first i*lanes forward increments."""
    out = zero_rv(lat)
    for j in range(i * lat.lanes):
        out = out + w_increment(lat, j)
    return out


def b_tail(lat: LatticeSpec, i: int) -> MeasurableRV:
    """B(T) - B(t_i) = sum of backward increments with index >= i*lanes."""
    out = zero_rv(lat)
    for j in range(i * lat.lanes, lat.n_bits):
        out = out + b_increment(lat, j)
    return out


def _check_bit(lat: LatticeSpec, j: int) -> None:
    if not 0 <= j < lat.n_bits:
        raise IndexOutOfRange(f"increment index {j} outside 0..{lat.n_bits - 1}")


# -- lifting and conditioning ---------------------------------------------


def lift(x: MeasurableRV, f: SigmaField) -> MeasurableRV:
    """Re-express x on the finer field f (no information change)."""
    a1, b1 = x.field.w_upto, x.field.b_from
    a2, b2 = f.w_upto, f.b_from
    if not f.contains(x.field):
        raise MeasurabilityViolation(
            f"cannot lift ({a1},{b1}) onto non-refining ({a2},{b2})"
        )
    v = x.values
    if a2 > a1:
        # new W bits are the high part of the W index: tile whole blocks
        v = np.tile(v, (1 << (a2 - a1), 1))
    if b2 < b1:
        # new B bits are the low part of the B index: repeat each entry
        v = np.repeat(v, 1 << (b1 - b2), axis=1)
    return MeasurableRV(f, v)


def condexp(x: MeasurableRV, f: SigmaField) -> MeasurableRV:
    """Exact conditional expectation of x given the two-sided field f.

    Averages uniformly over the W increments with index >= f.w_upto and
    the B increments with index < f.b_from; the result is declared
    f-measurable.
    """
    if x.lattice != f.lattice:
        raise LatticeMismatch("value and field on different lattices")
    a1, b1 = x.field.w_upto, x.field.b_from
    a2, b2 = f.w_upto, f.b_from
    v = x.values
    if a2 < a1:
        # unknown W bits [a2, a1) are the high part of the W index
        v = v.reshape(1 << (a1 - a2), 1 << a2, v.shape[1]).mean(axis=0)
    if b2 > b1:
        # unknown B bits [b1, b2) are the low part of the B index
        n_keep = 1 << (x.lattice.n_bits - b2)
        v = v.reshape(v.shape[0], n_keep, 1 << (b2 - b1)).mean(axis=2)
    reduced = MeasurableRV(
        SigmaField(x.lattice, min(a1, a2), max(b1, b2)), v
    )
    return lift(reduced, f)


def expectation(x: MeasurableRV) -> float:
    """Plain expectation: uniform average over all paths."""
    return float(x.values.mean())


# -- dependence audits -----------------------------------------------------


def depends_on_w_bit(x: MeasurableRV, j: int) -> bool:
    """True when the value table actually varies with W increment j."""
    _check_bit(x.lattice, j)
    a = x.field.w_upto
    if j >= a:
        return False
    v = x.values.reshape(1 << (a - j - 1), 2, 1 << j, x.values.shape[1])
    return bool(np.any(v[:, 0] != v[:, 1]))


def depends_on_b_bit(x: MeasurableRV, j: int) -> bool:
    """True when the value table actually varies with B increment j."""
    _check_bit(x.lattice, j)
    b = x.field.b_from
    m = x.lattice.n_bits
    if j < b:
        return False
    p = j - b
    v = x.values.reshape(x.values.shape[0], 1 << (m - b - p - 1), 2, 1 << p)
    return bool(np.any(v[:, :, 0] != v[:, :, 1]))


def measurable_wrt(x: MeasurableRV, f: SigmaField) -> bool:
    """Value-based audit: does x genuinely depend only on what f knows?"""
    for j in range(f.w_upto, x.field.w_upto):
        if depends_on_w_bit(x, j):
            return False
    for j in range(x.field.b_from, f.b_from):
        if depends_on_b_bit(x, j):
            return False
    return True


# -- stochastic integrals --------------------------------------------------


def forward_integral(
    z: Sequence[MeasurableRV], j_lo: int, j_hi: int
) -> MeasurableRV:
    """Discrete forward Ito integral sum_{j in [j_lo, j_hi)} z_j dW_j.

    Each integrand is taken at the left node and must be measurable for
    the field (j, j) there, so it cannot see its own increment; the Ito
    isometry then holds exactly.
    """
    if j_hi > j_lo and not z:
        raise IndexOutOfRange("empty integrand sequence")
    lat = z[0].lattice if z else None
    out = None
    for j in range(j_lo, j_hi):
        zj = z[j]
        fj = SigmaField(zj.lattice, j, j)
        if not measurable_wrt(zj, fj):
            raise MeasurabilityViolation(
                f"forward integrand at slot {j} depends on increments "
                f"unknown at ({j}, {j})"
            )
        term = zj * w_increment(zj.lattice, j)
        out = term if out is None else out + term
    if out is None:
        return zero_rv(lat) if lat is not None else _raise_empty()
    return out


def backward_integral(
    g_vals: Sequence[MeasurableRV], j_lo: int, j_hi: int
) -> MeasurableRV:
    """Discrete backward Ito integral sum_{j in [j_lo, j_hi)} g_j dB_j.

    The integrand multiplying dB_j carries right-node information: it
    must be measurable for (j+1, j+1), whose B part starts after j, so
    dB_j is independent of it and the isometry holds exactly.
    """
    if j_hi > j_lo and not g_vals:
        raise IndexOutOfRange("empty integrand sequence")
    lat = g_vals[0].lattice if g_vals else None
    out = None
    for j in range(j_lo, j_hi):
        gj = g_vals[j]
        fj = SigmaField(gj.lattice, j + 1, j + 1)
        if not measurable_wrt(gj, fj):
            raise MeasurabilityViolation(
                f"backward integrand at slot {j} depends on increments "
                f"unknown at ({j + 1}, {j + 1})"
            )
        term = gj * b_increment(gj.lattice, j)
        out = term if out is None else out + term
    if out is None:
        return zero_rv(lat) if lat is not None else _raise_empty()
    return out


def _raise_empty():
    raise IndexOutOfRange("cannot infer lattice from an empty integral")


# -- increment-flip derivative ----------------------------------------------


def flip_derivative(x: MeasurableRV, j: int) -> MeasurableRV:
    """Discrete Malliavin derivative in the W direction at slot j.

    (x with dW_j = +inc minus x with dW_j = -inc) / (2 inc); linear,
    annihilates anything blind to dW_j, and the result never depends on
    dW_j itself.
    """
    _check_bit(x.lattice, j)
    a = x.field.w_upto
    if j >= a:
        return MeasurableRV(x.field, np.zeros_like(x.values))
    v = x.values.reshape(1 << (a - j - 1), 2, 1 << j, x.values.shape[1])
    d = (v[:, 1] - v[:, 0]) / (2.0 * x.lattice.inc)
    out = np.stack([d, d], axis=1).reshape(x.values.shape)
    return MeasurableRV(x.field, out)
