"""Interacting particle system on the exact joint lattice.

n particles carry independent walk pairs (one lane per particle on a
joint lattice with n lanes per time step).  Each particle solves the
equation with its own terminal data and its own backward and forward
integrals, while every expectation argument is replaced by the
empirical mean over the n particles, the own value included.  The
solve is the fixed point of the natural map: assemble each particle's
frozen right side, condition on the joint time field, and extract the
kernel against the particle's own forward increments.

The n = 1 system with a mean-field-free driver reproduces the single
solve exactly; coupled drivers generate a gap to the mean-field
solution whose exact second moment

    e_n(t_i) = E | Y_particle_1(t_i) - Y_meanfield(t_i) |^2

is computed by full joint enumeration, lifting the mean-field solution
onto particle 1's increments.  No sampling enters anywhere, so the
decreasing trend in n is a deterministic statement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drivers import DriverSpec, TerminalSpec
from .errors import JointSpaceTooLarge, NoConvergence, ValidationError
from .lattice import (
    LatticeSpec,
    MeasurableRV,
    SigmaField,
    b_increment,
    condexp,
    lift,
    full_field,
    time_field,
    w_increment,
    zero_rv,
)
from .solver import Scenario, picard_solve

JOINT_PATH_GUARD = 1 << 24


@dataclass(frozen=True)
class ParticleConfig:
    """Joint-lattice particle run: n particles on an N-step grid."""

    n_particles: int
    lattice: LatticeSpec  # single-lane template (n_steps, horizon)
    driver: DriverSpec = None
    terminal: TerminalSpec = None
    tol: float = 1e-12
    max_iter: int = 300

    def __post_init__(self):
        if not 1 <= self.n_particles <= 3:
            raise ValidationError(
                f"n_particles={self.n_particles} outside 1..3"
            )
        if self.lattice.lanes != 1:
            raise ValidationError("pass a single-lane template lattice")
        bits = self.n_particles * self.lattice.n_steps
        if (1 << (2 * bits)) > JOINT_PATH_GUARD:
            raise JointSpaceTooLarge(
                f"4^(N*n) = 4^{bits} exceeds the enumeration guard"
            )

    def joint_lattice(self) -> LatticeSpec:
        return LatticeSpec(
            n_steps=self.lattice.n_steps,
            horizon=self.lattice.horizon,
            lanes=self.n_particles,
        )


def _particle_terminal_rv(term: TerminalSpec, joint: LatticeSpec, i: int,
                          lane: int) -> MeasurableRV:
    codes = np.arange(1 << joint.n_bits)
    total = np.zeros(codes.shape, dtype=float)
    for step in range(joint.n_steps):
        j = joint.bit_of(step, lane)
        total += 2.0 * ((codes >> j) & 1) - 1.0
    vals = term.value(joint.node(i), joint.inc * total)
    f = SigmaField(joint, joint.n_bits, joint.n_bits)
    return MeasurableRV(f, np.asarray(vals, dtype=float)[:, None])


@dataclass
class ParticleReport:
    iterations: int
    sup_diff: float
    exchangeability: float


def solve_particles(pc: ParticleConfig
                    ) -> tuple[list[list[MeasurableRV]], ParticleReport]:
    """Exact fixed point of the empirical-mean system.

    Returns per-particle node values y[p][i] on the joint lattice plus a
    report carrying the exchangeability defect measured pathwise under
    the particle-swap permutation.
    """
    joint = pc.joint_lattice()
    n, npart, dt = joint.n_steps, pc.n_particles, joint.dt
    zetas = [
        [_particle_terminal_rv(pc.terminal, joint, i, p) for i in range(n + 1)]
        for p in range(npart)
    ]
    zero = zero_rv(joint)
    y = [[condexp(zero, time_field(joint, i)) for i in range(n + 1)]
         for _ in range(npart)]
    z = [[[condexp(zero, time_field(joint, j)) for j in range(n)]
          for i in range(n + 1)] for _ in range(npart)]

    iterations = 0
    sup = np.inf
    for _ in range(pc.max_iter):
        mean_y = [_empirical_mean([y[p][i] for p in range(npart)])
                  for i in range(n + 1)]
        mean_z = [[_empirical_mean([z[p][i][j] for p in range(npart)])
                   for j in range(n)] for i in range(n + 1)]
        new_y, new_z = [], []
        for p in range(npart):
            rows_y, rows_z = [], []
            for i in range(n + 1):
                phi = zetas[p][i]
                for j in range(i, n):
                    fij = _joint_driver_eval(
                        pc.driver.f_values, joint, i, j,
                        y[p][j], z[p][i][j], z[p][j][i],
                        mean_y[j], mean_z[i][j], mean_z[j][i],
                    )
                    phi = phi + fij * dt
                    jr = j + 1
                    gij = _joint_driver_eval(
                        pc.driver.g_values, joint, i, jr,
                        y[p][jr], z[p][i][jr] if jr < n else zero,
                        z[p][jr][i],
                        mean_y[jr],
                        mean_z[i][jr] if jr < n else zero,
                        mean_z[jr][i],
                    )
                    phi = phi + gij * b_increment(joint, joint.bit_of(j, p))
                yi = condexp(phi, time_field(joint, i))
                rows_y.append(yi)
                row = []
                for j in range(n):
                    wj = w_increment(joint, joint.bit_of(j, p))
                    if j >= i:
                        row.append(
                            condexp(phi * wj, time_field(joint, j)) * (1.0 / dt)
                        )
                    else:
                        row.append(
                            condexp(yi * wj, time_field(joint, j)) * (1.0 / dt)
                        )
                rows_z.append(row)
            new_y.append(rows_y)
            new_z.append(rows_z)
        sup = 0.0
        for p in range(npart):
            for i in range(n + 1):
                sup = max(sup, (new_y[p][i] - y[p][i]).max_abs())
                for j in range(n):
                    sup = max(sup, (new_z[p][i][j] - z[p][i][j]).max_abs())
        y, z = new_y, new_z
        iterations += 1
        if sup <= pc.tol:
            break
    else:
        raise NoConvergence(
            f"particle fixed point exhausted max_iter={pc.max_iter}"
        )
    report = ParticleReport(
        iterations=iterations,
        sup_diff=sup,
        exchangeability=_exchangeability_defect(pc, joint, y),
    )
    return y, report


def _empirical_mean(rvs: list[MeasurableRV]) -> MeasurableRV:
    out = rvs[0]
    for rv in rvs[1:]:
        out = out + rv
    return out * (1.0 / len(rvs))


def _joint_driver_eval(fn, joint, i, s_idx, a_y, a_z, a_zr, m_y, m_z, m_zr):
    """Driver evaluation where the mean arguments are joint variables."""
    f = a_y.field.join(a_z.field).join(a_zr.field)
    f = f.join(m_y.field).join(m_z.field).join(m_zr.field)
    vals = fn(
        joint.node(i), joint.node(s_idx),
        lift(a_y, f).values, lift(a_z, f).values, lift(a_zr, f).values,
        lift(m_y, f).values, lift(m_z, f).values, lift(m_zr, f).values,
    )
    v = np.broadcast_to(np.asarray(vals, dtype=float), f.table_shape)
    return MeasurableRV(f, np.array(v))


def _swap_permutation(joint: LatticeSpec, p: int, q: int) -> np.ndarray:
    """Code permutation swapping the increments of particles p and q."""
    codes = np.arange(1 << joint.n_bits)
    out = codes.copy()
    for step in range(joint.n_steps):
        bp, bq = joint.bit_of(step, p), joint.bit_of(step, q)
        vp = (codes >> bp) & 1
        vq = (codes >> bq) & 1
        out &= ~((1 << bp) | (1 << bq))
        out |= (vq << bp) | (vp << bq)
    return out


def _exchangeability_defect(pc: ParticleConfig, joint: LatticeSpec,
                            y: list) -> float:
    """Worst pathwise defect of Y under swapping two particle labels."""
    if pc.n_particles == 1:
        return 0.0
    perm = _swap_permutation(joint, 0, 1)
    worst = 0.0
    ff = full_field(joint)
    for i in range(joint.n_steps + 1):
        a = lift(y[0][i], ff).values
        b = lift(y[1][i], ff).values
        swapped = a[np.ix_(perm, perm)]
        worst = max(worst, float(np.max(np.abs(swapped - b))))
    return worst


def lift_single_to_joint(rv: MeasurableRV, single: LatticeSpec,
                         joint: LatticeSpec, lane: int) -> np.ndarray:
    """Full-path table of a single-lattice variable on the joint lattice,
    reading only the given lane's increments."""
    m_single, m_joint = single.n_bits, joint.n_bits
    ff = SigmaField(single, m_single, 0)
    base = lift(rv, ff).values
    codes = np.arange(1 << m_joint)
    extract = np.zeros(codes.shape, dtype=int)
    for step in range(single.n_steps):
        bit = (codes >> joint.bit_of(step, lane)) & 1
        extract |= bit << step
    return base[extract[:, None], extract[None, :]]


def convergence_study(base: Scenario, n_list: list[int],
                      tol: float = 1e-12, max_iter: int = 300
                      ) -> list[tuple[int, int, float]]:
    """Exact mean-square gaps e_n(t_i) between particle 1 and the limit.

    Returns rows (n, t_idx, e_n) for every n in n_list and grid node.
    """
    y_mf, _, _ = picard_solve(base, tol=tol, max_iter=max_iter)
    single = base.lattice
    rows = []
    for npart in n_list:
        pc = ParticleConfig(
            n_particles=npart, lattice=single, driver=base.driver,
            terminal=base.terminal, tol=tol, max_iter=max_iter,
        )
        joint = pc.joint_lattice()
        y, _ = solve_particles(pc)
        for i in range(single.n_steps + 1):
            a = lift(y[0][i], full_field(joint)).values
            b = lift_single_to_joint(y_mf[i], single, joint, 0)
            gap = float(np.mean((a - b) ** 2))
            rows.append((npart, i, gap))
    return rows
