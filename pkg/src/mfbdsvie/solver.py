"""Fixed-point machinery for the discrete equation.

One application of the map takes a frozen pair (y, z) and produces the
new pair (Y, Z) solving the frozen-coefficient equation exactly on the
lattice.  For each node i it assembles

    Phi_i = zeta(t_i)
          + sum_{j >= i} f(t_i, s_j, y_j, z_ij, z_ji, E y_j, E z_ij, E z_ji) dt
          + sum_{j >= i} g(t_i, s_{j+1}, right-node frozen args) dB_j

with the g states read at the right grid node (kernel column N treated
as zero) so that dB_j is independent of the integrand's backward part,
then splits Phi_i against the forward walk:

    Y_i  = E[Phi_i | (i, i)],
    Z_ij = E[Phi_i dW_j | (j, j)] / dt     for j >= i,

and pins the lower triangle by the representation of Y_i.  For the
driver families shipped here (affine mean-field coefficients, and
nonlinearities that do not mix the swapped kernel argument into other
states) the split is exact pathwise:

    Phi_i = Y_i + sum_{j >= i} Z_ij dW_j   on every path,

which is what `residual` measures with self-consistent arguments.

Iterating the map from (0, 0) contracts in the beta-weighted norm once
beta clears the threshold; the report keeps the successive-difference
trace so the empirical ratios can be held against the theoretical
contraction factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .drivers import (
    DriverSpec,
    TerminalSpec,
    beta_default,
    contraction_threshold,
    gamma_theory,
    terminal_rv,
)
from .errors import NoConvergence, ValidationError
from .fields import (
    AdaptedPath,
    BetaWeight,
    VolterraKernel,
    l_beta_norm,
    m_beta_norm,
    m_extend,
    pair_diff,
    pair_sup_diff,
    representation_row,
    zero_kernel,
    zero_path,
)
from .lattice import (
    LatticeSpec,
    MeasurableRV,
    b_increment,
    condexp,
    expectation,
    lift,
    time_field,
    w_increment,
    zero_rv,
)


class Scenario:
    """A validated problem instance: lattice + driver + terminal + beta."""

    def __init__(self, lattice: LatticeSpec, driver: DriverSpec,
                 terminal: TerminalSpec, beta: float | None = None,
                 safety: float = 1.5):
        if lattice.lanes != 1:
            raise ValidationError("scenarios run on single-lane lattices")
        threshold = contraction_threshold(driver, lattice.horizon)
        if beta is None:
            beta = beta_default(driver, lattice.horizon, safety)
        elif threshold > 0.0 and beta <= threshold:
            raise ValidationError(
                f"beta={beta} below the contraction threshold {threshold}"
            )
        self.lattice = lattice
        self.driver = driver
        self.terminal = terminal
        self.beta = float(beta)
        self.zeta = tuple(
            terminal_rv(terminal, lattice, i)
            for i in range(lattice.n_steps + 1)
        )

    @property
    def gamma_theory(self) -> float:
        return gamma_theory(self.driver, self.lattice.horizon, self.beta)


@dataclass
class SolverReport:
    """Iteration trace of one fixed-point run.

    The iteration stops once the pathwise sup-norm of the successive
    difference drops below tol (a beta-independent certificate for the
    pathwise residual contract).  diff_trace and ratio_trace hold the
    weighted-norm diffs the contraction theory speaks about, scaled by
    the square root of the total exponential weight mass so the entries
    stay on a pathwise scale; ratios are unaffected by the scaling.
    """

    iterations: int
    diff_trace: list[float]
    ratio_trace: list[float]
    gamma_theory: float
    final_residual: float
    final_norms: tuple[float, float]  # (restricted, full)


def _weight_mass(lat: LatticeSpec, beta: float) -> float:
    w = BetaWeight(beta)
    return sum(w.at(lat.node(i)) * lat.dt for i in range(lat.n_steps + 1))


def _eval_rv(fn: Callable, t: float, s: float,
             a_y: MeasurableRV, a_z: MeasurableRV, a_zr: MeasurableRV,
             m_y: float, m_z: float, m_zr: float) -> MeasurableRV:
    """Pathwise driver evaluation on lifted tables."""
    f = a_y.field.join(a_z.field).join(a_zr.field)
    v = fn(t, s, lift(a_y, f).values, lift(a_z, f).values,
           lift(a_zr, f).values, m_y, m_z, m_zr)
    v = np.broadcast_to(np.asarray(v, dtype=float), f.table_shape)
    return MeasurableRV(f, np.array(v))


def _assemble_phi(sc: Scenario, y: AdaptedPath, z: VolterraKernel, i: int,
                  ey, ez) -> MeasurableRV:
    lat = sc.lattice
    n, dt = lat.n_steps, lat.dt
    phi = sc.zeta[i]
    zero = zero_rv(lat)
    for j in range(i, n):
        # the loop body only runs for i <= j <= n-1, so the swapped
        # kernel indices (j, i) and (j+1, i) are always in range
        fij = _eval_rv(
            sc.driver.f_values, lat.node(i), lat.node(j),
            y[j], z.at(i, j), z.at(j, i),
            ey[j], ez[i][j], ez[j][i],
        )
        phi = phi + fij * dt
        jr = j + 1
        z_right = z.at(i, jr) if jr < n else zero
        ez_right = ez[i][jr] if jr < n else 0.0
        gij = _eval_rv(
            sc.driver.g_values, lat.node(i), lat.node(jr),
            y[jr], z_right, z.at(jr, i),
            ey[jr], ez_right, ez[jr][i],
        )
        phi = phi + gij * b_increment(lat, j)
    return phi


def _means(y: AdaptedPath, z: VolterraKernel):
    lat = y.lattice
    n = lat.n_steps
    ey = [expectation(y[i]) for i in range(n + 1)]
    ez = [[expectation(z.at(i, j)) for j in range(n)] for i in range(n + 1)]
    return ey, ez


def gamma_map(sc: Scenario, y: AdaptedPath, z: VolterraKernel,
              extend: bool = True) -> tuple[AdaptedPath, VolterraKernel]:
    """One exact application of the frozen-argument map.

    With extend=False the lower triangle of the result is left at zero
    instead of being pinned to the representation of the new Y; drivers
    that never read the swapped kernel argument produce identical upper
    triangles either way.
    """
    lat = sc.lattice
    n, dt = lat.n_steps, lat.dt
    ey, ez = _means(y, z)
    new_y = []
    rows = []
    for i in range(n + 1):
        phi = _assemble_phi(sc, y, z, i, ey, ez)
        yi = condexp(phi, time_field(lat, i))
        new_y.append(yi)
        row = []
        for j in range(n):
            if j >= i:
                zij = condexp(phi * w_increment(lat, j), time_field(lat, j))
                row.append(zij * (1.0 / dt))
            else:
                row.append(representation_row(yi, j) if extend
                           else condexp(zero_rv(lat), time_field(lat, j)))
        rows.append(row)
    return AdaptedPath(lat, new_y), VolterraKernel(lat, rows)


def representation_pair(sc: Scenario) -> tuple[AdaptedPath, VolterraKernel]:
    """The source-free solution: conditional terminal plus its kernel."""
    lat = sc.lattice
    n, dt = lat.n_steps, lat.dt
    ys, rows = [], []
    for i in range(n + 1):
        yi = condexp(sc.zeta[i], time_field(lat, i))
        ys.append(yi)
        row = []
        for j in range(n):
            if j >= i:
                zij = condexp(sc.zeta[i] * w_increment(lat, j), time_field(lat, j))
                row.append(zij * (1.0 / dt))
            else:
                row.append(representation_row(yi, j))
        rows.append(row)
    return AdaptedPath(lat, ys), VolterraKernel(lat, rows)


def residual(sc: Scenario, y: AdaptedPath, z: VolterraKernel) -> float:
    """Worst pathwise defect of the equation with self-consistent args."""
    lat = sc.lattice
    n = lat.n_steps
    ey, ez = _means(y, z)
    worst = 0.0
    for i in range(n + 1):
        acc = _assemble_phi(sc, y, z, i, ey, ez) - y[i]
        for j in range(i, n):
            acc = acc - z.at(i, j) * w_increment(lat, j)
        worst = max(worst, acc.max_abs())
    return worst


def picard_solve(sc: Scenario, tol: float = 1e-10, max_iter: int = 200,
                 start: tuple[AdaptedPath, VolterraKernel] | None = None,
                 defer_extension: bool = False
                 ) -> tuple[AdaptedPath, VolterraKernel, SolverReport]:
    """Iterate the map until the successive difference drops below tol."""
    if not tol > 0:
        raise ValidationError(f"tol={tol} must be > 0")
    lat = sc.lattice
    w = BetaWeight(sc.beta)
    scale = 1.0 / np.sqrt(_weight_mass(lat, sc.beta))
    if start is None:
        y, z = zero_path(lat), zero_kernel(lat)
    else:
        y, z = start
    diffs: list[float] = []
    converged = False
    iterations = 0
    for _ in range(max_iter):
        y2, z2 = gamma_map(sc, y, z, extend=not defer_extension)
        diffs.append(scale * m_beta_norm(*pair_diff(y2, z2, y, z), w))
        sup = pair_sup_diff(y2, z2, y, z)
        y, z = y2, z2
        iterations += 1
        if sup <= tol:
            converged = True
            break
    if not converged:
        tail = diffs[-1] / diffs[-2] if len(diffs) > 1 and diffs[-2] > 0 else float("inf")
        raise NoConvergence(
            f"max_iter={max_iter} hit with weighted diff={diffs[-1]:.3e}, "
            f"last ratio={tail:.3f}"
        )
    if defer_extension:
        z = m_extend(y, z)
    ratios = [
        diffs[k] / diffs[k - 1] if diffs[k - 1] > 0 else 0.0
        for k in range(1, len(diffs))
    ]
    report = SolverReport(
        iterations=iterations,
        diff_trace=diffs,
        ratio_trace=ratios,
        gamma_theory=sc.gamma_theory,
        final_residual=residual(sc, y, z),
        final_norms=(m_beta_norm(y, z, w), l_beta_norm(y, z, w)),
    )
    return y, z, report


@dataclass
class StabilityReport:
    """Both sides of the data-stability estimate with the empirical ratio."""

    lhs: float
    zeta_term: float
    f_term: float
    g_term: float
    ratio: float

    @property
    def rhs(self) -> float:
        return self.zeta_term + self.f_term + self.g_term


def stability_compare(sc1: Scenario, sc2: Scenario,
                      tol: float = 1e-12, max_iter: int = 200) -> StabilityReport:
    """Solve both scenarios and evaluate the stability functional.

    lhs is the squared restricted norm of the solution difference; the
    right side evaluates the driver differences along solution 2 (the g
    difference at the right-node states it is integrated with) plus the
    weighted terminal gap.  The unexhibited theoretical constant is
    reported only through the empirical ratio lhs/rhs.
    """
    lat = sc1.lattice
    if lat != sc2.lattice or sc1.beta != sc2.beta:
        raise ValidationError("stability comparison needs same lattice and beta")
    n, dt = lat.n_steps, lat.dt
    w = BetaWeight(sc1.beta)
    y1, z1, _ = picard_solve(sc1, tol=tol, max_iter=max_iter)
    y2, z2, _ = picard_solve(sc2, tol=tol, max_iter=max_iter)
    lhs = m_beta_norm(*pair_diff(y1, z1, y2, z2), w) ** 2

    zeta_term = 0.0
    for i in range(n + 1):
        dz = sc1.zeta[i] - sc2.zeta[i]
        zeta_term += w.at(lat.node(i)) * expectation(dz * dz) * dt
    ey, ez = _means(y2, z2)
    f_term = g_term = 0.0
    zero = zero_rv(lat)
    for i in range(n + 1):
        for j in range(i, n):
            args = (
                y2[j], z2.at(i, j), z2.at(j, i),
                ey[j], ez[i][j], ez[j][i],
            )
            df = _eval_rv(sc1.driver.f_values, lat.node(i), lat.node(j), *args) \
                - _eval_rv(sc2.driver.f_values, lat.node(i), lat.node(j), *args)
            f_term += w.at(lat.node(j)) * expectation(df * df) * dt * dt
            jr = j + 1
            rargs = (
                y2[jr], z2.at(i, jr) if jr < n else zero,
                z2.at(jr, i),
                ey[jr], ez[i][jr] if jr < n else 0.0,
                ez[jr][i],
            )
            dg = _eval_rv(sc1.driver.g_values, lat.node(i), lat.node(jr), *rargs) \
                - _eval_rv(sc2.driver.g_values, lat.node(i), lat.node(jr), *rargs)
            g_term += w.at(lat.node(j)) * expectation(dg * dg) * dt * dt
    rhs = zeta_term + f_term + g_term
    ratio = lhs / rhs if rhs > 0 else 0.0
    return StabilityReport(lhs=lhs, zeta_term=zeta_term, f_term=f_term,
                           g_term=g_term, ratio=ratio)
