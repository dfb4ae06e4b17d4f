"""Per-step measurements and error norms: everything the theory tracks.

Mass, minimum concentration, discrete free energy, the energy-dissipation
time-step bound, Gauss/Faraday residuals, and L2 errors against closed-form
solutions with observed convergence orders.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import CellField, FaceField, curl_scaled, divergence, norm_inf
from .transport import DgField

__all__ = [
    "DiagnosticsRecord",
    "ErrorReport",
    "free_energy",
    "dt_star",
    "gauss_residual",
    "faraday_residual",
    "error_vs_exact",
    "observed_orders",
]


@dataclass
class DiagnosticsRecord:
    """One row of per-step measurements."""

    t: float
    mass: tuple[float, ...]
    min_c: tuple[float, ...]
    free_energy: float
    gauss_residual: float
    faraday_residual: float
    dt_star: float
    gauss_residual_pre_faraday: float | None = None

    @staticmethod
    def csv_header(nspecies: int, include_pre_faraday: bool = True) -> list[str]:
        cols = ["t"]
        cols += [f"mass_{l + 1}" for l in range(nspecies)]
        cols += [f"min_c_{l + 1}" for l in range(nspecies)]
        cols += ["energy", "gauss_residual"]
        if include_pre_faraday:
            cols.append("gauss_residual_pre_faraday")
        cols += ["faraday_residual", "dt_star"]
        return cols

    def csv_row(self, include_pre_faraday: bool = True) -> list[str]:
        vals = [self.t, *self.mass, *self.min_c, self.free_energy, self.gauss_residual]
        if include_pre_faraday:
            pre = self.gauss_residual_pre_faraday
            vals.append(self.gauss_residual if pre is None else pre)
        vals += [self.faraday_residual, self.dt_star]
        return [format(v, ".17g") for v in vals]


def free_energy(
    d: FaceField,
    concentrations: Sequence[CellField],
    mus: Sequence[CellField | None],
    kappa: float,
    eps_face: FaceField,
) -> float:
    """Discrete free energy: electrostatic face sum plus entropy cell sum."""
    g = d.grid
    k2 = kappa * kappa
    electro = float(
        np.sum(k2 * d.xcomp**2 / eps_face.xcomp) + np.sum(k2 * d.ycomp**2 / eps_face.ycomp)
    )
    entropy = 0.0
    for l, (c, mu) in enumerate(zip(concentrations, mus)):
        vals = c.values
        if np.any(vals <= 0):
            i, j = map(int, np.argwhere(vals <= 0)[0])
            raise ValueError(
                f"free energy undefined: species {l} concentration {vals[i, j]:.6e} "
                f"at cell ({i}, {j}) is not positive"
            )
        term = vals * np.log(vals)
        if mu is not None:
            term = term + vals * mu.values
        entropy += float(np.sum(term))
    return g.cell_area * (electro + entropy)


def dt_star(
    dg: DgField,
    eps_face: FaceField,
    concentrations: Sequence[CellField],
    kappa: float,
    valences: Sequence[float],
) -> float:
    """Energy-dissipation time-step bound.

    2*kappa*eps_min^3 / (eps_max^2 * c_max * sum q^2) * exp(-max |dg|); the
    exponential underflows to zero for extreme drift, which simply disarms
    the dissipation guarantee for that step.
    """
    eps_min = min(float(np.min(eps_face.xcomp)), float(np.min(eps_face.ycomp)))
    eps_max = max(float(np.max(eps_face.xcomp)), float(np.max(eps_face.ycomp)))
    c_max = max(float(np.max(c.values)) for c in concentrations)
    if c_max <= 0:
        raise ValueError("dt_star needs a positive maximum concentration")
    q2 = sum(q * q for q in valences)
    return float(
        2.0 * kappa * eps_min**3 / (eps_max**2 * c_max * q2) * np.exp(-dg.max_abs())
    )


def gauss_residual(
    d: FaceField,
    concentrations: Sequence[CellField],
    valences: Sequence[float],
    rho_f: CellField,
    kappa: float,
) -> float:
    """max over cells of |2 kappa^2 div(d) - sum_l q_l c_l - rho_f|."""
    resid = 2.0 * kappa * kappa * divergence(d).values - rho_f.values
    for q, c in zip(valences, concentrations):
        resid -= q * c.values
    return float(np.max(np.abs(resid)))


def faraday_residual(d: FaceField, eps_face: FaceField) -> float:
    """max-norm of the discrete curl of d/eps over all corners."""
    return norm_inf(curl_scaled(d, eps_face))


def error_vs_exact(numeric, exact: Callable, t: float):
    """Discrete L2 error against a closed form sampled at native locations.

    For a CellField, exact is a scalar function (x, y, t) and a float is
    returned.  For a FaceField, exact is a pair (fx, fy) and the per-component
    errors are returned as a tuple, matching the per-column table layout.
    """
    if isinstance(numeric, CellField):
        g = numeric.grid
        x, y = g.cell_mesh()
        diff = numeric.values - exact(x, y, t)
        return float(np.sqrt(g.cell_area * np.sum(diff**2)))
    if isinstance(numeric, FaceField):
        g = numeric.grid
        fx, fy = exact
        xx, xy = g.xface_mesh()
        yx, yy = g.yface_mesh()
        ex = numeric.xcomp - fx(xx, xy, t)
        ey = numeric.ycomp - fy(yx, yy, t)
        return (
            float(np.sqrt(g.cell_area * np.sum(ex**2))),
            float(np.sqrt(g.cell_area * np.sum(ey**2))),
        )
    raise TypeError(f"unsupported field type {type(numeric)!r}")


def observed_orders(errors: Sequence[tuple[float, float]]) -> list[float | None]:
    """log-ratio convergence orders from (h, error) pairs, finest last.

    Entry k compares levels k-1 and k; a zero error makes the order
    undefined and is reported as None.
    """
    if len(errors) < 2:
        return []
    hs = [h for h, _ in errors]
    if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
        raise ValueError("h values must be strictly decreasing")
    out: list[float | None] = []
    for (h1, e1), (h2, e2) in zip(errors, errors[1:]):
        if e1 <= 0 or e2 <= 0:
            out.append(None)
        else:
            out.append(float(np.log(e1 / e2) / np.log(h1 / h2)))
    return out


@dataclass
class ErrorReport:
    """Final-time errors and observed orders over a mesh sequence."""

    h: list[float]
    errors: dict[str, list[float]] = field(default_factory=dict)
    orders: dict[str, list[float | None]] = field(default_factory=dict)

    def finalize(self) -> None:
        self.orders = {
            name: observed_orders(list(zip(self.h, errs))) for name, errs in self.errors.items()
        }

    def table(self) -> str:
        names = list(self.errors)
        lines = ["h " + " ".join(f"{n} order_{n}" for n in names)]
        for k, h in enumerate(self.h):
            cells = [format(h, "g")]
            for n in names:
                cells.append(format(self.errors[n][k], ".6e"))
                if k == 0:
                    cells.append("/")
                else:
                    o = self.orders[n][k - 1]
                    cells.append("/" if o is None else format(o, ".4f"))
            lines.append(" ".join(cells))
        return "\n".join(lines)
