"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    n_checked: int
    tolerance: float
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor: float = 1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


_STENCILS = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}


def numeric_gradient(params: dict, loss_fn: Callable[[], float], h: float = 1e-5, order: int = 2) -> dict:
    """Perturb each entry of each array in ``params`` in place and difference ``loss_fn``.

    ``order`` selects the 2-point (second-order) or 5-point (fourth-order) central stencil.
    The fourth-order stencil tolerates a larger ``h``, which keeps roundoff out of small entries.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    stencil = _STENCILS[order]
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig, acc = flat[k], 0.0
            for shift, weight in stencil:
                flat[k] = orig + shift * h
                acc += weight * loss_fn()
            flat[k] = orig
            gflat[k] = acc / h
        out[name] = g
    return out


def grad_check(params: dict, loss_fn: Callable[[], float], analytic: dict, tolerance: float = 1e-5,
               h: float = 1e-5, floor: float = 1e-8, order: int = 2) -> GradCheckReport:
    """Compare ``analytic`` gradients against central differences of ``loss_fn``.

    ``params`` must be the live float64 arrays ``loss_fn`` reads. Relative error per entry is
    ``|a - n| / max(|a| + |n|, floor)``.
    """
    numeric = numeric_gradient(params, loss_fn, h, order)
    worst_name, worst, errs = "", 0.0, []
    for name in params:
        rel = relative_error(analytic[name], numeric[name], floor)
        errs.append(rel.ravel())
        if rel.size and rel.max() >= worst:
            worst, worst_name = float(rel.max()), name
    allerr = np.concatenate(errs) if errs else np.zeros(0)
    return GradCheckReport(worst, float(allerr.mean()) if allerr.size else 0.0, int(allerr.size), tolerance, worst_name)
