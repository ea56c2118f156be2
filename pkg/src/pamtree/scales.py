"""Model parameters and the deterministic scale functions.

Everything downstream is phrased in terms of a handful of exponents derived
from the potential tail index ``alpha`` and the offspring stability index
``beta``:

    d = beta/(beta-1)      volume-growth dimension of the tree
    q = d/(alpha-d)        growth exponent of the potential-height scale
    z = d*alpha/(alpha-d)  slack exponent used by the localisation sets
    p = q + 2              polylog padding of the truncation radius
    C = p*d/alpha + z + 1  threshold exponent for the high-potential set

and three scale functions of time (natural logs throughout):

    a(t) = (t/log t)^q         height of the dominant potential peaks
    r(t) = (t/log t)^(q+1)     distance of the localisation sites from the root
    R(t) = r(t) * (log t)^p    truncation radius for solves

The identities r(t) = a(t)*t/log t and r(t)^(d/alpha) = a(t) are exact in the
exponents and are used as self-checks in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelParams:
    """Derived exponents for one (alpha, beta) model choice.

    Use :func:`derive_params` to construct; the fields are consistent by
    construction and the solution of the model is finite only when
    ``alpha > d``.
    """

    alpha: float
    beta: float
    d: float
    q: float
    z: float
    p: float
    C: float

    def scale_a(self, t: float) -> float:
        """Potential-height scale a(t) = (t/log t)^q, defined for t > 1."""
        _check_time(t)
        return (t / math.log(t)) ** self.q

    def scale_r(self, t: float) -> float:
        """Localisation-distance scale r(t) = (t/log t)^(q+1), for t > 1."""
        _check_time(t)
        return (t / math.log(t)) ** (self.q + 1.0)

    def scale_R(self, t: float) -> float:
        """Truncation radius R(t) = r(t) * (log t)^p, for t > 1."""
        _check_time(t)
        return self.scale_r(t) * math.log(t) ** self.p


def _check_time(t: float) -> None:
    if not t > 1.0:
        raise ValueError(f"scale functions need t > 1 (log t > 0), got t={t}")


def derive_params(alpha: float, beta: float) -> ModelParams:
    """Populate all derived exponents from (alpha, beta).

    Requires beta in (1, 2] and alpha > d = beta/(beta-1); alpha <= d is
    rejected because the total mass of the solution would be infinite.
    """
    if not (1.0 < beta <= 2.0):
        raise ValueError(f"beta must lie in (1, 2], got {beta}")
    d = beta / (beta - 1.0)
    if not alpha > d:
        raise ValueError(
            f"alpha must exceed d = beta/(beta-1) = {d:g}, got alpha={alpha}"
        )
    q = d / (alpha - d)
    z = d * alpha / (alpha - d)
    p = q + 2.0
    c_exp = p * d / alpha + z + 1.0
    return ModelParams(alpha=alpha, beta=beta, d=d, q=q, z=z, p=p, C=c_exp)
