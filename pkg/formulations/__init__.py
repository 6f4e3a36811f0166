# Formulations package: one class per boundary integral formulation
from typing import NamedTuple, Optional

from formulations.burton_miller import BurtonMillerFormulation
from formulations.chief import ChiefFormulation
from formulations.conventional import ConventionalFormulation


class InteriorOperators(NamedTuple):
    """Potential operators evaluated at interior (CHIEF) points."""

    K: object  # (M, N) double layer
    S: object  # (M, N) single layer
    p_inc: object  # (M,) incident field, zeros for radiation


class BoundaryOperators(NamedTuple):
    """
    Collocation-row operators handed to a formulation. Entries may be plain
    arrays or `dualnum.Dual` values; formulations only combine them.
    """

    n: int
    S: object
    K: object
    Kp: Optional[object]  # adjoint double layer, when the formulation asks for it
    H: Optional[object]  # hypersingular, when the formulation asks for it
    eta: complex
    p_inc: Optional[object]  # incident field at collocation points (rigid scattering)
    dp_inc: Optional[object]  # its normal derivative
    q: Optional[object]  # prescribed normal pressure gradient (radiation)
    interior: Optional[InteriorOperators] = None


FORMULATIONS = {
    "conventional": ConventionalFormulation,
    "burton_miller": BurtonMillerFormulation,
    "chief": ChiefFormulation,
}


def get_formulation(name):
    key = getattr(name, "value", name)
    if key not in FORMULATIONS:
        raise ValueError(f"unknown formulation {key!r}; expected one of {sorted(FORMULATIONS)}")
    return FORMULATIONS[key]()
