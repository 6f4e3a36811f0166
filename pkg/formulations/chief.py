# CHIEF: conventional rows plus interior null-field rows, solved in least squares
import dualnum as dn
from formulations.conventional import ConventionalFormulation


class ChiefFormulation(ConventionalFormulation):
    """
    For an interior point z the exterior representation gives zero, so
    each point appends the row

        -K_z p = p_inc(z) - S_z q

    to the conventional system. The result is (N + M) x N.
    """

    name = "chief"
    least_squares = True

    def system(self, ops):
        A, b = super().system(ops)
        if ops.interior is None:
            return A, b
        interior = ops.interior
        bz = interior.p_inc if ops.q is None else interior.p_inc - interior.S @ ops.q
        return dn.concatenate([A, -interior.K]), dn.concatenate([b, bz])
