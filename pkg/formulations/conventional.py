# Conventional collocation: jump term plus double layer
import numpy as np


class ConventionalFormulation:
    """
    (1/2 I - K) p = p_inc for a rigid scatterer, (1/2 I - K) p = -S q for
    a vibrating surface. Singular at the interior resonances of the body.
    """

    name = "conventional"
    needs_hypersingular = False
    needs_adjoint_double_layer = False
    least_squares = False

    def system(self, ops):
        return 0.5 * np.eye(ops.n) - ops.K, self.rhs(ops)

    def rhs(self, ops):
        if ops.q is None:
            return ops.p_inc
        return -(ops.S @ ops.q)
