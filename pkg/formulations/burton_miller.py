# Burton-Miller combination of the surface equation and its normal derivative
import numpy as np


class BurtonMillerFormulation:
    """
    Adds eta times the normal-derivative equation to every collocation row:

        (1/2 I - K - eta H) p = p_inc + eta dp_inc/dn               (rigid)
        (1/2 I - K - eta H) p = -S q - eta (q/2 + K' q)             (radiation)

    Any eta with a non-zero imaginary part removes the interior
    resonances; the default is i/k.
    """

    name = "burton_miller"
    needs_hypersingular = True
    needs_adjoint_double_layer = True
    least_squares = False

    def system(self, ops):
        A = 0.5 * np.eye(ops.n) - ops.K - ops.eta * ops.H
        if ops.q is None:
            b = ops.p_inc + ops.eta * ops.dp_inc
        else:
            b = -(ops.S @ ops.q) - ops.eta * (0.5 * ops.q + ops.Kp @ ops.q)
        return A, b
