import cmath
import math

import numpy as np
import pytest
from hypothesis import strategies as st

from backup_cnot import devices as dv
from backup_cnot.devices import NoiseModel
from backup_cnot.qstate import StateVector

# A generic noisy point used across modules; every parameter is off its ideal value.
NOISY = NoiseModel(eta=0.9, zeta=0.8, delta=0.3, k_plus=0.1 + 0.05j, k_d=0.2)


def ket(*pairs, ancillas=()):
    """Normalized sum of |alpha_level alpha_z, beta_level beta_z, vac> terms.

    ``pairs`` holds (coefficient, "a0", "d1") triples.
    """
    layout = dv.protocol_layout(tuple(ancillas))
    amps = np.zeros(layout.dims, dtype=complex)
    for coeff, alpha, beta, *anc in pairs:
        idx = (dv.atom_index(alpha[0], int(alpha[1])), dv.atom_index(beta[0], int(beta[1])), dv.VAC) + tuple(anc)
        amps[idx] += coeff
    amps /= np.linalg.norm(amps)
    return StateVector.from_tensor(layout, amps)


@pytest.fixture
def noisy():
    return NOISY


def complex_in_disc(radius):
    return st.builds(
        lambda r, t: r * cmath.exp(1j * t),
        st.floats(0.0, radius),
        st.floats(-math.pi, math.pi),
    )


noise_models = st.builds(
    NoiseModel,
    eta=st.builds(lambda r, t: r * cmath.exp(1j * t), st.floats(0.05, 1.0), st.floats(-math.pi, math.pi)),
    zeta=st.builds(lambda r, t: r * cmath.exp(1j * t), st.floats(0.05, 1.0), st.floats(-math.pi, math.pi)),
    delta=st.floats(-2 * math.pi, 2 * math.pi),
    k_plus=complex_in_disc(2.0),
    k_d=complex_in_disc(2.0),
    detector_efficiency=st.floats(0.05, 1.0),
)

input_coeffs = st.lists(
    st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=4, max_size=4
).filter(lambda cs: sum(a * a + b * b for a, b in cs) > 1e-3).map(
    lambda cs: np.array([complex(a, b) for a, b in cs]).reshape(2, 2)
)
