import numpy as np
import pytest

from latentlag.model import SystemParams


def scalar_decay_params(p=2):
    I = np.eye(p)
    return SystemParams(A=I / 2, B=np.zeros((p, p)), D=I / 2, Sigma_V=I, Sigma_W=I, q=[1.0])


def pure_delay_params(b=0.5, theta_max=2, p=1):
    I = np.eye(p)
    return SystemParams(A=np.zeros((p, p)), B=b * I, D=np.zeros((p, p)),
                        Sigma_V=np.zeros((p, p)), Sigma_W=I,
                        q=np.full(theta_max + 1, 1.0 / (theta_max + 1)))


def true_combos(P):
    q = P.q
    q1 = q[1] if q.size > 1 else 0.0
    return P.A + q[0] * P.B + P.D, q1 * P.B - P.A @ P.D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
