"""Rank-one resolvent perturbations at matrix scale.

Given a generator L on R^n, a subspace D that is not all of R^n and a
functional phi vanishing on D, the rank-one map C x = phi(x) u gives a
second generator L + C that agrees with L on D.  The change of variables
U = I - C R(lam0) conjugates L + C~ to L + C with C~ = (lam0 - L) C R(lam0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import ScenarioError, SingularResolvent, SmallnessViolation

PHI_ON_D_TOL = 1e-12
MAX_CANCELLATION = 4.0


def growth_bound(L: np.ndarray) -> float:
    """Largest real part of the spectrum."""
    return float(np.max(np.linalg.eigvals(L).real))


@dataclass
class LabScenario:
    L: np.ndarray  # (n, n)
    D_basis: np.ndarray  # (n, k), columns span D
    phi: np.ndarray  # (n,)
    u: np.ndarray  # (n,)
    lambda0: float
    allow_zero_u: bool = False

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        n = self.L.shape[0]
        if self.L.shape != (n, n):
            raise ScenarioError("L must be square")
        self.D_basis = np.asarray(self.D_basis, dtype=float).reshape(n, -1)
        self.phi = np.asarray(self.phi, dtype=float).reshape(n)
        self.u = np.asarray(self.u, dtype=float).reshape(n)
        self.lambda0 = float(self.lambda0)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def k(self) -> int:
        return self.D_basis.shape[1]

    def resolvent(self) -> np.ndarray:
        M = self.lambda0 * np.eye(self.n) - self.L
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularResolvent(f"lambda0 = {self.lambda0:g} is (numerically) in the spectrum of L, cond = {cond:.3e}")
        return np.linalg.solve(M, np.eye(self.n))

    def smallness(self) -> float:
        """phi(R(lambda0) u)."""
        return float(self.phi @ self.resolvent() @ self.u)

    def validate(self) -> dict:
        """Check the scenario invariants; returns the measured quantities."""
        if self.k > self.n:
            raise ScenarioError("D_basis has more columns than the dimension")
        phi_norm = float(np.linalg.norm(self.phi))
        if phi_norm == 0.0:
            raise ScenarioError("phi must be non-zero")
        if not self.allow_zero_u and not np.any(self.u):
            raise ScenarioError("u must be non-zero")
        on_D = float(np.linalg.norm(self.phi @ self.D_basis))
        if on_D > PHI_ON_D_TOL * phi_norm * max(float(np.linalg.norm(self.D_basis)), 1.0):
            raise ScenarioError(f"phi does not vanish on D: |phi D| = {on_D:.3e}")
        cond = float(np.linalg.cond(self.lambda0 * np.eye(self.n) - self.L))
        q = self.smallness()
        if not abs(q) < 1.0:
            raise SmallnessViolation(f"|phi(R u)| = {abs(q):.6g} is not below 1")
        return {"phi_on_D": on_D, "resolvent_condition": cond, "phi_R_u": q}

    def with_u(self, u) -> "LabScenario":
        return LabScenario(self.L, self.D_basis, self.phi, u, self.lambda0, self.allow_zero_u)

    def to_dict(self) -> dict:
        return {"L": self.L.tolist(), "D_basis": self.D_basis.T.tolist(), "phi": self.phi.tolist(),
                "u": self.u.tolist(), "lambda0": self.lambda0}


@dataclass
class PerturbationBundle:
    R: np.ndarray
    C: np.ndarray
    Theta: np.ndarray
    U: np.ndarray
    U_inv: np.ndarray  # direct solve
    U_inv_neumann: np.ndarray  # closed form of the Neumann series
    C_tilde: np.ndarray
    phi_R_u: float
    inverse_agreement: float  # relative difference of the two inverses
    inverse_defect: float  # |U U_inv - I|_F

    def to_dict(self) -> dict:
        return {
            "phi_R_u": self.phi_R_u,
            "rank_C": int(np.linalg.matrix_rank(self.C)),
            "inverse_agreement": self.inverse_agreement,
            "inverse_defect": self.inverse_defect,
            "C": self.C.tolist(),
            "Theta": self.Theta.tolist(),
            "C_tilde": self.C_tilde.tolist(),
        }


def neumann_inverse(phi: np.ndarray, R: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sum of Theta^n for Theta = u (phi R): I + u (phi R) / (1 - phi R u)."""
    phiR = phi @ R
    return np.eye(len(u)) + np.outer(u, phiR) / (1.0 - phiR @ u)


def theta_power(phi: np.ndarray, R: np.ndarray, u: np.ndarray, power: int) -> np.ndarray:
    """Theta^m x = phi(R x) phi(R u)^(m-1) u, as a matrix."""
    if power < 1:
        raise ValueError("power must be >= 1")
    phiR = phi @ R
    return (phiR @ u) ** (power - 1) * np.outer(u, phiR)


def build_bundle(s: LabScenario) -> PerturbationBundle:
    s.validate()
    n = s.n
    I = np.eye(n)
    R = s.resolvent()
    C = np.outer(s.u, s.phi)
    Theta = C @ R
    U = I - Theta
    U_inv = np.linalg.solve(U, I)
    U_inv_neumann = neumann_inverse(s.phi, R, s.u)
    C_tilde = (s.lambda0 * I - s.L) @ C @ R
    agreement = float(np.linalg.norm(U_inv - U_inv_neumann) / np.linalg.norm(U_inv))
    defect = float(np.linalg.norm(U @ U_inv - I))
    return PerturbationBundle(R, C, Theta, U, U_inv, U_inv_neumann, C_tilde, float(s.phi @ R @ s.u),
                              agreement, defect)


def similarity_check(s: LabScenario, bundle: PerturbationBundle) -> float:
    """|U (L + C~) U^-1 - (L + C)|_F / |L + C|_F (absolute when L + C = 0)."""
    target = s.L + bundle.C
    diff = bundle.U @ (s.L + bundle.C_tilde) @ bundle.U_inv - target
    scale = np.linalg.norm(target)
    return float(np.linalg.norm(diff) / scale) if scale > 0 else float(np.linalg.norm(diff))


# --------------------------------------------------------------------------
# matrix exponential

_PADE13 = (64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
           129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
           40840800.0, 960960.0, 16380.0, 182.0, 1.0)
_THETA13 = 5.371920351148152


def expm(A) -> np.ndarray:
    """exp(A) by scaling and squaring with the [13/13] diagonal Pade approximant."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    I = np.eye(n)
    norm1 = float(np.linalg.norm(A, 1))
    if norm1 == 0.0:
        return I.copy()
    s = max(0, int(math.ceil(math.log2(norm1 / _THETA13))))
    A = A / 2.0**s
    c = _PADE13
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    odd = A @ (A6 @ (c[13] * A6 + c[11] * A4 + c[9] * A2) + c[7] * A6 + c[5] * A4 + c[3] * A2 + c[1] * I)
    even = A6 @ (c[12] * A6 + c[10] * A4 + c[8] * A2) + c[6] * A6 + c[4] * A4 + c[2] * A2 + c[0] * I
    E = np.linalg.solve(even - odd, even + odd)
    for _ in range(s):
        E = E @ E
    return E


def extension_divergence(s: LabScenario, bundle: PerturbationBundle, t_grid) -> list[tuple[float, float, float]]:
    """Rows (t, agreement_on_D, divergence_off_D).

    agreement_on_D is max over the D basis of |(L + C) d - L d|; the second
    column is |exp(t(L + C)) - exp(tL)|_F.
    """
    LC = s.L + bundle.C
    agree = float(np.max(np.linalg.norm(LC @ s.D_basis - s.L @ s.D_basis, axis=0), initial=0.0))
    rows = []
    for t in t_grid:
        t = float(t)
        rows.append((t, agree, float(np.linalg.norm(expm(t * LC) - expm(t * s.L)))))
    return rows


@dataclass
class KernelReport:
    lam: float
    image_rank: int
    annihilator: np.ndarray  # (n, m) orthonormal basis

    @property
    def dimension(self) -> int:
        return self.annihilator.shape[1]

    @property
    def is_core(self) -> bool:
        return self.dimension == 0

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "image_rank": self.image_rank, "annihilator_dimension": self.dimension,
                "is_core": self.is_core, "annihilator_basis": self.annihilator.T.tolist()}


def default_probe_lambda(s: LabScenario, bundle: PerturbationBundle | None = None) -> float:
    """1 + the larger growth bound of L and L + C."""
    bound = growth_bound(s.L)
    if bundle is not None:
        bound = max(bound, growth_bound(s.L + bundle.C))
    return 1.0 + bound


def semigroup_uniqueness_probe(s: LabScenario, bundle: PerturbationBundle | None, lam: float) -> KernelReport:
    """Functionals y with y . (lam I - L) d = 0 for every d in D.

    A non-trivial annihilator means D is not a core for L.
    """
    bound = growth_bound(s.L)
    if bundle is not None:
        bound = max(bound, growth_bound(s.L + bundle.C))
    if not lam > bound:
        raise ValueError(f"lambda = {lam:g} must exceed the growth bound {bound:g}")
    image = (lam * np.eye(s.n) - s.L) @ s.D_basis
    rank = int(np.linalg.matrix_rank(image)) if s.k else 0
    ann = null_space(image.T) if s.k else np.eye(s.n)
    return KernelReport(float(lam), rank, ann)


# --------------------------------------------------------------------------
# scenarios


def fixed_scenario(u=(1.0, 0.0, 0.0)) -> LabScenario:
    """L = diag(-1, -2, -3), D = span(e1, e2), phi = e3^T, lambda0 = 1."""
    return LabScenario(np.diag([-1.0, -2.0, -3.0]), np.eye(3)[:, :2], np.array([0.0, 0.0, 1.0]),
                       np.asarray(u, dtype=float), 1.0)


def random_scenario(n: int, k: int, target: float, seed: int, scale: float = 1.0) -> LabScenario:
    """Seeded scenario with |phi(R u)| equal to ``target``.

    L is a Gaussian matrix with entries of size ``scale``/sqrt(n); D is
    spanned by the first k columns of a random orthogonal matrix; phi is the
    last row of the projector onto the orthogonal complement of D.  The
    direction of u is redrawn until |phi(R w)| is at least a quarter of
    sum_j |(phi R)_j w_j|.
    """
    if not 0 <= k < n:
        raise ValueError("need 0 <= k < n")
    if not 0.0 <= target < 1.0:
        raise ValueError("target must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((n, n)) * scale / math.sqrt(n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    D = Q[:, :k]
    comp = Q[:, k:]
    phi = (comp @ comp.T)[-1]
    lambda0 = 1.0 + growth_bound(L)
    R = np.linalg.solve(lambda0 * np.eye(n) - L, np.eye(n))
    phiR = phi @ R
    # redraw until phi(R w) is not a near-cancelling sum, so that the
    # rescaled u stays well conditioned
    for _ in range(1000):
        w = rng.standard_normal(n)
        q = float(phiR @ w)
        if abs(q) * MAX_CANCELLATION >= float(np.abs(phiR) @ np.abs(w)):
            break
    u = w * (target / q) if target > 0 else w - q / float(phiR @ phiR) * phiR
    return LabScenario(L, D, phi, u, lambda0)
