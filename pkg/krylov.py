"""
Flexible Krylov decompositions and the small projected problems solved on top of them.

Three processes share one mutable `KrylovState`:

- flexible Arnoldi      A Ψ⁻¹ Z_k = V_{k+1} H_k                       (square A)
- flexible Golub-Kahan  A Ψ⁻¹ Z_k = U_{k+1} M_k,  (AΨ⁻¹)ᵀ U_{k+1} = V_{k+1} S_{k+1}
- flexible generalized  [AQ  A] [V_k; Z_k] = U_{k+1} M_k,  Aᵀ R⁻¹ U_{k+1} = V_{k+1} S_{k+1}
  Golub-Kahan (FGGK)    with Uᵀ R⁻¹ U = I and Vᵀ Q V = I

where z_i = W_i⁻¹ v_i are the preconditioned directions. Orthogonalization is modified Gram-Schmidt
with one full reorthogonalization pass. For weighted inner products the state keeps the images
R⁻¹u_i and Q v_i next to the basis vectors, so each step costs one application of R⁻¹ and of Q.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from groups import WeightVector
from linops import SpdOperator, identity_operator

logger = logging.getLogger(__name__)

ARNOLDI = "arnoldi"
GOLUB_KAHAN = "golub-kahan"
FGGK = "fggk"

BREAKDOWN_TOL = 1e-14
REORTH_PASSES = 2

LOG_LAMBDA_RANGE = (-12.0, 12.0)
LOG_LAMBDA_FLOOR = -30.0
LOG_LAMBDA_EXTENSION = 6.0
MAX_BISECTIONS = 60
DP_RTOL = 1e-6
_DP_STOP_RTOL = 1e-9


@dataclass
class QRAccumulator:
    """Thin QR factors of a growing column set, Z = Q R."""
    columns: List[np.ndarray] = field(default_factory=list)
    r_cols: List[np.ndarray] = field(default_factory=list)
    dependent: bool = False

    @property
    def k(self) -> int:
        return len(self.r_cols)

    @property
    def Q(self) -> np.ndarray:
        return np.column_stack(self.columns)

    @property
    def R(self) -> np.ndarray:
        R = np.zeros((self.k, self.k))
        for j, col in enumerate(self.r_cols):
            R[:j + 1, j] = col
        return R


@dataclass
class KrylovState:
    kind: str
    beta: float
    U: List[np.ndarray] = field(default_factory=list)
    V: List[np.ndarray] = field(default_factory=list)
    Z: List[np.ndarray] = field(default_factory=list)
    U_images: List[np.ndarray] = field(default_factory=list)
    V_images: List[np.ndarray] = field(default_factory=list)
    h_cols: List[np.ndarray] = field(default_factory=list)
    s_cols: List[np.ndarray] = field(default_factory=list)
    qr: Optional[QRAccumulator] = None
    breakdown: bool = False
    breakdown_at: Optional[int] = None
    breakdown_kind: Optional[str] = None

    @property
    def k(self) -> int:
        return len(self.Z)

    @property
    def H(self) -> np.ndarray:
        """(k+1)×k upper Hessenberg projected matrix (H_k or M_k)."""
        H = np.zeros((self.k + 1, self.k))
        for j, col in enumerate(self.h_cols):
            H[:col.size, j] = col
        return H

    @property
    def S(self) -> np.ndarray:
        """Upper triangular factor of the adjoint relation, shape (#v, #u)."""
        S = np.zeros((len(self.V), len(self.s_cols)))
        for j, col in enumerate(self.s_cols):
            S[:col.size, j] = col
        return S

    @property
    def U_matrix(self) -> np.ndarray:
        return np.column_stack(self.U)

    @property
    def V_matrix(self) -> np.ndarray:
        return np.column_stack(self.V)

    @property
    def Z_matrix(self) -> np.ndarray:
        return np.column_stack(self.Z)

    def _flag_breakdown(self, kind: str):
        self.breakdown = True
        self.breakdown_at = self.k
        self.breakdown_kind = kind
        logger.debug(f"{self.kind} breakdown ({kind}) at k={self.k}")


@dataclass(frozen=True)
class ProjectedSolution:
    y: np.ndarray
    lam: float
    alpha: float
    residual: float
    rank_deficient: bool = False


@dataclass(frozen=True)
class ParameterChoice:
    """Outcome of a discrepancy-principle search; `reachable` is False when the target lies outside the bracket."""
    lam: float
    alpha: float
    residual: float
    reachable: bool


##############################
### ORTHOGONALIZATION
##############################

def _orthogonalize(w, basis, images=None, w_image=None):
    """
    Two modified Gram-Schmidt sweeps of w against `basis`.

    With `images` (M b_i for an SPD inner-product matrix M) the sweep is done in the M inner
    product and `w_image` (= M w) is carried along by linearity.
    """
    coeffs = np.zeros(len(basis))
    for _ in range(REORTH_PASSES):
        for i, q in enumerate(basis):
            if images is None:
                c = q @ w
            else:
                c = images[i] @ w
                w_image = w_image - c * images[i]
            w = w - c * q
            coeffs[i] += c
    return w, w_image, coeffs


def _weighted_norm(w, w_image) -> float:
    return float(np.sqrt(max(w @ w_image, 0.0)))


def _preconditioned(precond: Optional[WeightVector], v: np.ndarray) -> np.ndarray:
    if precond is None:
        return v.copy()
    if precond.diag.size != v.size:
        raise ValueError(f"preconditioner has length {precond.diag.size}, basis vectors have {v.size}")
    return precond.inverse * v


def _check_open(state: KrylovState, kind: str):
    if state.kind != kind:
        raise ValueError(f"state was started for {state.kind}, not {kind}")
    if state.breakdown:
        raise ValueError(f"cannot extend a {kind} state after breakdown at k={state.breakdown_at}")


def _check_rhs(b) -> np.ndarray:
    b = np.asarray(b, dtype=float).ravel()
    if not np.any(b):
        raise ValueError("right-hand side must be nonzero")
    return b


##############################
### DECOMPOSITIONS
##############################

def start_arnoldi(b) -> KrylovState:
    b = _check_rhs(b)
    beta = float(np.linalg.norm(b))
    return KrylovState(kind=ARNOLDI, beta=beta, V=[b / beta])


def arnoldi_step(A, psi_inv, precond_diag: Optional[WeightVector], state: KrylovState) -> KrylovState:
    _check_open(state, ARNOLDI)
    A = aslinearoperator(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"flexible Arnoldi needs a square operator, got {A.shape}")
    psi_inv = aslinearoperator(psi_inv) if psi_inv is not None else identity_operator(A.shape[1])

    z = _preconditioned(precond_diag, state.V[-1])
    w = A.matvec(psi_inv.matvec(z))
    before = np.linalg.norm(w)
    w, _, h = _orthogonalize(w, state.V)
    nrm = float(np.linalg.norm(w))

    state.Z.append(z)
    if nrm <= BREAKDOWN_TOL * before:
        state.h_cols.append(np.append(h, 0.0))
        state._flag_breakdown("v")
    else:
        state.h_cols.append(np.append(h, nrm))
        state.V.append(w / nrm)
    return state


def start_golub_kahan(A, psi_inv, b) -> KrylovState:
    A = aslinearoperator(A)
    psi_inv = aslinearoperator(psi_inv) if psi_inv is not None else identity_operator(A.shape[1])
    b = _check_rhs(b)
    beta = float(np.linalg.norm(b))
    u = b / beta
    g = psi_inv.rmatvec(A.rmatvec(u))
    nrm = float(np.linalg.norm(g))
    state = KrylovState(kind=GOLUB_KAHAN, beta=beta, U=[u], s_cols=[np.array([nrm])])
    if nrm == 0.0:
        state.s_cols = [np.array([0.0])]
        state._flag_breakdown("v")
    else:
        state.V.append(g / nrm)
    return state


def golub_kahan_step(A, psi_inv, precond_diag: Optional[WeightVector], state: KrylovState) -> KrylovState:
    _check_open(state, GOLUB_KAHAN)
    A = aslinearoperator(A)
    psi_inv = aslinearoperator(psi_inv) if psi_inv is not None else identity_operator(A.shape[1])

    z = _preconditioned(precond_diag, state.V[-1])
    w = A.matvec(psi_inv.matvec(z))
    before = np.linalg.norm(w)
    w, _, h = _orthogonalize(w, state.U)
    nrm = float(np.linalg.norm(w))

    state.Z.append(z)
    if nrm <= BREAKDOWN_TOL * before:
        state.h_cols.append(np.append(h, 0.0))
        state._flag_breakdown("u")
        return state
    state.h_cols.append(np.append(h, nrm))
    u = w / nrm
    state.U.append(u)

    g = psi_inv.rmatvec(A.rmatvec(u))
    before = np.linalg.norm(g)
    g, _, s = _orthogonalize(g, state.V)
    nrm = float(np.linalg.norm(g))
    if nrm <= BREAKDOWN_TOL * before:
        state.s_cols.append(np.append(s, 0.0)[:len(state.V)])
        state._flag_breakdown("v")
    else:
        state.s_cols.append(np.append(s, nrm))
        state.V.append(g / nrm)
    return state


def start_fggk(A, Q: SpdOperator, R_inv: SpdOperator, b) -> KrylovState:
    """u₁ = b/‖b‖_{R⁻¹}, v₁ = Aᵀ R⁻¹ u₁ normalized in the Q norm."""
    A = aslinearoperator(A)
    b = _check_rhs(b)
    b_image = R_inv.apply(b)
    beta = _weighted_norm(b, b_image)
    u, u_image = b / beta, b_image / beta

    g = A.rmatvec(u_image)
    g_image = Q.apply(g)
    nrm = _weighted_norm(g, g_image)
    state = KrylovState(kind=FGGK, beta=beta, U=[u], U_images=[u_image],
                        s_cols=[np.array([nrm])], qr=QRAccumulator())
    if nrm == 0.0:
        state._flag_breakdown("v")
    else:
        state.V.append(g / nrm)
        state.V_images.append(g_image / nrm)
    return state


def fggk_step(A, Q: SpdOperator, R_inv: SpdOperator, precond_diag: Optional[WeightVector],
              state: KrylovState) -> KrylovState:
    _check_open(state, FGGK)
    A = aslinearoperator(A)

    z = _preconditioned(precond_diag, state.V[-1])
    w = A.matvec(state.V_images[-1] + z)
    w_image = R_inv.apply(w)
    before = _weighted_norm(w, w_image)
    w, w_image, h = _orthogonalize(w, state.U, state.U_images, w_image)
    nrm = _weighted_norm(w, w_image)

    state.Z.append(z)
    thin_qr_update(state.qr, z)
    if nrm <= BREAKDOWN_TOL * before:
        state.h_cols.append(np.append(h, 0.0))
        state._flag_breakdown("u")
        return state
    state.h_cols.append(np.append(h, nrm))
    u, u_image = w / nrm, w_image / nrm
    state.U.append(u)
    state.U_images.append(u_image)

    g = A.rmatvec(u_image)
    g_image = Q.apply(g)
    before = _weighted_norm(g, g_image)
    g, g_image, s = _orthogonalize(g, state.V, state.V_images, g_image)
    nrm = _weighted_norm(g, g_image)
    if nrm <= BREAKDOWN_TOL * before:
        state.s_cols.append(np.append(s, 0.0)[:len(state.V)])
        state._flag_breakdown("v")
    else:
        state.s_cols.append(np.append(s, nrm))
        state.V.append(g / nrm)
        state.V_images.append(g_image / nrm)
    return state


def thin_qr_update(qr: QRAccumulator, new_col) -> QRAccumulator:
    """Append one column to Z = Q R; a (numerically) dependent column sets `qr.dependent`."""
    col = np.asarray(new_col, dtype=float).ravel()
    before = np.linalg.norm(col)
    q, _, r = _orthogonalize(col, qr.columns)
    rho = float(np.linalg.norm(q))
    if rho <= BREAKDOWN_TOL * before:
        qr.dependent = True
        qr.columns.append(np.zeros_like(col))
        qr.r_cols.append(np.append(r, 0.0))
        logger.debug(f"thin QR: column {qr.k} is linearly dependent")
    else:
        qr.columns.append(q / rho)
        qr.r_cols.append(np.append(r, rho))
    return qr


def relation_residuals(state: KrylovState, A, psi_inv=None) -> Dict[str, float]:
    """
    Relative Frobenius residuals of the decomposition relations and orthogonality defects.

    Keys: `relation` (forward relation), `adjoint_relation` (GK / FGGK), `orth_u`, `orth_v`.
    Weighted inner products use the stored images R⁻¹u_i and Q v_i.
    """
    A = aslinearoperator(A)
    psi_inv = aslinearoperator(psi_inv) if psi_inv is not None else identity_operator(A.shape[1])
    result = {}
    k = state.k

    def rel(lhs, rhs):
        scale = np.linalg.norm(lhs)
        return float(np.linalg.norm(lhs - rhs) / scale) if scale > 0 else float(np.linalg.norm(rhs))

    V = state.V_matrix if state.V else np.zeros((A.shape[1], 0))
    if k:
        Z = state.Z_matrix
        if state.kind == FGGK:
            lhs = A.matmat(np.column_stack(state.V_images[:k]) + Z)
        else:
            lhs = A.matmat(psi_inv.matmat(Z))
        left_basis = V if state.kind == ARNOLDI else state.U_matrix
        H = state.H[:left_basis.shape[1]]
        result["relation"] = rel(lhs, left_basis @ H)

    if state.kind == ARNOLDI:
        result["orth_v"] = float(np.linalg.norm(V.T @ V - np.eye(V.shape[1])))
        return result

    U = state.U_matrix
    if state.kind == FGGK:
        U_images = np.column_stack(state.U_images)
        lhs = A.H.matmat(U_images)
        result["orth_u"] = float(np.linalg.norm(U.T @ U_images - np.eye(U.shape[1])))
        V_images = np.column_stack(state.V_images) if state.V_images else np.zeros_like(V)
        result["orth_v"] = float(np.linalg.norm(V.T @ V_images - np.eye(V.shape[1])))
    else:
        lhs = psi_inv.H.matmat(A.H.matmat(U))
        result["orth_u"] = float(np.linalg.norm(U.T @ U - np.eye(U.shape[1])))
        result["orth_v"] = float(np.linalg.norm(V.T @ V - np.eye(V.shape[1])))
    S = state.S[:V.shape[1], :U.shape[1]]
    result["adjoint_relation"] = rel(lhs, V @ S)
    return result


##############################
### PROJECTED PROBLEMS
##############################

def _rhs(rows: int, beta: float) -> np.ndarray:
    rhs = np.zeros(rows)
    rhs[0] = beta
    return rhs


def _check_projected(H, lam: float):
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[1] < 1 or H.shape[0] != H.shape[1] + 1:
        raise ValueError(f"expected a (k+1)×k projected matrix with k >= 1, got shape {H.shape}")
    if lam < 0:
        raise ValueError(f"regularization parameter must be nonnegative, got {lam}")
    return H


def solve_projected_tikhonov(H, beta: float, lam: float) -> ProjectedSolution:
    """y = argmin ‖H y − β e₁‖² + λ ‖y‖² by least squares on the stacked system."""
    H = _check_projected(H, lam)
    k = H.shape[1]
    rhs = _rhs(k + 1, beta)
    if lam > 0:
        stacked = np.vstack([H, np.sqrt(lam) * np.eye(k)])
        y, *_ = np.linalg.lstsq(stacked, np.concatenate([rhs, np.zeros(k)]), rcond=None)
        deficient = False
    else:
        y, _, rank, _ = np.linalg.lstsq(H, rhs, rcond=None)
        deficient = bool(rank < k)
    residual = float(np.linalg.norm(H @ y - rhs))
    return ProjectedSolution(y, float(lam), 0.0, residual, deficient)


def solve_projected_sd(M, beta: float, alpha: float, lam: float, R_W) -> ProjectedSolution:
    """y = argmin ‖M y − β e₁‖² + α ‖y‖² + λ ‖R_W y‖²."""
    M = _check_projected(M, lam)
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    k = M.shape[1]
    R_W = np.asarray(R_W, dtype=float).reshape(k, k)
    rhs = _rhs(k + 1, beta)
    blocks, zeros = [M], [rhs]
    if alpha > 0:
        blocks.append(np.sqrt(alpha) * np.eye(k))
        zeros.append(np.zeros(k))
    if lam > 0:
        blocks.append(np.sqrt(lam) * R_W)
        zeros.append(np.zeros(k))
    stacked = np.vstack(blocks)
    y, _, rank, _ = np.linalg.lstsq(stacked, np.concatenate(zeros), rcond=None)
    residual = float(np.linalg.norm(M @ y - rhs))
    return ProjectedSolution(y, float(lam), float(alpha), residual, bool(rank < k))


def _tikhonov_residual_fn(H, beta: float) -> Callable[[float], float]:
    """r(λ) = ‖H y(λ) − β e₁‖ evaluated through one SVD of H."""
    U, sigma, _ = np.linalg.svd(H, full_matrices=True)
    c = beta * U[0, :]
    k = sigma.size
    tail = float(c[k:] @ c[k:])
    zero = sigma <= np.finfo(float).eps * (sigma.max() if sigma.size else 0.0)

    def residual(lam: float) -> float:
        if lam == 0.0:
            factors = np.where(zero, 1.0, 0.0)
        else:
            factors = lam / (sigma ** 2 + lam)
        return float(np.sqrt(np.sum((factors * c[:k]) ** 2) + tail))

    return residual


def _discrepancy_search(residual: Callable[[float], float], target: float):
    """Bisection on log10 λ for r(λ) = target, r nondecreasing. Returns (λ, r(λ), reachable)."""
    if not target > 0:
        raise ValueError(f"discrepancy target must be positive, got {target}")
    r0 = residual(0.0)
    if r0 >= target:
        logger.debug(f"DP unreachable: r(0)={r0:.6e} >= target {target:.6e}")
        return 0.0, r0, False

    lo, hi = LOG_LAMBDA_RANGE
    r_hi = residual(10.0 ** hi)
    if r_hi < target:
        logger.debug(f"DP unreachable: r(1e{hi:.0f})={r_hi:.6e} < target {target:.6e}")
        return 10.0 ** hi, r_hi, False
    r_lo = residual(10.0 ** lo)
    while r_lo > target and lo > LOG_LAMBDA_FLOOR:
        lo -= LOG_LAMBDA_EXTENSION
        r_lo = residual(10.0 ** lo)
    if r_lo >= target:
        return 10.0 ** lo, r_lo, abs(r_lo - target) <= DP_RTOL * target

    mid, r_mid = hi, r_hi
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        r_mid = residual(10.0 ** mid)
        if abs(r_mid - target) <= _DP_STOP_RTOL * target:
            break
        if r_mid > target:
            hi = mid
        else:
            lo = mid
    return 10.0 ** mid, r_mid, abs(r_mid - target) <= DP_RTOL * target


def _discrepancy_target(noise_norm: float, eta: float) -> float:
    if not eta >= 1.0:
        raise ValueError(f"discrepancy safety factor must be at least 1, got {eta}")
    return eta * noise_norm


def discrepancy_lambda(H, beta: float, noise_norm: float, eta: float) -> ParameterChoice:
    """λ with ‖H y(λ) − β e₁‖ = η · noise_norm (projected discrepancy principle)."""
    H = _check_projected(H, 0.0)
    target = _discrepancy_target(noise_norm, eta)
    lam, residual, reachable = _discrepancy_search(_tikhonov_residual_fn(H, beta), target)
    return ParameterChoice(lam, 0.0, residual, reachable)


def discrepancy_pair(M, beta: float, R_W, noise_norm: float, eta: float, ratio: float) -> ParameterChoice:
    """
    (λ, α) for the two-term projected problem, coupled through α = ratio · λ so the
    discrepancy equation has a single unknown.
    """
    M = _check_projected(M, 0.0)
    if ratio < 0:
        raise ValueError(f"ratio must be nonnegative, got {ratio}")
    target = _discrepancy_target(noise_norm, eta)

    def residual(lam: float) -> float:
        return solve_projected_sd(M, beta, ratio * lam, lam, R_W).residual

    lam, r, reachable = _discrepancy_search(residual, target)
    return ParameterChoice(lam, ratio * lam, r, reachable)
