"""
Iteration drivers: weight update, one flexible decomposition step, parameter choice, projected solve
and mapping back, repeated up to `max_iters`.

Solver names follow projection-ALGORITHM-GROUPS: `hybrid-flsqr-g` is the hybrid variant of flexible
LSQR with group weights, `-c` combines ℓ1 and group weights, no suffix means ℓ1, and the plain
`hybrid-lsqr` / `hybrid-gmres` use unit weights (ℓ2).
"""
import logging
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from scipy.sparse.linalg import aslinearoperator

import groups as grp
import krylov
import string_utils
from groups import DEFAULT_TAU, GroupStructure, WeightVector
from linops import identity_operator

logger = logging.getLogger(__name__)

DEFAULT_ETA = 1.01
TAU_LAMBDA_FLSQR = 1.2
TAU_LAMBDA_FGMRES = 0.8
DEFAULT_GAMMA = 1.0
DEFAULT_MAX_ITERS = 50


class SolverConfigError(ValueError):
    """The configuration cannot be run on the given problem."""


class MissingSnapshotError(KeyError):
    """No solution snapshot was stored for the requested iteration."""


class Variant(Enum):
    FLSQR = "flsqr"
    HYBRID_FLSQR = "hybrid-flsqr"
    IRW_FLSQR = "irw-flsqr"
    HYBRID_FGMRES = "hybrid-fgmres"
    HYBRID_SD = "hybrid-sd"


class Regularizer(Enum):
    GROUP = "group"
    L1 = "l1"
    L2 = "l2"
    COMBINED = "combined"


class LambdaMode(Enum):
    DP = "dp"
    FIXED = "fixed"
    NONE = "none"


SOLVER_NAMES = {
    "flsqr": (Variant.FLSQR, Regularizer.L1),
    "flsqr-g": (Variant.FLSQR, Regularizer.GROUP),
    "hybrid-lsqr": (Variant.HYBRID_FLSQR, Regularizer.L2),
    "hybrid-flsqr": (Variant.HYBRID_FLSQR, Regularizer.L1),
    "hybrid-flsqr-g": (Variant.HYBRID_FLSQR, Regularizer.GROUP),
    "hybrid-flsqr-c": (Variant.HYBRID_FLSQR, Regularizer.COMBINED),
    "irw-flsqr": (Variant.IRW_FLSQR, Regularizer.L1),
    "irw-flsqr-g": (Variant.IRW_FLSQR, Regularizer.GROUP),
    "hybrid-gmres": (Variant.HYBRID_FGMRES, Regularizer.L2),
    "hybrid-fgmres": (Variant.HYBRID_FGMRES, Regularizer.L1),
    "hybrid-fgmres-g": (Variant.HYBRID_FGMRES, Regularizer.GROUP),
    "hybrid-fgmres-c": (Variant.HYBRID_FGMRES, Regularizer.COMBINED),
    "hybrid-sd": (Variant.HYBRID_SD, Regularizer.L1),
    "hybrid-sd-g": (Variant.HYBRID_SD, Regularizer.GROUP),
}

CSV_FIELDS = ["k", "lambda", "alpha", "proj_residual", "full_residual", "rel_error", "group_norm"]
LAMBDA_FIELDS = ["k", "lambda", "alpha"]


def parse_solver_name(name: str) -> str:
    """Canonical solver name; `-g1` / `-g2` are accepted for `-g`."""
    canonical = string_utils.normalize_name(name)
    if canonical.endswith(("-g1", "-g2")):
        canonical = canonical[:-1]
    if canonical not in SOLVER_NAMES:
        suggestion = string_utils.closest_match(canonical, SOLVER_NAMES)
        hint = f" (did you mean {suggestion!r}?)" if suggestion else ""
        raise SolverConfigError(f"unknown solver {name!r}{hint}")
    return canonical


@dataclass
class SolverConfig:
    variant: Variant
    regularizer: Regularizer = Regularizer.GROUP
    groups: Optional[GroupStructure] = None
    tau: float = DEFAULT_TAU
    eta: float = DEFAULT_ETA
    tau_lambda: Optional[float] = None
    gamma: float = DEFAULT_GAMMA
    max_iters: int = DEFAULT_MAX_ITERS
    lambda_mode: LambdaMode = LambdaMode.DP
    lambda_value: Optional[float] = None
    snapshot_every: int = 1
    name: Optional[str] = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.regularizer = Regularizer(self.regularizer)
        self.lambda_mode = LambdaMode(self.lambda_mode)
        # plain flexible LSQR relies on early stopping
        if self.variant is Variant.FLSQR:
            self.lambda_mode = LambdaMode.NONE
        if self.name is None:
            self.name = _default_name(self.variant, self.regularizer)

    @property
    def family_tau_lambda(self) -> float:
        if self.tau_lambda is not None:
            return self.tau_lambda
        return TAU_LAMBDA_FGMRES if self.variant is Variant.HYBRID_FGMRES else TAU_LAMBDA_FLSQR

    def validate(self, problem) -> None:
        m, n = problem.A.shape
        if self.max_iters < 0:
            raise SolverConfigError(f"max_iters must be nonnegative, got {self.max_iters}")
        if self.snapshot_every < 1:
            raise SolverConfigError(f"snapshot_every must be positive, got {self.snapshot_every}")
        if self.tau <= 0:
            raise SolverConfigError(f"tau must be positive, got {self.tau}")
        if self.eta < 1:
            raise SolverConfigError(f"eta must be at least 1, got {self.eta}")
        if self.gamma < 0:
            raise SolverConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.family_tau_lambda <= 0:
            raise SolverConfigError(f"tau_lambda must be positive, got {self.family_tau_lambda}")

        if self.variant is Variant.HYBRID_FGMRES and m != n:
            raise SolverConfigError(f"{self.name} needs a square operator, got {m}x{n}")
        if self.variant is Variant.HYBRID_SD:
            if problem.priors is None:
                raise SolverConfigError(f"{self.name} needs prior covariances Q and R")
            if self.regularizer not in (Regularizer.L1, Regularizer.GROUP):
                raise SolverConfigError(f"{self.name} supports only l1 or group regularization")
        if self.regularizer is Regularizer.COMBINED and \
                self.variant not in (Variant.HYBRID_FLSQR, Variant.HYBRID_FGMRES):
            raise SolverConfigError("combined regularization needs a hybrid FLSQR or FGMRES variant")
        if self.regularizer in (Regularizer.GROUP, Regularizer.COMBINED):
            structure = self.groups if self.groups is not None else problem.groups
            if structure is None:
                raise SolverConfigError(f"{self.name} needs a group structure")
            if structure.n != n:
                raise SolverConfigError(f"group structure covers {structure.n} indices, problem has {n}")

        if self.lambda_mode is LambdaMode.DP and not problem.noise_norm > 0:
            raise SolverConfigError("the discrepancy principle needs a positive noise norm")
        if self.lambda_mode is LambdaMode.FIXED and (self.lambda_value is None or self.lambda_value < 0):
            raise SolverConfigError(f"fixed lambda mode needs a nonnegative lambda_value, got {self.lambda_value}")

    def to_dict(self) -> Dict[str, Any]:
        result = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "groups":
                value = None if value is None else f"{value.size} groups"
            elif isinstance(value, Enum):
                value = value.value
            result[f.name] = value
        result["tau_lambda"] = self.family_tau_lambda
        return result


def _default_name(variant: Variant, regularizer: Regularizer) -> str:
    for name, pair in SOLVER_NAMES.items():
        if pair == (variant, regularizer):
            return name
    return f"{variant.value}-{regularizer.value}"


def config_for(name: str, **overrides) -> SolverConfig:
    """SolverConfig for a named solver; keyword overrides replace the defaults (None values are ignored)."""
    canonical = parse_solver_name(name)
    variant, regularizer = SOLVER_NAMES[canonical]
    config = SolverConfig(variant=variant, regularizer=regularizer, name=canonical)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **overrides) if overrides else config


@dataclass(frozen=True)
class TraceRecord:
    k: int
    lam: float
    alpha: float
    proj_residual: float
    full_residual: float
    rel_error: Optional[float]
    group_norm: Optional[float]
    dp_reachable: Optional[bool] = None


@dataclass
class SolverTrace:
    solver: str
    config: SolverConfig
    records: List[TraceRecord] = field(default_factory=list)
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)
    xi_snapshots: Dict[int, np.ndarray] = field(default_factory=dict)
    s_snapshots: Dict[int, np.ndarray] = field(default_factory=dict)
    x: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    breakdown: bool = False
    breakdown_at: Optional[int] = None

    @property
    def final(self) -> np.ndarray:
        return self.x

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def errors(self) -> List[Optional[float]]:
        return [r.rel_error for r in self.records]

    @property
    def best_iteration(self) -> Optional[int]:
        """Iteration with the smallest relative error, None when no truth was available."""
        scored = [r for r in self.records if r.rel_error is not None]
        if not scored:
            return None
        return min(scored, key=lambda r: r.rel_error).k


def relative_error(x, x_true) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x_true = np.asarray(x_true, dtype=float).ravel()
    if x.size != x_true.size:
        raise ValueError(f"length mismatch: {x.size} vs {x_true.size}")
    scale = np.linalg.norm(x_true)
    if scale == 0:
        raise ValueError("relative error is undefined for a zero reference")
    return float(np.linalg.norm(x - x_true) / scale)


def reconstruct(trace: SolverTrace, k: int) -> np.ndarray:
    if k not in trace.snapshots:
        raise MissingSnapshotError(f"no snapshot stored for iteration {k} of {trace.solver}")
    return trace.snapshots[k]


def trace_rows(trace: SolverTrace) -> List[Dict[str, Any]]:
    return [{
        "k": r.k,
        "lambda": r.lam,
        "alpha": r.alpha,
        "proj_residual": r.proj_residual,
        "full_residual": r.full_residual,
        "rel_error": r.rel_error,
        "group_norm": r.group_norm,
    } for r in trace.records]


def lambda_rows(trace: SolverTrace) -> List[Dict[str, Any]]:
    return [{"k": r.k, "lambda": r.lam, "alpha": r.alpha} for r in trace.records]


##############################
### DRIVER
##############################

class _Weights:
    """W_k from the previous coefficient iterate, per regularizer."""

    def __init__(self, config: SolverConfig, structure: Optional[GroupStructure], n: int):
        self.config = config
        self.structure = structure
        self.singletons = grp.singleton_groups(n) if config.regularizer in (
            Regularizer.L1, Regularizer.COMBINED) else None
        self.n = n

    def __call__(self, z_prev: Optional[np.ndarray]) -> WeightVector:
        regularizer = self.config.regularizer
        if z_prev is None or regularizer is Regularizer.L2:
            return WeightVector.identity(self.n)
        tau = self.config.tau
        if regularizer is Regularizer.L1:
            return grp.compute_weights(self.singletons, z_prev, tau)
        if regularizer is Regularizer.GROUP:
            return grp.compute_weights(self.structure, z_prev, tau)
        return grp.combined_weights(grp.compute_weights(self.singletons, z_prev, tau),
                                    grp.compute_weights(self.structure, z_prev, tau),
                                    self.config.family_tau_lambda)


def _choose_parameters(config: SolverConfig, state: krylov.KrylovState, noise_norm: float,
                       R: Optional[np.ndarray]):
    """(λ, α, reachable flag) for the current projected problem."""
    mode = config.lambda_mode
    ratio = config.gamma if config.variant is Variant.HYBRID_SD else 0.0
    if mode is LambdaMode.NONE:
        return 0.0, 0.0, None
    if mode is LambdaMode.FIXED:
        return config.lambda_value, ratio * config.lambda_value, None
    if R is None:
        choice = krylov.discrepancy_lambda(state.H, state.beta, noise_norm, config.eta)
    else:
        choice = krylov.discrepancy_pair(state.H, state.beta, R, noise_norm, config.eta, ratio)
    return choice.lam, choice.alpha, choice.reachable


def _irw_factor(weights: WeightVector, Z: np.ndarray) -> np.ndarray:
    """R factor of W_k Z_k, refactored from scratch."""
    qr = krylov.QRAccumulator()
    for column in (weights.diag[:, None] * Z).T:
        krylov.thin_qr_update(qr, column)
    return qr.R


def run(problem, config: SolverConfig, callback: Callable[[TraceRecord], None] = None) -> SolverTrace:
    config.validate(problem)
    A = aslinearoperator(problem.A)
    n = A.shape[1]
    psi_inv = aslinearoperator(problem.psi_inv) if problem.psi_inv is not None else identity_operator(n)
    structure = config.groups if config.groups is not None else problem.groups
    report_groups = problem.groups if problem.groups is not None else structure
    weights_for = _Weights(config, structure, n)
    sd = config.variant is Variant.HYBRID_SD
    if sd:
        Q, R_cov = problem.priors
        R_inv = R_cov.inverse()

    trace = SolverTrace(solver=config.name, config=config)
    x = np.zeros(n)
    trace.snapshots[0] = x
    if sd:
        trace.xi_snapshots[0] = np.zeros(n)
        trace.s_snapshots[0] = np.zeros(n)
        trace.xi, trace.s = np.zeros(n), np.zeros(n)
    trace.x = x
    if config.max_iters == 0:
        return trace

    logger.info(f"Running {config.name} for up to {config.max_iters} iterations "
                f"({config.lambda_mode.value} lambda, tau={config.tau:g})")
    if sd:
        state = krylov.start_fggk(A, Q, R_inv, problem.b)
    elif config.variant is Variant.HYBRID_FGMRES:
        state = krylov.start_arnoldi(problem.b)
    else:
        state = krylov.start_golub_kahan(A, psi_inv, problem.b)

    z_prev = None
    z = xi = np.zeros(n)
    k = 0
    while k < config.max_iters and not state.breakdown:
        k += 1
        weights = weights_for(z_prev)
        if sd:
            krylov.fggk_step(A, Q, R_inv, weights, state)
        elif config.variant is Variant.HYBRID_FGMRES:
            krylov.arnoldi_step(A, psi_inv, weights, state)
        else:
            krylov.golub_kahan_step(A, psi_inv, weights, state)

        Z = state.Z_matrix
        if sd:
            R = state.qr.R
        elif config.variant is Variant.IRW_FLSQR:
            R = _irw_factor(weights, Z)
        else:
            R = None
        lam, alpha, reachable = _choose_parameters(config, state, problem.noise_norm, R)
        if R is None:
            solution = krylov.solve_projected_tikhonov(state.H, state.beta, lam)
        else:
            solution = krylov.solve_projected_sd(state.H, state.beta, alpha, lam, R)

        z = Z @ solution.y
        if sd:
            xi = np.column_stack(state.V_images[:k]) @ solution.y
            x = xi + z
            residual = A.matvec(x) - problem.b
            full_residual = float(np.sqrt(max(residual @ R_inv.apply(residual), 0.0)))
        else:
            x = psi_inv.matvec(z)
            full_residual = float(np.linalg.norm(A.matvec(x) - problem.b))
        z_prev = z

        record = TraceRecord(
            k=k,
            lam=float(lam),
            alpha=float(alpha),
            proj_residual=solution.residual,
            full_residual=full_residual,
            rel_error=relative_error(x, problem.x_true) if problem.has_truth else None,
            group_norm=grp.group_norm(report_groups, z) if report_groups is not None else None,
            dp_reachable=reachable,
        )
        trace.records.append(record)
        if k % config.snapshot_every == 0:
            trace.snapshots[k] = x
            if sd:
                trace.xi_snapshots[k], trace.s_snapshots[k] = xi, z
        if reachable is False:
            logger.debug(f"{config.name} k={k}: discrepancy target not reachable, lambda={lam:.3e}")
        if callback is not None:
            callback(record)

    if state.breakdown:
        trace.breakdown, trace.breakdown_at = True, state.breakdown_at
        logger.warning(f"{config.name}: {state.kind} breakdown ({state.breakdown_kind}) at k={state.breakdown_at}")
    trace.x = x
    trace.snapshots[k] = x
    if sd:
        trace.xi, trace.s = xi, z
        trace.xi_snapshots[k], trace.s_snapshots[k] = xi, z
    last = trace.records[-1] if trace.records else None
    if last is not None:
        logger.info(f"{config.name} finished after {k} iterations: lambda={last.lam:.3e}, "
                    f"residual={last.full_residual:.4e}"
                    + (f", rel. error={last.rel_error:.4f}" if last.rel_error is not None else ""))
    return trace
