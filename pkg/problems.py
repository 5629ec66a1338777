"""
Desk-scale test problems: wavelet-group deblurring, spatio-temporal (Kronecker) deblurring and a
synthetic anomaly-detection problem with Gaussian priors.

Every generator is a pure function of its arguments. Random draws come from numpy Generators
seeded through one SeedSequence per problem, so the truth and the noise use independent streams.
"""
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

import json_utils
from date_utils import DateUtils
from groups import GroupStructure, read_groups, temporal_groups, wavelet_tree_groups, write_groups
from linops import (EARTH_RADIUS_KM, SpdOperator, build_covariance, dense_spd, gaussian_blur_1d, gaussian_blur_2d,
                    identity_operator, kron, kron_spd, scaled_identity)
from transforms import WaveletLayout, haar_synthesis_operator

logger = logging.getLogger(__name__)

BOUNDARY = "zero"

# reference blur ("medium") at 256×256, scaled with the image size
REFERENCE_SIZE = 256
REFERENCE_SIGMA = 4.0
REFERENCE_BANDWIDTH = 16

DYNAMIC_SPACE_BLUR = (1.0, 4)
DYNAMIC_TIME_BLUR = (1.0, 3)

ANOMALY_START_DATE = "2015-06-26"
ANOMALY_ORIGIN = (30.0, -100.0)
THETA_T_DAYS = 9.854
THETA_S_CELLS = 3
THETA_S_KM = THETA_S_CELLS * math.radians(1.0) * EARTH_RADIUS_KM
REFERENCE_THETA_S_KM = 555.42
REFERENCE_NOISE_SIGMA = 1.1267
BACKGROUND_STD = 0.3
ANOMALY_AMPLITUDE = 100.0
FOOTPRINTS = ((1, 1), (1, 2), (2, 1))
FOOTPRINT_WEIGHTS = (0.75, 0.125, 0.125)

METADATA_FILE = "metadata.json"
X_TRUE_FILE = "x_true.txt"
B_FILE = "b.txt"
GROUPS_FILE = "groups.txt"


@dataclass
class TestProblem:
    __test__ = False  # not a pytest class

    name: str
    A: LinearOperator
    x_true: np.ndarray
    b: np.ndarray
    noise_norm: float
    groups: Optional[GroupStructure] = None
    psi_inv: Optional[LinearOperator] = None
    priors: Optional[Tuple[SpdOperator, SpdOperator]] = None
    b_exact: Optional[np.ndarray] = None
    xi_true: Optional[np.ndarray] = None
    s_true: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self):
        return self.A.shape

    @property
    def is_square(self) -> bool:
        return self.A.shape[0] == self.A.shape[1]

    @property
    def transform(self) -> LinearOperator:
        """Ψ⁻¹, the identity when the problem has no transform."""
        return self.psi_inv if self.psi_inv is not None else identity_operator(self.A.shape[1])

    @property
    def has_truth(self) -> bool:
        return self.x_true is not None and bool(np.any(self.x_true))

    @property
    def image_shape(self) -> tuple:
        return tuple(self.metadata.get("image_shape", (self.A.shape[1],)))


def add_noise(b_exact, level: float, seed: Union[int, np.random.SeedSequence]) -> Tuple[np.ndarray, float]:
    """b = b_exact + e with e Gaussian, rescaled so that ‖e‖ = level · ‖b_exact‖ exactly."""
    if level < 0:
        raise ValueError(f"noise level must be nonnegative, got {level}")
    b_exact = np.asarray(b_exact, dtype=float).ravel()
    if level == 0:
        return b_exact.copy(), 0.0
    noise_norm = level * float(np.linalg.norm(b_exact))
    g = np.random.default_rng(seed).standard_normal(b_exact.size)
    e = noise_norm * g / np.linalg.norm(g)
    return b_exact + e, noise_norm


def blur_parameters(size: int) -> Tuple[float, int]:
    """(σ, bandwidth) of the medium blur scaled to a size×size image."""
    sigma = REFERENCE_SIGMA * size / REFERENCE_SIZE
    bandwidth = max(1, int(round(REFERENCE_BANDWIDTH * size / REFERENCE_SIZE)))
    return sigma, min(bandwidth, size - 1)


def _pixel_grid(rows: int, cols: int):
    v, u = np.mgrid[0:rows, 0:cols]
    return (v + 0.5) / rows, (u + 0.5) / cols


def satellite_image(size: int, seed: int = 0) -> np.ndarray:
    """Satellite-like test image on a zero background: ellipse body, striped panels, antenna."""
    rng = np.random.default_rng(seed)
    v, u = _pixel_grid(size, size)
    cy, cx = 0.5 + rng.uniform(-0.03, 0.03, size=2)
    tilt = rng.uniform(-0.3, 0.3)
    du, dv = u - cx, v - cy
    along = du * np.cos(tilt) + dv * np.sin(tilt)
    across = -du * np.sin(tilt) + dv * np.cos(tilt)

    image = np.zeros((size, size))
    panels = (np.abs(across) <= 0.05) & (np.abs(along) >= 0.13) & (np.abs(along) <= 0.38)
    image[panels] = 0.45 + 0.1 * (np.cos(2 * np.pi * 12 * along[panels]) > 0)

    radius = (along / 0.09) ** 2 + (across / 0.16) ** 2
    body = radius <= 1.0
    image[body] = 0.6 + 0.3 * (1.0 - radius[body])

    antenna = (np.abs(along) <= 0.5 / size + 1e-9) & (across < -0.16) & (across > -0.3)
    image[antenna] = 1.0
    return np.clip(image, 0.0, 1.0)


def moving_shapes(n_side: int = 50, n_frames: int = 9, seed: int = 0) -> np.ndarray:
    """(n_frames, n_side, n_side) sequence: a static cross plus two slowly moving discs."""
    rng = np.random.default_rng(seed)
    v, u = _pixel_grid(n_side, n_side)
    cross = ((np.abs(v - 0.3) <= 0.03) & (np.abs(u - 0.3) <= 0.15)) | \
            ((np.abs(u - 0.3) <= 0.03) & (np.abs(v - 0.3) <= 0.15))

    starts = np.column_stack([rng.uniform(0.6, 0.75, 2), rng.uniform(0.25, 0.75, 2)])
    velocities = rng.uniform(-0.012, 0.012, size=(2, 2))
    frames = np.zeros((n_frames, n_side, n_side))
    for t in range(n_frames):
        frame = frames[t]
        frame[cross] = 1.0
        for (cy, cx), (vy, vx) in zip(starts, velocities):
            disc = (v - cy - t * vy) ** 2 + (u - cx - t * vx) ** 2 <= 0.07 ** 2
            frame[disc] = 0.8
    return frames


##############################
### GENERATORS
##############################

def gen_wavelet_deblur(size: int = 64, levels: int = 2, strategy: str = "G1", noise_level: float = 0.05,
                       seed: int = 0, image: Optional[np.ndarray] = None) -> TestProblem:
    """Deblurring with group sparsity on the Haar parent/child trees of the image."""
    truth_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    if image is None:
        x_image = satellite_image(size, int(truth_seed.generate_state(1)[0]))
    else:
        x_image = np.asarray(image, dtype=float)
        if x_image.ndim != 2:
            raise ValueError(f"image must be 2D, got shape {x_image.shape}")
    rows, cols = x_image.shape
    layout = WaveletLayout(rows, cols, levels)
    sigma, bandwidth = blur_parameters(min(rows, cols))

    A = gaussian_blur_2d(rows, cols, sigma, bandwidth)
    x_true = x_image.ravel()
    b_exact = A.matvec(x_true)
    b, noise_norm = add_noise(b_exact, noise_level, noise_seed)
    logger.info(f"Wavelet deblurring problem {rows}x{cols}, {levels} levels, {strategy}, "
                f"blur sigma={sigma:g} bandwidth={bandwidth}, noise {noise_level}")
    return TestProblem(
        name="wavelet-deblur",
        A=A,
        x_true=x_true,
        b=b,
        noise_norm=noise_norm,
        groups=wavelet_tree_groups(layout, strategy),
        psi_inv=haar_synthesis_operator(layout),
        b_exact=b_exact,
        metadata={
            "generator": "wavelet-deblur",
            "params": {"size": size, "levels": levels, "strategy": strategy,
                       "noise_level": noise_level, "seed": seed},
            "custom_image": image is not None,
            "image_shape": [rows, cols],
            "blur_sigma": sigma,
            "blur_bandwidth": bandwidth,
            "boundary": BOUNDARY,
        },
    )


def gen_dynamic_deblur(noise_level: float = 0.02, seed: int = 0, n_side: int = 50,
                       n_frames: int = 9) -> TestProblem:
    """Spatio-temporal deblurring, A = A_t ⊗ A_s, one group per pixel over all frames."""
    truth_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    space_sigma, space_bw = DYNAMIC_SPACE_BLUR
    time_sigma, time_bw = DYNAMIC_TIME_BLUR
    space_bw, time_bw = min(space_bw, n_side - 1), min(time_bw, n_frames - 1)
    A = kron(gaussian_blur_1d(n_frames, time_sigma, time_bw),
             gaussian_blur_2d(n_side, n_side, space_sigma, space_bw))

    x_true = moving_shapes(n_side, n_frames, int(truth_seed.generate_state(1)[0])).ravel()
    b_exact = A.matvec(x_true)
    b, noise_norm = add_noise(b_exact, noise_level, noise_seed)
    logger.info(f"Dynamic deblurring problem {n_side}x{n_side}x{n_frames}, noise {noise_level}")
    return TestProblem(
        name="dynamic-deblur",
        A=A,
        x_true=x_true,
        b=b,
        noise_norm=noise_norm,
        groups=temporal_groups(n_side * n_side, n_frames),
        b_exact=b_exact,
        metadata={
            "generator": "dynamic-deblur",
            "params": {"noise_level": noise_level, "seed": seed, "n_side": n_side, "n_frames": n_frames},
            "image_shape": [n_frames, n_side, n_side],
            "space_blur": [space_sigma, space_bw],
            "time_blur": [time_sigma, time_bw],
            "boundary": BOUNDARY,
        },
    )


def add_weighted_noise(b_exact, level: float,
                       seed: Union[int, np.random.SeedSequence]) -> Tuple[np.ndarray, float]:
    """
    b = b_exact + e with e = σ·g, g Gaussian rescaled to ‖g‖ = √m, and σ chosen so that
    σ‖e‖ / ‖b_exact‖ = level. Returns (b, σ); ‖e‖_{R⁻¹} = √m for R = σ²I.
    """
    if level <= 0:
        raise ValueError(f"noise level must be positive, got {level}")
    b_exact = np.asarray(b_exact, dtype=float).ravel()
    m = b_exact.size
    sigma = math.sqrt(level * float(np.linalg.norm(b_exact)) / math.sqrt(m))
    g = np.random.default_rng(seed).standard_normal(m)
    e = sigma * math.sqrt(m) * g / np.linalg.norm(g)
    return b_exact + e, sigma


def _observation_operator(rng, side: int, n_time: int, n_obs: int) -> sp.csr_matrix:
    """Each row averages a small footprint (1×1, 1×2 or 2×1 cells, edge-clipped) at one time step."""
    n_space = side * side
    rows, cols, vals = [], [], []
    times = rng.integers(0, n_time, size=n_obs)
    corners = rng.integers(0, side, size=(n_obs, 2))
    shapes = rng.choice(len(FOOTPRINTS), size=n_obs, p=FOOTPRINT_WEIGHTS)
    for i, (t, (r, c), shape) in enumerate(zip(times, corners, shapes)):
        height, width = FOOTPRINTS[shape]
        patch = [(rr, cc) for rr in range(r, min(r + height, side)) for cc in range(c, min(c + width, side))]
        for rr, cc in patch:
            rows.append(i)
            cols.append(t * n_space + rr * side + cc)
            vals.append(1.0 / len(patch))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_obs, n_space * n_time))


def gen_anomaly(n_space: int = 100, n_time: int = 8, n_obs: int = 400, noise_level: float = 1.0,
                seed: int = 0, n_anomalies: int = 3) -> TestProblem:
    """
    Solution-decomposition problem: x = ξ + s with ξ ~ N(0, Q_t ⊗ Q_s) a weak smooth background and
    s a few strong anomalies at fixed spatial sites, active at every time step. The noise level is
    σ‖e‖ / ‖Ax_true‖ with R = σ²I, so ‖e‖_{R⁻¹} = √m.
    """
    side = math.isqrt(n_space)
    if side * side != n_space:
        raise ValueError(f"n_space must be a perfect square (square grid), got {n_space}")
    if not 0 < n_anomalies <= n_space:
        raise ValueError(f"n_anomalies must be in [1, {n_space}], got {n_anomalies}")
    if noise_level <= 0:
        raise ValueError(f"the anomaly problem needs a positive noise level, got {noise_level}")
    truth_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(truth_seed)

    lat0, lon0 = ANOMALY_ORIGIN
    coords = [(lat0 + r, lon0 + c) for r in range(side) for c in range(side)]
    dates = DateUtils.date_range(ANOMALY_START_DATE, n_time)
    Q_t = build_covariance(dates, THETA_T_DAYS, "time-days")
    Q_s = build_covariance(coords, THETA_S_KM, "spherical-greatcircle")
    Q = kron_spd(Q_t, dense_spd(BACKGROUND_STD ** 2 * Q_s.matrix))
    n = n_space * n_time

    xi_true = Q.apply_sqrt(rng.standard_normal(n))
    sites = np.sort(rng.choice(n_space, size=n_anomalies, replace=False))
    signs = rng.choice([-1.0, 1.0], size=n_anomalies)
    s_true = np.zeros(n)
    for t in range(n_time):
        s_true[sites + t * n_space] = ANOMALY_AMPLITUDE * signs * (1.0 + 0.1 * np.sin(t))
    x_true = xi_true + s_true

    A = aslinearoperator(_observation_operator(rng, side, n_time, n_obs))
    b_exact = A.matvec(x_true)
    b, sigma = add_weighted_noise(b_exact, noise_level, noise_seed)
    R = scaled_identity(n_obs, sigma ** 2)
    relative_noise = float(np.linalg.norm(b - b_exact) / np.linalg.norm(b_exact))
    logger.info(f"Anomaly problem: {side}x{side} grid, {n_time} days, {n_obs} observations, "
                f"{n_anomalies} anomalies at {sites.tolist()}, sigma={sigma:.4g}, "
                f"relative noise {relative_noise:.3f}")
    return TestProblem(
        name="anomaly",
        A=A,
        x_true=x_true,
        b=b,
        noise_norm=math.sqrt(n_obs),
        groups=temporal_groups(n_space, n_time),
        priors=(Q, R),
        b_exact=b_exact,
        xi_true=xi_true,
        s_true=s_true,
        metadata={
            "generator": "anomaly",
            "params": {"n_space": n_space, "n_time": n_time, "n_obs": n_obs, "noise_level": noise_level,
                       "seed": seed, "n_anomalies": n_anomalies},
            "image_shape": [n_time, side, side],
            "anomaly_sites": sites.tolist(),
            "theta_t_days": THETA_T_DAYS,
            "theta_s_km": THETA_S_KM,
            "noise_sigma": sigma,
            "relative_noise": relative_noise,
            "reference_theta_s_km": REFERENCE_THETA_S_KM,
            "reference_noise_sigma": REFERENCE_NOISE_SIGMA,
        },
    )


GENERATORS = {
    "wavelet-deblur": gen_wavelet_deblur,
    "dynamic-deblur": gen_dynamic_deblur,
    "anomaly": gen_anomaly,
}


##############################
### SAVE / LOAD
##############################

def save_problem(problem: TestProblem, directory: str) -> Dict[str, str]:
    """Write metadata, x_true, b and groups; operators are regenerated from the metadata on load."""
    os.makedirs(directory, exist_ok=True)
    metadata = dict(problem.metadata)
    metadata["noise_norm"] = problem.noise_norm
    metadata["shape"] = list(problem.shape)
    paths = {"metadata": json_utils.save_to_json_file(metadata, METADATA_FILE, directory)}
    for key, name, vector in (("x_true", X_TRUE_FILE, problem.x_true), ("b", B_FILE, problem.b)):
        paths[key] = os.path.join(directory, name)
        np.savetxt(paths[key], vector, fmt="%.17e")
    if problem.groups is not None:
        paths["groups"] = write_groups(problem.groups, GROUPS_FILE, directory)
    logger.info(f"Problem {problem.name} saved in {directory}")
    return paths


def load_problem(directory: str) -> TestProblem:
    metadata = json_utils.load_json_data(os.path.join(directory, METADATA_FILE))
    if not metadata:
        raise FileNotFoundError(f"no problem metadata found in {directory}")
    generator = metadata.get("generator")
    if generator not in GENERATORS:
        raise ValueError(f"unknown problem generator {generator!r} in {directory}")

    x_true = np.atleast_1d(np.loadtxt(os.path.join(directory, X_TRUE_FILE)))
    b = np.atleast_1d(np.loadtxt(os.path.join(directory, B_FILE)))
    params = dict(metadata["params"])
    if metadata.get("custom_image"):
        params["image"] = x_true.reshape(metadata["image_shape"])
    problem = GENERATORS[generator](**params)
    if b.size != problem.A.shape[0]:
        raise ValueError(f"{B_FILE} has {b.size} entries, the regenerated operator expects {problem.A.shape[0]}")

    groups_path = os.path.join(directory, GROUPS_FILE)
    groups = read_groups(groups_path) if os.path.exists(groups_path) else problem.groups
    logger.info(f"Problem {generator} loaded from {directory}")
    return replace(problem, x_true=x_true, b=b, noise_norm=float(metadata["noise_norm"]), groups=groups)
