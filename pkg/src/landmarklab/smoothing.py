"""Edge-aware label smoothing: landmarks -> pseudo edge map -> directional Gaussian.

The pipeline rasterizes annotated boundary polylines into a soft edge
heatmap, cleans it up with blur + sharpen, blends a small Gaussian bump at
each landmark into the local edge patch, and fits a 2x2 covariance to the
blended mass.  The result is a per-landmark Gaussian whose spread follows
the local edge direction, used to draw jittered training targets.

Everything is deterministic: sampling takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from landmarklab.heatmap import GridCoord, Heatmap, LandmarkSet


@dataclass(frozen=True)
class BoundaryDef:
    """Boundary polylines given as ordered landmark-index sequences."""

    curves: tuple

    def __post_init__(self):
        curves = tuple(tuple(int(i) for i in c) for c in self.curves)
        for c in curves:
            if len(c) < 2:
                raise ValueError(f"boundary curve needs >= 2 points, got {c}")
        object.__setattr__(self, "curves", curves)

    def validate_for(self, landmarks: LandmarkSet) -> None:
        n = len(landmarks)
        for c in self.curves:
            for i in c:
                if not 0 <= i < n:
                    raise ValueError(f"boundary index {i} out of range for {n} landmarks")


@dataclass(frozen=True)
class SmoothingConfig:
    edge_map_size: int = 64       # pixels, square edge heatmap
    sigma_b: float = 1.5          # edge falloff (px)
    blur_kernel: int = 9          # odd
    blur_sigma: float = 1.7       # 0.3*((k-1)/2 - 1) + 0.8 for k = 9
    sharpness_factor: float = 5.0
    patch_half: int = 8           # patch is (2k+1) x (2k+1)
    center_sigma: float = 1.0     # bump at the landmark, ~5 px support
    blend: float = 0.01           # edge weight in the joint patch
    gamma: float = 0.01           # covariance scale of the fitted label
    cov_reg: float = 1e-4         # ridge keeping the covariance SPD

    def __post_init__(self):
        if self.edge_map_size < 1:
            raise ValueError("edge_map_size must be positive")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError(f"blur_kernel must be odd and positive, got {self.blur_kernel}")
        for name in ("sigma_b", "blur_sigma", "center_sigma", "gamma", "cov_reg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patch_half < 1:
            raise ValueError("patch_half must be positive")


@dataclass(frozen=True)
class GaussianLabel:
    """Smoothing distribution for one landmark: mean in pixel units, 2x2 SPD covariance."""

    mean: tuple
    cov: np.ndarray

    def __post_init__(self):
        mean = (float(self.mean[0]), float(self.mean[1]))
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (2, 2):
            raise ValueError(f"covariance must be 2x2, got {cov.shape}")
        if not np.all(np.isfinite(cov)) or abs(cov[0, 1] - cov[1, 0]) > 1e-12:
            raise ValueError("covariance must be finite and symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def segment_distance_field(segments, width: int, height: int) -> np.ndarray:
    """Euclidean distance from every pixel center to the nearest segment.

    ``segments`` is an iterable of ((u0, v0), (u1, v1)) endpoint pairs.
    """
    segs = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)) for a, b in segments]
    if not segs:
        raise ValueError("no segments given")
    v, u = np.mgrid[0:height, 0:width]
    pts = np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)
    best = np.full(pts.shape[0], np.inf)
    for a, b in segs:
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            closest = a[None, :]
        else:
            t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
            closest = a + t[:, None] * ab
        d = np.linalg.norm(pts - closest, axis=1)
        np.minimum(best, d, out=best)
    return best.reshape(height, width)


def polyline_segments(vertices: np.ndarray):
    """Consecutive vertex pairs of an open polyline, vertices shape (M, 2)."""
    pts = np.asarray(vertices, dtype=np.float64)
    return [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]


def build_edge_heatmap(
    landmarks: LandmarkSet, boundaries: BoundaryDef, cfg: SmoothingConfig
) -> Heatmap:
    """Rasterize boundary polylines into a soft edge map in [0, 1].

    Each pixel gets exp(-D^2 / (2 sigma_b^2)) of its distance D to the
    nearest boundary segment, cut to zero beyond 3 sigma_b.
    """
    boundaries.validate_for(landmarks)
    size = cfg.edge_map_size
    segments = []
    for curve in boundaries.curves:
        pts = landmarks.points[list(curve)]
        segments.extend(polyline_segments(pts))
    dist = segment_distance_field(segments, size, size)
    e = np.exp(-(dist**2) / (2.0 * cfg.sigma_b**2))
    e[dist >= 3.0 * cfg.sigma_b] = 0.0
    return Heatmap(e)


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_replicate_1d(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    pad = len(kernel) // 2
    pad_width = [(0, 0), (0, 0)]
    pad_width[axis] = (pad, pad)
    padded = np.pad(arr, pad_width, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


# Center-weighted smoothing kernel used inside the sharpness adjustment,
# matching the common image-library convention.
_SMOOTH3 = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


def _smooth3x3(arr: np.ndarray) -> np.ndarray:
    padded = np.pad(arr, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return np.einsum("ijkl,kl->ij", windows, _SMOOTH3)


def refine_edge_heatmap(e: Heatmap, cfg: SmoothingConfig) -> Heatmap:
    """Gaussian-blur then sharpen the raw edge map.

    Sharpening blends a 3x3-smoothed copy with the blurred map at factor f:
    out = (1 - f) * smooth(x) + f * x, so f = 1 is the identity and f > 1
    amplifies detail.  The result is clamped back into [0, max(x)].
    """
    blurred = e.values
    k = _gaussian_kernel_1d(cfg.blur_kernel, cfg.blur_sigma)
    blurred = _convolve_replicate_1d(blurred, k, axis=1)
    blurred = _convolve_replicate_1d(blurred, k, axis=0)
    f = cfg.sharpness_factor
    sharp = (1.0 - f) * _smooth3x3(blurred) + f * blurred
    return Heatmap(np.clip(sharp, 0.0, blurred.max()))


def extract_patch(values: np.ndarray, center: GridCoord, half: int) -> np.ndarray:
    """(2*half+1)^2 patch around a cell, zero-padded where it leaves the grid."""
    size = 2 * half + 1
    patch = np.zeros((size, size), dtype=np.float64)
    h, w = values.shape
    u0, v0 = center.u - half, center.v - half
    su0, sv0 = max(u0, 0), max(v0, 0)
    su1, sv1 = min(u0 + size, w), min(v0 + size, h)
    if su0 < su1 and sv0 < sv1:
        patch[sv0 - v0 : sv1 - v0, su0 - u0 : su1 - u0] = values[sv0:sv1, su0:su1]
    return patch


def _normalize_max(arr: np.ndarray) -> np.ndarray:
    m = arr.max()
    return arr / m if m > 0 else arr


def joint_patch(
    e_refined: Heatmap, y: tuple[float, float], cfg: SmoothingConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edge patch, center bump, and their blend around landmark y.

    Returns (edge_patch, center_patch, blended), each (2k+1) x (2k+1) and
    the first two normalized to peak 1.  The blend is
    ``blend * edge_patch + center_patch``.
    """
    if not (0 <= y[0] <= e_refined.width - 1 and 0 <= y[1] <= e_refined.height - 1):
        raise ValueError(f"landmark {y} outside the {e_refined.width}x{e_refined.height} edge map")
    k = cfg.patch_half
    size = 2 * k + 1
    center_cell = GridCoord(int(np.rint(y[0])), int(np.rint(y[1])))
    edge = _normalize_max(extract_patch(e_refined.values, center_cell, k))
    # Bump evaluated in absolute coordinates so a fractional landmark stays centered.
    du = np.arange(size, dtype=np.float64) + (center_cell.u - k) - y[0]
    dv = np.arange(size, dtype=np.float64) + (center_cell.v - k) - y[1]
    bump = np.exp(-(du[None, :] ** 2 + dv[:, None] ** 2) / (2.0 * cfg.center_sigma**2))
    bump = _normalize_max(bump)
    return edge, bump, cfg.blend * edge + bump


def fit_gaussian_label(
    e_refined: Heatmap, y: tuple[float, float], cfg: SmoothingConfig
) -> GaussianLabel:
    """Fit the directional smoothing Gaussian for landmark y.

    The covariance is the weighted second moment of the blended patch about
    its own weighted mean, ridged by cov_reg and scaled by gamma; the label
    mean is pinned to y itself.
    """
    _, _, m = joint_patch(e_refined, y, cfg)
    total = m.sum()
    if total <= 0:
        raise ValueError("joint patch has no mass")
    w = m / total
    size = m.shape[0]
    coords_u = np.arange(size, dtype=np.float64)[None, :]
    coords_v = np.arange(size, dtype=np.float64)[:, None]
    mu_u = float((w * coords_u).sum())
    mu_v = float((w * coords_v).sum())
    du = coords_u - mu_u
    dv = coords_v - mu_v
    cov = np.array(
        [
            [(w * du * du).sum(), (w * du * dv).sum()],
            [(w * du * dv).sum(), (w * dv * dv).sum()],
        ]
    )
    cov += cfg.cov_reg * np.eye(2)
    return GaussianLabel(mean=(float(y[0]), float(y[1])), cov=cfg.gamma * cov)


def sample_label(
    label: GaussianLabel, n: int, rng_seed: int, bounds: tuple[int, int]
) -> list[GridCoord]:
    """Draw n grid cells from the label's Gaussian, rounded and clamped in bounds.

    Deterministic per seed: standard normals from a seeded generator are
    colored by the covariance's Cholesky factor.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    width, height = bounds
    try:
        chol = np.linalg.cholesky(label.cov)
    except np.linalg.LinAlgError as err:
        raise ValueError("label covariance is not positive definite") from err
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((n, 2))
    pts = np.asarray(label.mean) + z @ chol.T
    us = np.clip(np.rint(pts[:, 0]), 0, width - 1).astype(int)
    vs = np.clip(np.rint(pts[:, 1]), 0, height - 1).astype(int)
    return [GridCoord(int(u), int(v)) for u, v in zip(us, vs)]


def read_annotations(path) -> list[tuple[str, LandmarkSet]]:
    """Parse annotation lines ``id u1 v1 u2 v2 ...`` into landmark sets."""
    samples = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) < 3 or len(tokens) % 2 == 0:
                raise ValueError(
                    f"{path}:{lineno}: expected 'id u1 v1 ...' with N >= 1 pairs"
                )
            try:
                coords = [float(t) for t in tokens[1:]]
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: malformed coordinate token") from err
            pts = np.array(coords, dtype=np.float64).reshape(-1, 2)
            samples.append((tokens[0], LandmarkSet(pts)))
    if not samples:
        raise ValueError(f"{path}: no annotation lines found")
    return samples


def read_boundaries(path) -> BoundaryDef:
    """Parse boundary lines, one comma-separated index sequence per curve."""
    curves = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                curve = tuple(int(tok) for tok in line.split(","))
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: malformed boundary index") from err
            if len(curve) < 2:
                raise ValueError(f"{path}:{lineno}: boundary curve needs >= 2 indices")
            curves.append(curve)
    if not curves:
        raise ValueError(f"{path}: no boundary curves found")
    return BoundaryDef(tuple(curves))


def write_labels_csv(rows, path) -> None:
    """Write fitted labels, one row per (sample, landmark).

    ``rows`` yields (sample_id, landmark_id, GaussianLabel).
    """
    with open(path, "w", newline="\n") as f:
        f.write("sample_id,landmark_id,mean_u,mean_v,cov_uu,cov_uv,cov_vv\n")
        for sample_id, landmark_id, label in rows:
            fields = (
                label.mean[0],
                label.mean[1],
                label.cov[0, 0],
                label.cov[0, 1],
                label.cov[1, 1],
            )
            f.write(
                f"{sample_id},{landmark_id},"
                + ",".join(format(x, ".12g") for x in fields)
                + "\n"
            )
