"""Synthetic 2-D localization bench with a linear heatmap scorer.

Samples are noisy renderings of random ellipse contours; the landmarks are
analytically known points on each contour, so ground truth is exact.  The
scorer maps the flattened image (plus a bias) linearly to one heatmap per
landmark, which keeps every gradient closed-form while exercising the full
loss / inference / metric stack, and lets the three training objectives be
compared on equal footing by epochs-to-target-error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from landmarklab.heatmap import (
    GridCoord,
    Heatmap,
    LandmarkSet,
    argmax,
    load_heatmap_csv,
    make_gaussian_target,
    save_heatmap_csv,
)
from landmarklab.losses import (
    MarginKind,
    MarginSpec,
    StructuredLossConfig,
    heatmap_mse_loss,
    smoothed_structured_loss,
    soft_argmax_l2_loss,
    structured_loss,
)
from landmarklab.metrics import nme
from landmarklab.seeding import derive_seed
from landmarklab.smoothing import (
    GaussianLabel,
    SmoothingConfig,
    fit_gaussian_label,
    polyline_segments,
    read_annotations,
    refine_edge_heatmap,
    segment_distance_field,
)

OBJECTIVES = ("structured", "softargmax", "heatmap_mse")

# Contour rendering falloff: wide enough that the nearest pixel center to
# any on-contour point keeps >= 0.9 of the peak brightness.
RENDER_SIGMA = 1.6
CONTOUR_POINTS = 128

# Randomization ranges, as fractions of the image size.
CENTER_RANGE = (0.40, 0.60)   # of width / height
MAJOR_RANGE = (0.18, 0.28)    # semi-major axis, of min(width, height)
MINOR_RANGE = (0.55, 0.95)    # semi-minor axis, of the major axis
# Tilt range (radians).  Kept moderate so each landmark's identity stays
# spatially coherent across the dataset; a linear scorer has no mechanism
# to factor out arbitrary rotations.
ROTATION_RANGE = (-0.26, 0.26)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class SynthImage:
    """Grayscale pixel grid in [0, 1], shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {arr.shape}")
        if arr.min() < 0 or arr.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class SynthSample:
    image: SynthImage
    landmarks: LandmarkSet
    norm_distance: float
    # Generator-side ground-truth boundary polyline; None for imported data.
    contour: np.ndarray | None = None

    def __post_init__(self):
        if self.norm_distance <= 0:
            raise ValueError("norm_distance must be positive")
        if not self.landmarks.in_bounds(self.image.width, self.image.height):
            raise ValueError("landmarks out of image bounds")


@dataclass
class LinearScorer:
    """Per-landmark linear map from flattened image (plus bias) to a heatmap."""

    weights: np.ndarray  # (n_landmarks, H*W, H*W + 1)
    width: int
    height: int

    @classmethod
    def zeros(cls, n_landmarks: int, width: int, height: int) -> "LinearScorer":
        hw = width * height
        return cls(
            weights=np.zeros((n_landmarks, hw, hw + 1)), width=width, height=height
        )

    @property
    def n_landmarks(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LinearScorer":
        return LinearScorer(self.weights.copy(), self.width, self.height)

    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def predict(self, image: SynthImage) -> list[Heatmap]:
        phi = features(image)
        return [
            Heatmap((self.weights[n] @ phi).reshape(self.height, self.width))
            for n in range(self.n_landmarks)
        ]


def features(image: SynthImage) -> np.ndarray:
    """Flattened pixels with a trailing bias feature."""
    return np.concatenate([image.pixels.ravel(), [1.0]])


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "structured"
    learning_rate: float = 1.0
    weight_decay: float = 0.0
    epochs: int = 40
    # Batches at least as large as the train split give full-batch descent,
    # which keeps the non-convex soft-argmax arm off mini-batch noise.
    batch_size: int = 500
    seed: int = 0
    target_nme: float = 0.30
    structured: StructuredLossConfig = StructuredLossConfig(
        epsilon=1.0,
        margin=MarginSpec(kind=MarginKind.SMOOTH_L1, s=0.01, alpha=1.0),
    )
    with_smoothing: bool = False
    smoothing: SmoothingConfig = SmoothingConfig()
    mc_samples: int = 10
    mse_sigma: float = 1.5

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.target_nme <= 0:
            raise ValueError("target NME must be positive")
        if self.mc_samples < 1:
            raise ValueError("need at least one Monte Carlo sample")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    eval_nme: float


@dataclass
class ConvergenceResult:
    epochs_a: int | None
    epochs_b: int | None
    speedup: float | None  # epochs_b / epochs_a; None when either never converged


def _ellipse_contour(center, a, b, phi, n_points=CONTOUR_POINTS) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    t = np.append(t, 0.0)  # close the loop
    x = a * np.cos(t)
    y = b * np.sin(t)
    c, s = np.cos(phi), np.sin(phi)
    return np.stack(
        [center[0] + c * x - s * y, center[1] + s * x + c * y], axis=1
    )


def _contour_point(center, a, b, phi, t):
    c, s = np.cos(phi), np.sin(phi)
    x, y = a * np.cos(t), b * np.sin(t)
    return center[0] + c * x - s * y, center[1] + s * x + c * y


def render_contour(contour: np.ndarray, width: int, height: int) -> np.ndarray:
    """Noiseless intensity image of a closed polyline, peak 1 on the curve."""
    dist = segment_distance_field(polyline_segments(contour), width, height)
    return np.exp(-(dist**2) / (2.0 * RENDER_SIGMA**2))


def generate_dataset(
    n_samples: int,
    width: int = 32,
    height: int = 32,
    n_landmarks: int = 3,
    noise_sigma: float = 0.02,
    seed: int = 0,
) -> list[SynthSample]:
    """Random ellipse-contour samples with exact landmark ground truth.

    Landmarks sit at evenly spaced parameter angles on the contour; the
    normalizing distance of a sample is the gap between its first two
    landmarks.  Deterministic per seed.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if min(width, height) < 12:
        raise ValueError("image sides must be at least 12 pixels")
    if n_landmarks < 2:
        raise ValueError("need at least two landmarks (for the normalizing pair)")
    rng = np.random.default_rng(derive_seed(seed, "synth-data"))
    size = min(width, height)
    samples = []
    for _ in range(n_samples):
        center = (
            rng.uniform(CENTER_RANGE[0] * width, CENTER_RANGE[1] * width),
            rng.uniform(CENTER_RANGE[0] * height, CENTER_RANGE[1] * height),
        )
        a = rng.uniform(MAJOR_RANGE[0] * size, MAJOR_RANGE[1] * size)
        b = rng.uniform(MINOR_RANGE[0] * a, MINOR_RANGE[1] * a)
        phi = rng.uniform(ROTATION_RANGE[0], ROTATION_RANGE[1])
        contour = _ellipse_contour(center, a, b, phi)
        pixels = render_contour(contour, width, height)
        if noise_sigma > 0:
            pixels = pixels + rng.normal(0.0, noise_sigma, pixels.shape)
        pixels = np.clip(pixels, 0.0, 1.0)
        angles = 2.0 * np.pi * np.arange(n_landmarks) / n_landmarks
        pts = np.array([_contour_point(center, a, b, phi, t) for t in angles])
        landmarks = LandmarkSet(pts)
        samples.append(
            SynthSample(
                image=SynthImage(pixels),
                landmarks=landmarks,
                norm_distance=float(np.linalg.norm(pts[0] - pts[1])),
                contour=contour,
            )
        )
    return samples


def _gt_cells(sample: SynthSample, width: int, height: int) -> list[GridCoord]:
    cells = []
    for u, v in sample.landmarks.points:
        cells.append(
            GridCoord(
                int(np.clip(np.rint(u), 0, width - 1)),
                int(np.clip(np.rint(v), 0, height - 1)),
            )
        )
    return cells


def fit_sample_labels(sample: SynthSample, cfg: SmoothingConfig) -> list[GaussianLabel]:
    """Directional labels for one sample, using its contour as the pseudo edge."""
    if sample.contour is None:
        raise ValueError("sample has no contour; cannot fit edge-aware labels")
    w, h = sample.image.width, sample.image.height
    dist = segment_distance_field(polyline_segments(sample.contour), w, h)
    edge = np.exp(-(dist**2) / (2.0 * cfg.sigma_b**2))
    edge[dist >= 3.0 * cfg.sigma_b] = 0.0
    refined = refine_edge_heatmap(Heatmap(edge), cfg)
    return [fit_gaussian_label(refined, (u, v), cfg) for u, v in sample.landmarks.points]


def _sample_loss_grads(
    sample: SynthSample,
    heatmaps: list[np.ndarray],
    cfg: TrainConfig,
    mse_targets=None,
    labels=None,
    mc_seed_base: str = "",
):
    """Summed loss over landmarks plus per-landmark heatmap gradients."""
    w, h = sample.image.width, sample.image.height
    total = 0.0
    grads = []
    cells = _gt_cells(sample, w, h)
    for n, flat in enumerate(heatmaps):
        hm = Heatmap(flat.reshape(h, w))
        if cfg.objective == "structured":
            if cfg.with_smoothing:
                seed = derive_seed(cfg.seed, f"{mc_seed_base}/{n}")
                lg = smoothed_structured_loss(
                    hm, labels[n], cfg.structured, cfg.mc_samples, seed
                )
            else:
                lg = structured_loss(hm, cells[n], cfg.structured)
        elif cfg.objective == "softargmax":
            u, v = sample.landmarks.points[n]
            lg = soft_argmax_l2_loss(hm, (u, v))
        else:
            lg = heatmap_mse_loss(hm, mse_targets[n])
        total += lg.value
        grads.append(lg.grad.ravel())
    return total, grads


def _prepare(dataset, cfg: TrainConfig):
    """Per-sample feature rows and precomputed targets."""
    feats = np.stack([features(s.image) for s in dataset])
    mse_targets = None
    labels = None
    if cfg.objective == "heatmap_mse":
        mse_targets = [
            [
                make_gaussian_target((u, v), s.image.width, s.image.height, cfg.mse_sigma)
                for u, v in s.landmarks.points
            ]
            for s in dataset
        ]
    if cfg.objective == "structured" and cfg.with_smoothing:
        labels = [fit_sample_labels(s, cfg.smoothing) for s in dataset]
    return feats, mse_targets, labels


def evaluate_nme(scorer: LinearScorer, dataset, feats: np.ndarray | None = None) -> float:
    """Mean per-sample NME of argmax inference over a dataset."""
    if feats is None:
        feats = np.stack([features(s.image) for s in dataset])
    w, h = scorer.width, scorer.height
    per_sample = []
    heatmaps = [feats @ scorer.weights[n].T for n in range(scorer.n_landmarks)]
    for b, sample in enumerate(dataset):
        coords = []
        for n in range(scorer.n_landmarks):
            c, _ = argmax(Heatmap(heatmaps[n][b].reshape(h, w)))
            coords.append([c.u, c.v])
        per_sample.append(
            nme(LandmarkSet(np.array(coords, dtype=np.float64)), sample.landmarks,
                sample.norm_distance)
        )
    return float(np.mean(per_sample))


def split_dataset(dataset, eval_fraction: float = 0.2):
    """Deterministic head/tail split into train and held-out parts."""
    n_eval = max(1, int(round(len(dataset) * eval_fraction)))
    if n_eval >= len(dataset):
        raise ValueError("dataset too small to split")
    return dataset[:-n_eval], dataset[-n_eval:]


def train(
    dataset,
    scorer: LinearScorer,
    cfg: TrainConfig,
    eval_dataset=None,
) -> tuple[LinearScorer, list[EpochStats]]:
    """Mini-batch gradient descent on the chosen objective.

    When no held-out set is passed, the tail 20% of ``dataset`` is held
    out.  Per-sample heatmap gradients are pushed through the linear map as
    an outer product with the feature row (one GEMM per landmark per
    batch); batches average gradients, and weight decay adds C * theta.
    History records the held-out argmax-inference NME after each epoch.
    Raises TrainingDiverged on a non-finite loss.
    """
    if eval_dataset is None:
        dataset, eval_dataset = split_dataset(dataset)
    if scorer.n_landmarks != len(dataset[0].landmarks):
        raise ValueError("scorer landmark count does not match dataset")
    feats, mse_targets, labels = _prepare(dataset, cfg)
    eval_feats = np.stack([features(s.image) for s in eval_dataset])
    w = scorer.copy()
    hw = w.width * w.height
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    history = []
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = feats[idx]
            # per-landmark (batch, cell) scores for the whole mini-batch
            scores = [xb @ w.weights[ln].T for ln in range(w.n_landmarks)]
            if not all(np.isfinite(s).all() for s in scores):
                raise TrainingDiverged(epoch)
            gb = np.zeros((w.n_landmarks, len(idx), hw))
            for row, i in enumerate(idx):
                s = dataset[i]
                loss, grads = _sample_loss_grads(
                    s,
                    [scores[ln][row] for ln in range(w.n_landmarks)],
                    cfg,
                    mse_targets=mse_targets[i] if mse_targets else None,
                    labels=labels[i] if labels else None,
                    mc_seed_base=f"mc/{epoch}/{i}",
                )
                epoch_loss += loss
                for ln in range(w.n_landmarks):
                    gb[ln, row] = grads[ln]
            for ln in range(w.n_landmarks):
                gw = gb[ln].T @ xb / len(idx)
                if cfg.weight_decay > 0:
                    gw += cfg.weight_decay * w.weights[ln]
                w.weights[ln] -= cfg.learning_rate * gw
        train_loss = epoch_loss / n
        if not np.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(train_loss),
                eval_nme=evaluate_nme(w, eval_dataset, eval_feats),
            )
        )
    return w, history


def dataset_objective(dataset, scorer: LinearScorer, cfg: TrainConfig):
    """Full-dataset objective value and weight gradient (for gradient checks).

    objective = mean over samples of the summed per-landmark loss, plus
    C/2 * |theta|^2.
    """
    feats, mse_targets, labels = _prepare(dataset, cfg)
    scores = [feats @ scorer.weights[ln].T for ln in range(scorer.n_landmarks)]
    total = 0.0
    grad = np.zeros_like(scorer.weights)
    for i, s in enumerate(dataset):
        loss, grads = _sample_loss_grads(
            s,
            [scores[ln][i] for ln in range(scorer.n_landmarks)],
            cfg,
            mse_targets=mse_targets[i] if mse_targets else None,
            labels=labels[i] if labels else None,
            mc_seed_base=f"mc/1/{i}",
        )
        total += loss
        for ln in range(scorer.n_landmarks):
            grad[ln] += np.outer(grads[ln], feats[i])
    total /= len(dataset)
    grad /= len(dataset)
    if cfg.weight_decay > 0:
        total += 0.5 * cfg.weight_decay * float((scorer.weights**2).sum())
        grad += cfg.weight_decay * scorer.weights
    return total, grad


def first_epoch_at_target(history, target_nme: float):
    for stats in history:
        if stats.eval_nme <= target_nme:
            return stats.epoch
    return None


def compare_convergence(
    dataset, cfg_a: TrainConfig, cfg_b: TrainConfig, target_nme: float
) -> tuple[ConvergenceResult, list[EpochStats], list[EpochStats]]:
    """Epochs-to-target for two objectives on the same data, split, and seed.

    speedup is epochs_b / epochs_a (how many times faster arm a converges);
    None when either arm never reaches the target.
    """
    if cfg_a.seed != cfg_b.seed:
        raise ValueError("both arms must share the seed")
    train_set, eval_set = split_dataset(dataset)
    n_landmarks = len(dataset[0].landmarks)
    w, h = dataset[0].image.width, dataset[0].image.height
    scorer = LinearScorer.zeros(n_landmarks, w, h)
    _, hist_a = train(train_set, scorer, cfg_a, eval_dataset=eval_set)
    _, hist_b = train(train_set, scorer, cfg_b, eval_dataset=eval_set)
    ea = first_epoch_at_target(hist_a, target_nme)
    eb = first_epoch_at_target(hist_b, target_nme)
    speedup = (eb / ea) if (ea is not None and eb is not None) else None
    return ConvergenceResult(epochs_a=ea, epochs_b=eb, speedup=speedup), hist_a, hist_b


def tune_learning_rate(
    dataset,
    base_cfg: TrainConfig,
    grid,
    probe_epochs: int = 8,
    probe_samples: int | None = 200,
) -> float:
    """Pick the grid learning rate that converges fastest on a short probe.

    Rates are ranked by first probe epoch reaching the configured target
    NME (never-reaching ranks last), then by the best NME seen anywhere in
    the probe; ties keep the earlier grid entry.  Diverging rates are
    skipped.  Probes run on a head subset of the dataset.
    """
    subset = dataset[:probe_samples] if probe_samples else dataset
    train_set, eval_set = split_dataset(subset)
    n_landmarks = len(subset[0].landmarks)
    scorer = LinearScorer.zeros(n_landmarks, subset[0].image.width, subset[0].image.height)
    best_lr, best_key = None, (np.inf, np.inf)
    for lr in grid:
        cfg = replace(base_cfg, learning_rate=lr, epochs=probe_epochs)
        try:
            _, hist = train(train_set, scorer, cfg, eval_dataset=eval_set)
        except TrainingDiverged:
            continue
        reached = first_epoch_at_target(hist, base_cfg.target_nme)
        key = (np.inf if reached is None else reached, min(h.eval_nme for h in hist))
        if key < best_key:
            best_lr, best_key = lr, key
    if best_lr is None:
        raise TrainingDiverged(0)
    return best_lr


def write_history_csv(history, objective: str, path) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("epoch,objective,train_loss,eval_nme\n")
        for st in history:
            f.write(
                f"{st.epoch},{objective},{format(st.train_loss, '.12g')},"
                f"{format(st.eval_nme, '.12g')}\n"
            )


def write_dataset(dataset, annotations_path, pixels_dir) -> None:
    """Annotation text file plus one pixel CSV per sample (ids are indices)."""
    os.makedirs(pixels_dir, exist_ok=True)
    with open(annotations_path, "w", newline="\n") as f:
        for i, s in enumerate(dataset):
            coords = " ".join(
                f"{format(u, '.12g')} {format(v, '.12g')}" for u, v in s.landmarks.points
            )
            f.write(f"{i} {coords}\n")
    for i, s in enumerate(dataset):
        save_heatmap_csv(Heatmap(s.image.pixels), os.path.join(pixels_dir, f"{i}_pixels.csv"))


def read_dataset(annotations_path, pixels_dir) -> list[SynthSample]:
    """Inverse of write_dataset; imported samples carry no contour."""
    samples = []
    for sid, landmarks in read_annotations(annotations_path):
        pixels = load_heatmap_csv(os.path.join(pixels_dir, f"{sid}_pixels.csv")).values
        pts = landmarks.points
        samples.append(
            SynthSample(
                image=SynthImage(pixels),
                landmarks=landmarks,
                norm_distance=float(np.linalg.norm(pts[0] - pts[1])),
                contour=None,
            )
        )
    return samples
