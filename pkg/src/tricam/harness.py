"""Experiment protocol: splits, training with validation selection, cm-error
evaluation, angle sweeps, heatmaps, ablations, aux-ratio sweeps and
explicit/implicit label mixing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, generate
from .geometry import ScreenModel, cm_to_px, px_distance_cm
from .network import (
    AdamState,
    BatchInput,
    DivergedError,
    Hyper,
    TriCamConfig,
    TriCamModel,
    forward,
    init_model,
    make_batch,
    train_step,
)
from .synthgen import SceneConfig

log = logging.getLogger(__name__)

ANGLES_DEG = (-30, -20, -10, -5, 0, 5, 10, 20, 30)
# isotropic Gaussian sigma whose mean radial offset (sigma * sqrt(pi/2)) is 3.28 cm
IMPLICIT_NOISE_CM = 3.28 / math.sqrt(math.pi / 2)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 10:
        raise ValueError("split needs at least 10 samples")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(n * spec.train_frac))
    n_val = int(round(n * spec.val_frac))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(len(ds), spec)
    return ds.subset(tr), ds.subset(va), ds.subset(te)


@dataclass(frozen=True)
class TrainRunConfig:
    epochs: int = 150
    batch_size: int = 64
    lr: float = 1e-3
    aux_ratio: float = 0.1
    no_intra_validation: bool = False
    no_weighted_fusion: bool = False
    drop_camera: int | None = None      # 1-based camera id, None keeps all three
    seed: int = 0
    model: TriCamConfig = field(default_factory=TriCamConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.drop_camera not in (None, 1, 2, 3):
            raise ValueError("drop_camera must be None, 1, 2 or 3")

    @property
    def effective_aux_ratio(self) -> float:
        return 0.0 if self.no_intra_validation else self.aux_ratio

    def model_config(self) -> TriCamConfig:
        return replace(self.model, aux_ratio=self.effective_aux_ratio,
                       weighted_fusion=not self.no_weighted_fusion, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "aux_ratio": self.aux_ratio, "no_intra_validation": self.no_intra_validation,
            "no_weighted_fusion": self.no_weighted_fusion, "drop_camera": self.drop_camera,
            "seed": self.seed, "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        kw = dict(d)
        if "model" in kw:
            kw["model"] = TriCamConfig.from_dict(kw["model"])
        return cls(**kw)


def to_batch(ds: Dataset, drop_camera: int | None = None) -> BatchInput:
    drop = None if drop_camera is None else drop_camera - 1
    return make_batch(ds.view_uv, ds.detected, ds.images, ds.target_px, ds.config.rig, drop)


def predict_px(model: TriCamModel, batch: BatchInput, screen: ScreenModel,
               chunk: int = 256) -> np.ndarray:
    preds = [forward(model, batch.subset(slice(i, i + chunk)), tape=False).gaze_pred
             for i in range(0, len(batch), chunk)]
    return np.concatenate(preds) * np.array([screen.width_px, screen.height_px])


def cm_errors(model: TriCamModel, ds: Dataset, drop_camera: int | None = None,
              smoothing: float | None = None) -> np.ndarray:
    screen = ds.config.screen
    pred = predict_px(model, to_batch(ds, drop_camera), screen)
    if smoothing is not None:
        pred = ema_smooth(pred, smoothing)
    return px_distance_cm(screen, pred, ds.target_px)


def ema_smooth(pred: np.ndarray, alpha: float) -> np.ndarray:
    """Exponential moving average over consecutive predictions (alpha = weight of
    the newest prediction)."""
    if not 0 < alpha <= 1:
        raise ValueError("smoothing alpha must lie in (0, 1]")
    out = np.empty_like(pred)
    acc = pred[0]
    for i, p in enumerate(pred):
        acc = alpha * p + (1 - alpha) * acc if i else p
        out[i] = acc
    return out


@dataclass
class TrainResult:
    model: TriCamModel
    curves: list[dict]
    best_epoch: int
    initial_val_error: float


def train_model(train: Dataset, val: Dataset, cfg: TrainRunConfig, hook=None) -> TrainResult:
    """Adam training; returns the parameters with the lowest validation cm-error.

    Epoch 0 in ``curves`` is the untrained model.  ``hook(epoch, batch)`` is
    called on every training batch (instrumentation).
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation splits must be non-empty")
    model = init_model(cfg.model_config())
    hyper = Hyper(lr=cfg.lr, aux_ratio=cfg.effective_aux_ratio)
    opt = AdamState.zeros_like(model)
    full = to_batch(train, cfg.drop_camera)

    val_err = float(np.mean(cm_errors(model, val, cfg.drop_camera)))
    curves = [{"epoch": 0, "train_joint": float("nan"), "train_main": float("nan"),
               "val_cm": val_err}]
    best, best_err, best_epoch = model.copy(), val_err, 0
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        joint, main = [], []
        for i in range(0, n, cfg.batch_size):
            batch = full.subset(perm[i:i + cfg.batch_size])
            if hook is not None:
                hook(epoch, batch)
            try:
                _, opt, loss = train_step(model, batch, opt, hyper)
            except DivergedError as exc:
                raise DivergedError(f"diverged at epoch {epoch}: {exc}") from exc
            joint.append(loss.joint)
            main.append(loss.main)
        val_err = float(np.mean(cm_errors(model, val, cfg.drop_camera)))
        curves.append({"epoch": epoch, "train_joint": float(np.mean(joint)),
                       "train_main": float(np.mean(main)), "val_cm": val_err})
        log.debug("epoch %d joint %.5f val %.3f cm", epoch, np.mean(joint), val_err)
        if val_err < best_err:
            best, best_err, best_epoch = model.copy(), val_err, epoch
    return TrainResult(best, curves, best_epoch, curves[0]["val_cm"])


@dataclass
class HeatmapGrid:
    mean_cm: np.ndarray     # (rows, cols), NaN where a bin is empty
    counts: np.ndarray      # (rows, cols)
    bin_px: int

    def weighted_mean(self) -> float:
        m = self.counts > 0
        return float(np.sum(self.mean_cm[m] * self.counts[m]) / np.sum(self.counts))

    def to_pgm(self, path, maxval: int = 255) -> None:
        """Binary graymap; brighter = larger error, empty bins black."""
        grid = np.nan_to_num(self.mean_cm, nan=0.0)
        top = grid.max() if grid.max() > 0 else 1.0
        pix = np.round(grid / top * maxval).astype(np.uint8)
        rows, cols = pix.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode())
            fh.write(pix.tobytes())


def heatmap_from_errors(errors_cm: np.ndarray, target_px: np.ndarray, screen: ScreenModel,
                        bin_px: int) -> HeatmapGrid:
    """Bin per-sample errors by true target pixel.  A final partial bin is kept
    (truncated) when ``bin_px`` does not divide the resolution."""
    if bin_px < 1:
        raise ValueError("bin size must be positive")
    cols = -(-screen.width_px // bin_px)
    rows = -(-screen.height_px // bin_px)
    ci = np.clip((target_px[:, 0] // bin_px).astype(int), 0, cols - 1)
    ri = np.clip((target_px[:, 1] // bin_px).astype(int), 0, rows - 1)
    sums = np.zeros((rows, cols))
    counts = np.zeros((rows, cols), dtype=np.int64)
    np.add.at(sums, (ri, ci), errors_cm)
    np.add.at(counts, (ri, ci), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return HeatmapGrid(means, counts, bin_px)


def spatial_heatmap(model: TriCamModel, test: Dataset, bin_px: int) -> HeatmapGrid:
    return heatmap_from_errors(cm_errors(model, test), test.target_px, test.config.screen, bin_px)


@dataclass
class EvalReport:
    mean_cm: float
    median_cm: float
    errors_cm: np.ndarray = field(repr=False)
    per_angle: dict | None = None
    heatmap: HeatmapGrid | None = None
    ablation: dict | None = None
    curves: list | None = None


def evaluate(model: TriCamModel, test: Dataset, screen: ScreenModel | None = None,
             drop_camera: int | None = None, smoothing: float | None = None,
             heatmap_bin: int | None = None) -> EvalReport:
    if len(test) == 0:
        raise ValueError("empty test set")
    screen = screen or test.config.screen
    errs = cm_errors(model, test, drop_camera, smoothing)
    report = EvalReport(float(np.mean(errs)), float(np.median(errs)), errs)
    if heatmap_bin:
        report.heatmap = heatmap_from_errors(errs, test.target_px, screen, heatmap_bin)
    return report


@dataclass(frozen=True)
class AngleScenario:
    theta_deg: float
    distance_cm: float = 50.0

    @property
    def dx_cm(self) -> float:
        return self.distance_cm * math.tan(math.radians(self.theta_deg))


def angle_scenarios(angles=ANGLES_DEG, distance_cm: float = 50.0) -> list[AngleScenario]:
    return [AngleScenario(float(a), distance_cm) for a in angles]


def scenario_config(base: SceneConfig, sc: AngleScenario) -> SceneConfig:
    """Seat fixed at distance L with lateral offset dx; other pose ranges kept."""
    return base.with_(distance_range=(sc.distance_cm, sc.distance_cm),
                      lateral_range=(sc.dx_cm, sc.dx_cm))


def angle_sweep(model: TriCamModel, scenarios, gen_cfg: SceneConfig, n_per_angle: int = 200,
                seed: int = 0) -> dict[float, float]:
    """Mean cm-error per angle on freshly generated per-angle test sets."""
    out = {}
    for k, sc in enumerate(scenarios):
        ds = generate(scenario_config(gen_cfg, sc), n_per_angle, seed + 1000 * (k + 1))
        out[sc.theta_deg] = float(np.mean(cm_errors(model, ds)))
    return out


VARIANTS = {
    "full": {},
    "no_intra_validation": {"no_intra_validation": True},
    "no_weighted_fusion": {"no_weighted_fusion": True},
    "drop_camera_1": {"drop_camera": 1},
    "drop_camera_2": {"drop_camera": 2},
    "drop_camera_3": {"drop_camera": 3},
}


def run_variant(train, val, test, base_cfg: TrainRunConfig, seed: int, **flags) -> float:
    cfg = replace(base_cfg, seed=seed, **flags)
    res = train_model(train, val, cfg)
    return float(np.mean(cm_errors(res.model, test, cfg.drop_camera)))


def ablation_suite(dataset: Dataset, base_cfg: TrainRunConfig, seeds, split: SplitSpec = SplitSpec(),
                   variants=None) -> dict:
    """Median test error per ablation variant over ``seeds`` (>= 3) and the
    relative delta of each variant's median against the full model."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError("ablation suite needs at least 3 seeds")
    train, val, test = split_dataset(dataset, split)
    variants = variants or VARIANTS
    per_seed = {name: [run_variant(train, val, test, base_cfg, s, **flags) for s in seeds]
                for name, flags in variants.items()}
    medians = {name: float(np.median(v)) for name, v in per_seed.items()}
    full = medians.get("full")
    deltas = {name: (m - full) / full if full else float("nan") for name, m in medians.items()}
    return {"per_seed": per_seed, "median": medians, "delta": deltas, "seeds": seeds}


def aux_ratio_sweep(dataset: Dataset, ratios, seeds, base_cfg: TrainRunConfig = TrainRunConfig(),
                    split: SplitSpec = SplitSpec()) -> dict[float, float]:
    train, val, test = split_dataset(dataset, split)
    return {float(r): float(np.median([run_variant(train, val, test, base_cfg, s, aux_ratio=r)
                                       for s in seeds]))
            for r in ratios}


def implicit_labels(target_px: np.ndarray, screen: ScreenModel, seed: int,
                    noise_cm: float = IMPLICIT_NOISE_CM) -> np.ndarray:
    """Cursor-style labels: true gaze pixel plus isotropic Gaussian alignment
    offset (``noise_cm`` per axis), clipped to the screen."""
    rng = np.random.default_rng(seed)
    off = rng.normal(0.0, noise_cm, size=target_px.shape)
    lab = target_px + np.stack([cm_to_px(screen, off[:, 0], "x"), cm_to_px(screen, off[:, 1], "y")],
                               axis=1)
    return np.clip(lab, 0.0, [screen.width_px - 1e-9, screen.height_px - 1e-9])


def make_implicit_set(cfg: SceneConfig, n: int, seed: int,
                      noise_cm: float = IMPLICIT_NOISE_CM) -> Dataset:
    ds = generate(cfg, n, seed)
    return ds.with_targets(implicit_labels(ds.target_px, cfg.screen, seed, noise_cm))


def mix_experiment(explicit: Dataset, implicit: Dataset, pct_list, cfg: TrainRunConfig,
                   split: SplitSpec = SplitSpec(), seeds=None) -> dict[float, float]:
    """Replace a percentage of the explicit training samples with an equal number
    of implicit (noisy-label) samples, train, and report median test error."""
    train, val, test = split_dataset(explicit, split)
    if len(implicit) < len(train):
        raise ValueError("implicit set must be at least as large as the training split")
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    out = {}
    for pct in pct_list:
        k = int(round(len(train) * pct / 100.0))
        parts = [train.subset(np.arange(k, len(train)))]
        if k:
            parts.append(implicit.subset(np.arange(k)))
        mixed = Dataset.concat(parts) if len(parts) > 1 else parts[0]
        errs = [run_variant(mixed, val, test, cfg, s) for s in seeds]
        out[float(pct)] = float(np.median(errs))
    return out
