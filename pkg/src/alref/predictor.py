"""Per-pixel baseline classifier and entropy maps.

The baseline turns each pixel into 3 features per band (raw value, local
window mean, local window std) and fits a multinomial softmax with weighted
cross-entropy and Adam updates over randomly sampled square chips. Any
predictor producing a ProbabilityMap is interchangeable with it; see
``protocol`` for the out-of-process variant.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .raster import AcquisitionMask, LabelRaster, MultiBandRaster

_PROB_CLAMP = 1e-12
_AUGMENTATIONS = ("rotate90", "flip_h", "flip_v")


@dataclass
class ProbabilityMap:
    """Class membership probabilities, shape (num_classes, width, height)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or min(p.shape) < 1:
            raise ValueError(f"expected (num_classes, width, height), got {p.shape}")
        if float(p.min()) < 0.0:
            raise ValueError("probabilities must be non-negative")
        sums = p.sum(axis=0)
        if float(np.abs(sums - 1.0).max()) > 1e-6:
            raise ValueError("per-pixel probabilities must sum to 1 within 1e-6")
        self.probs = p

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[2]


@dataclass
class EntropyMap:
    """Per-pixel predictive entropies in nats, shape (width, height)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or min(v.shape) < 1:
            raise ValueError(f"expected (width, height), got {v.shape}")
        if float(v.min()) < 0.0:
            raise ValueError("entropies must be non-negative")
        self.values = v

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PredictorConfig:
    window: int = 5
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 15
    chips_per_epoch: int = 64
    chip_size: int = 128
    augmentations: frozenset = frozenset(_AUGMENTATIONS)
    class_weight_mode: str = "inverse_frequency"
    warm_start: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1 or self.chips_per_epoch < 1 or self.chip_size < 1:
            raise ValueError("epochs, chips_per_epoch and chip_size must be >= 1")
        extra = set(self.augmentations) - set(_AUGMENTATIONS)
        if extra:
            raise ValueError(f"unknown augmentations {sorted(extra)}")
        object.__setattr__(self, "augmentations", frozenset(self.augmentations))
        if self.class_weight_mode not in ("inverse_frequency", "uniform"):
            raise ValueError(f"unknown class_weight_mode {self.class_weight_mode!r}")

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "epochs": self.epochs,
            "chips_per_epoch": self.chips_per_epoch,
            "chip_size": self.chip_size,
            "augmentations": sorted(self.augmentations),
            "class_weight_mode": self.class_weight_mode,
            "warm_start": self.warm_start,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        d = dict(d)
        if "augmentations" in d:
            d["augmentations"] = frozenset(d["augmentations"])
        return cls(**d)


@dataclass
class BaselineModel:
    """Softmax weights (num_classes, features + 1 bias) plus Adam state."""

    weights: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int
    window: int
    bands: int
    num_classes: int
    epoch_losses: list = field(default_factory=list)

    @property
    def features(self) -> int:
        return self.weights.shape[1] - 1


def new_model(bands: int, num_classes: int, window: int) -> BaselineModel:
    d = 3 * bands
    zeros = lambda: np.zeros((num_classes, d + 1), dtype=np.float32)
    return BaselineModel(zeros(), zeros(), zeros(), 0, window, bands, num_classes)


def extract_features(image: MultiBandRaster, window: int) -> np.ndarray:
    """Per-pixel features, shape (3 * bands, width, height): raw band value,
    clipped-window mean and population std per band."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    vals = image.values.astype(np.float64)
    c, w, h = vals.shape
    feats = np.empty((3 * c, w, h), dtype=np.float64)
    feats[:c] = vals
    if window == 1:
        feats[c:2 * c] = vals
        feats[2 * c:] = 0.0
        return feats
    half = window // 2
    x0 = np.clip(np.arange(w) - half, 0, w)
    x1 = np.clip(np.arange(w) + half + 1, 0, w)
    y0 = np.clip(np.arange(h) - half, 0, h)
    y1 = np.clip(np.arange(h) + half + 1, 0, h)
    counts = (x1 - x0)[:, None] * (y1 - y0)[None, :]
    for b in range(c):
        s1 = _window_sums(vals[b], x0, x1, y0, y1)
        s2 = _window_sums(vals[b] * vals[b], x0, x1, y0, y1)
        mean = s1 / counts
        var = np.maximum(s2 / counts - mean * mean, 0.0)
        feats[c + b] = mean
        feats[2 * c + b] = np.sqrt(var)
    return feats


def _window_sums(a: np.ndarray, x0, x1, y0, y1) -> np.ndarray:
    # Summed-area table with a zero border row/column.
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=s[1:, 1:])
    return s[np.ix_(x1, y1)] - s[np.ix_(x0, y1)] - s[np.ix_(x1, y0)] + s[np.ix_(x0, y0)]


def class_weights(labels: list[LabelRaster] | LabelRaster, num_classes: int,
                  mode: str = "inverse_frequency") -> np.ndarray:
    """Per-class loss weights. Inverse frequency is normalised to mean 1
    over the classes present; absent classes get weight 0."""
    if mode == "uniform":
        return np.ones(num_classes, dtype=np.float64)
    rasters = labels if isinstance(labels, list) else [labels]
    counts = np.zeros(num_classes, dtype=np.int64)
    for lr in rasters:
        counts += np.bincount(lr.labels.ravel(), minlength=num_classes)
    present = counts > 0
    w = np.zeros(num_classes, dtype=np.float64)
    w[present] = counts.sum() / counts[present]
    w[present] *= present.sum() / w[present].sum()
    return w


def weighted_cross_entropy(p: ProbabilityMap, labels: LabelRaster, weights: np.ndarray,
                           mask: AcquisitionMask | None = None) -> tuple[float, np.ndarray]:
    """Mean weighted cross-entropy over counted pixels and its gradient with
    respect to the logits that produced p.

    Counted pixels are those with mask bit 1 (default: all). Probabilities
    are clamped at 1e-12 before the log. The gradient at a counted pixel is
    weights[y] * (p - onehot(y)) / n_counted, zero elsewhere.
    """
    probs = p.probs
    y = labels.labels
    if probs.shape[1:] != y.shape:
        raise ValueError("probability map and labels have different extents")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (p.num_classes,):
        raise ValueError(f"expected {p.num_classes} class weights, got {weights.shape}")
    if np.any(weights < 0):
        raise ValueError("class weights must be >= 0")
    counted = np.ones_like(y, dtype=bool) if mask is None else mask.bits == 1
    n = int(counted.sum())
    if n == 0:
        raise ValueError("no counted pixels")
    loss_pix, grad = _wce_core(probs, y, weights)
    loss = float(loss_pix[counted].sum() / n)
    grad[:, ~counted] = 0.0
    grad /= n
    return loss, grad


def _wce_core(probs: np.ndarray, y: np.ndarray, weights: np.ndarray):
    """Per-pixel loss -w[y] ln p[y] and unnormalised gradient w[y]*(p - onehot)."""
    p_true = np.take_along_axis(probs, y[None].astype(np.intp), axis=0)[0]
    w_pix = weights[y]
    loss_pix = -w_pix * np.log(np.maximum(p_true, _PROB_CLAMP))
    grad = probs * w_pix[None]
    np.put_along_axis(grad, y[None].astype(np.intp), np.take_along_axis(grad, y[None].astype(np.intp), axis=0) - w_pix[None], axis=0)
    return loss_pix, grad


def softmax_logits(logits: np.ndarray) -> np.ndarray:
    """Softmax over axis 0, numerically stabilised."""
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def adam_step(model: BaselineModel, grad: np.ndarray, cfg: PredictorConfig) -> None:
    """One Adam update on the model weights, in place."""
    g = grad.astype(np.float64)
    m = model.m.astype(np.float64)
    v = model.v.astype(np.float64)
    model.step += 1
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g
    m_hat = m / (1.0 - cfg.adam_beta1 ** model.step)
    v_hat = v / (1.0 - cfg.adam_beta2 ** model.step)
    w = model.weights.astype(np.float64)
    w -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    model.weights = w.astype(np.float32)
    model.m = m.astype(np.float32)
    model.v = v.astype(np.float32)


def _augment_chip(rng: np.random.Generator, feats: np.ndarray, labels: np.ndarray,
                  enabled: frozenset) -> tuple[np.ndarray, np.ndarray]:
    # Fixed evaluation order keeps the rng stream independent of set hashing.
    if "rotate90" in enabled:
        k = int(rng.integers(4))
        if k:
            feats = np.rot90(feats, k, axes=(1, 2))
            labels = np.rot90(labels, k, axes=(0, 1))
    if "flip_h" in enabled and rng.integers(2):
        feats = feats[:, ::-1, :]
        labels = labels[::-1, :]
    if "flip_v" in enabled and rng.integers(2):
        feats = feats[:, :, ::-1]
        labels = labels[:, ::-1]
    return feats, labels


def train(images: list[MultiBandRaster], labels: list[LabelRaster], cfg: PredictorConfig,
          model: BaselineModel | None = None) -> BaselineModel:
    """Train the baseline on the current pool labels.

    Each epoch samples chips_per_epoch square chips (uniform image, uniform
    valid offset), augments them, and runs one Adam step per chip on the
    chip's pixel batch. Class weights come from class_weight_mode over the
    pool labels. Deterministic given cfg.seed; pass a model to continue
    training (warm start) instead of starting from zeros.
    """
    if not images:
        raise ValueError("need at least one training image")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    num_classes = labels[0].num_classes
    bands = images[0].bands
    for img, lab in zip(images, labels):
        if (img.width, img.height) != (lab.width, lab.height):
            raise ValueError("image/label extents differ")
        if img.bands != bands or lab.num_classes != num_classes:
            raise ValueError("pool is not homogeneous in bands/num_classes")
        if cfg.chip_size > img.width or cfg.chip_size > img.height:
            raise ValueError(f"chip_size {cfg.chip_size} exceeds image {img.width}x{img.height}")

    w_cls = class_weights(labels, num_classes, cfg.class_weight_mode)
    feats = [extract_features(img, cfg.window) for img in images]
    d = feats[0].shape[0]
    if model is None:
        model = new_model(bands, num_classes, cfg.window)
    elif model.bands != bands or model.num_classes != num_classes or model.window != cfg.window:
        raise ValueError("model does not match pool/config")

    rng = np.random.default_rng(cfg.seed)
    cs = cfg.chip_size
    for _ in range(cfg.epochs):
        losses = np.empty(cfg.chips_per_epoch)
        for chip in range(cfg.chips_per_epoch):
            idx = int(rng.integers(len(images)))
            x0 = int(rng.integers(images[idx].width - cs + 1))
            y0 = int(rng.integers(images[idx].height - cs + 1))
            f = feats[idx][:, x0:x0 + cs, y0:y0 + cs]
            lab = labels[idx].labels[x0:x0 + cs, y0:y0 + cs]
            f, lab = _augment_chip(rng, f, lab, cfg.augmentations)
            x = np.empty((d + 1, cs * cs), dtype=np.float64)
            x[:d] = f.reshape(d, -1)
            x[d] = 1.0
            y = lab.reshape(-1)
            logits = model.weights.astype(np.float64) @ x
            probs = softmax_logits(logits)
            loss_pix, grad_logits = _wce_core(probs, y, w_cls)
            losses[chip] = loss_pix.mean()
            grad_w = (grad_logits / y.size) @ x.T
            adam_step(model, grad_w, cfg)
        model.epoch_losses.append(float(losses.mean()))
    return model


def predict_proba(model: BaselineModel, image: MultiBandRaster) -> ProbabilityMap:
    """Softmax class probabilities per pixel, same extent as the input."""
    if image.bands != model.bands:
        raise ValueError(f"model expects {model.bands} bands, image has {image.bands}")
    feats = extract_features(image, model.window)
    d = feats.shape[0]
    x = np.empty((d + 1, image.width * image.height), dtype=np.float64)
    x[:d] = feats.reshape(d, -1)
    x[d] = 1.0
    logits = model.weights.astype(np.float64) @ x
    probs = softmax_logits(logits).reshape(model.num_classes, image.width, image.height)
    return ProbabilityMap(probs)


def entropy_map(p: ProbabilityMap) -> EntropyMap:
    """Shannon entropy per pixel in nats, with 0 * ln 0 := 0."""
    probs = p.probs
    terms = np.where(probs > 0.0, probs * np.log(np.maximum(probs, _PROB_CLAMP)), 0.0)
    return EntropyMap(np.maximum(-terms.sum(axis=0), 0.0))


# ---------------------------------------------------------------------------
# Checkpoints: JSON header + base64 little-endian f32 arrays
# ---------------------------------------------------------------------------


def _encode_f32(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a.astype("<f4")).tobytes()).decode("ascii")


def _decode_f32(s: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def save_model(model: BaselineModel, path) -> None:
    doc = {
        "bands": model.bands,
        "num_classes": model.num_classes,
        "features": model.features,
        "window": model.window,
        "step": model.step,
        "weights": _encode_f32(model.weights),
        "m": _encode_f32(model.m),
        "v": _encode_f32(model.v),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh)


def load_model(path) -> BaselineModel:
    with open(path, encoding="ascii") as fh:
        doc = json.load(fh)
    shape = (doc["num_classes"], doc["features"] + 1)
    return BaselineModel(
        weights=_decode_f32(doc["weights"], shape),
        m=_decode_f32(doc["m"], shape),
        v=_decode_f32(doc["v"], shape),
        step=int(doc["step"]),
        window=int(doc["window"]),
        bands=int(doc["bands"]),
        num_classes=int(doc["num_classes"]),
    )
