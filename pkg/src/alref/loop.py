"""Active-learning cycle orchestration and the repeated leave-one-out harness.

Each fold holds one pool image out for evaluation, simulates coarse labels
on the rest, and then alternates training, candidate scoring, selection and
oracle refinement for a fixed number of cycles. All randomness is derived
from (master seed, stream, repeat, fold, cycle) so runs replay exactly.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .coarse import CoarseSimConfig, simulate_coarse
from .oracle import RefinementLedger, refine
from .predictor import (BaselineModel, PredictorConfig, entropy_map, predict_proba, train)
from .raster import LabelRaster, MultiBandRaster
from .strategies import StrategyKind, sample_candidates, score_candidates, select_top_k
from .synthdata import SceneSpec, generate_pool

# Seed-derivation stream tags; never reuse one for a new purpose.
_STREAM_COARSE = 1
_STREAM_TRAIN = 2
_STREAM_CANDIDATES = 3
_STREAM_RS = 4
_STREAM_POOL = 5

CSV_COLUMNS = ("repeat", "fold", "cycle", "strategy", "accuracy",
               "acquisition_rate", "newly_refined", "seconds")


@dataclass
class Pool:
    images: list[MultiBandRaster]
    fine_labels: list[LabelRaster]

    def __post_init__(self) -> None:
        if len(self.images) != len(self.fine_labels):
            raise ValueError("images and labels differ in length")
        if len(self.images) < 2:
            raise ValueError("pool must have at least 2 images for leave-one-out")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return self.fine_labels[0].num_classes


@dataclass(frozen=True)
class SynthPoolSpec:
    """In-memory pool source: n_images scenes from a shared template."""

    n_images: int = 6
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(seed=0))
    seed: int | None = None  # None: derived from the master seed


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: StrategyKind
    n_candidates: int = 128
    k_select: int = 16
    cycles: int = 30
    repeats: int = 5
    candidate_size: int | None = None  # None: the predictor chip size
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    coarse: CoarseSimConfig = field(default_factory=lambda: CoarseSimConfig(seed=0))
    seed: int = 0
    predictor_backend: str = "baseline"  # or "sidecar"
    sidecar_cmd: str | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.k_select <= self.n_candidates:
            raise ValueError("need 1 <= k_select <= n_candidates")
        if self.cycles < 1 or self.repeats < 1:
            raise ValueError("cycles and repeats must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.predictor_backend not in ("baseline", "sidecar"):
            raise ValueError(f"unknown predictor_backend {self.predictor_backend!r}")
        if self.predictor_backend == "sidecar" and not self.sidecar_cmd:
            raise ValueError("sidecar backend requires sidecar_cmd")

    @property
    def effective_candidate_size(self) -> int:
        return self.candidate_size if self.candidate_size is not None else self.predictor.chip_size


@dataclass
class CycleRecord:
    repeat: int
    fold: int
    cycle: int
    strategy: str
    accuracy: float
    acquisition_rate: float
    newly_refined: int
    seconds: float


def derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed from the master seed and a stream path."""
    ss = np.random.SeedSequence([master, *path])
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, *path]))


def pixel_accuracy(predicted: LabelRaster, truth: LabelRaster) -> float:
    """Fraction of pixels with equal labels."""
    if (predicted.width, predicted.height) != (truth.width, truth.height):
        raise ValueError("label rasters have different extents")
    return float(np.mean(predicted.labels == truth.labels))


def acquisition_rate(ledger: RefinementLedger, total_training_pixels: int) -> float:
    """Refined pixels as a fraction of all training pixels."""
    if total_training_pixels <= 0:
        raise ValueError("total_training_pixels must be > 0")
    return ledger.refined_total / total_training_pixels


class _BaselineBackend:
    """In-process predictor backend."""

    def __init__(self, warm_start: bool):
        self.warm_start = warm_start
        self._model: BaselineModel | None = None

    def train(self, images, labels, pcfg: PredictorConfig) -> None:
        prev = self._model if self.warm_start else None
        self._model = train(images, labels, pcfg, model=prev)

    def predict_proba(self, image):
        if self._model is None:
            raise RuntimeError("predict before train")
        return predict_proba(self._model, image)

    def close(self) -> None:
        pass


class _SidecarBackend:
    """Out-of-process predictor speaking protocol v1 on a child process."""

    def __init__(self, cmd: str, num_classes: int):
        from .protocol import SidecarClient

        self.client = SidecarClient(cmd)
        self.num_classes = num_classes

    def train(self, images, labels, pcfg: PredictorConfig) -> None:
        cfg = pcfg.to_dict()
        cfg["num_classes"] = self.num_classes
        self.client.train(images, labels, cfg)

    def predict_proba(self, image):
        return self.client.predict_proba(image)

    def close(self) -> None:
        self.client.close()


def _make_backend(config: ExperimentConfig, num_classes: int):
    if config.predictor_backend == "sidecar":
        return _SidecarBackend(config.sidecar_cmd, num_classes)
    return _BaselineBackend(config.predictor.warm_start)


def run_fold(pool: Pool, config: ExperimentConfig, repeat: int, fold: int) -> list[CycleRecord]:
    """Run one (repeat, fold) experiment and return cycles + 1 records.

    The held-out image is never refined or trained on; its fine labels are
    used only for evaluation.
    """
    if not 0 <= fold < len(pool):
        raise ValueError(f"fold {fold} outside pool of {len(pool)}")
    train_indices = [i for i in range(len(pool)) if i != fold]
    train_images = [pool.images[i] for i in train_indices]
    fine = [pool.fine_labels[i] for i in train_indices]
    heldout_image = pool.images[fold]
    heldout_fine = pool.fine_labels[fold]

    # one repeat-derived seed: every training image gets the same enlargement
    # schedule, so the noise realization is a systematic bias of the pool
    ccfg = replace(config.coarse, seed=derive_seed(config.seed, _STREAM_COARSE, repeat))
    current = [simulate_coarse(lab, ccfg)[0] for lab in fine]

    dims = [(img.width, img.height) for img in train_images]
    ledger = RefinementLedger(dims)
    total_pixels = sum(w * h for w, h in dims)
    size = config.effective_candidate_size

    backend = _make_backend(config, pool.num_classes)
    records: list[CycleRecord] = []
    try:
        for cycle in range(config.cycles + 1):
            t0 = time.perf_counter()
            pcfg = replace(config.predictor,
                           seed=derive_seed(config.seed, _STREAM_TRAIN, repeat, fold, cycle))
            backend.train(train_images, current, pcfg)

            newly = 0
            if cycle > 0:
                entropies = None
                if config.strategy is StrategyKind.US:
                    entropies = [entropy_map(backend.predict_proba(img)) for img in train_images]
                cand_rng = derive_rng(config.seed, _STREAM_CANDIDATES, repeat, fold, cycle)
                candidates = sample_candidates(dims, config.n_candidates, size, cand_rng)
                rs_rng = derive_rng(config.seed, _STREAM_RS, repeat, fold, cycle)
                score_candidates(candidates, config.strategy, ledger.masks, entropies, rs_rng)
                ledger.cycle = cycle
                for idx in select_top_k(candidates, config.k_select):
                    r = candidates[idx].region
                    newly += refine(current[r.image_index], fine[r.image_index], ledger, r)

            predicted = LabelRaster(
                np.argmax(backend.predict_proba(heldout_image).probs, axis=0).astype(np.uint8),
                pool.num_classes)
            records.append(CycleRecord(
                repeat=repeat,
                fold=fold,
                cycle=cycle,
                strategy=config.strategy.value,
                accuracy=pixel_accuracy(predicted, heldout_fine),
                acquisition_rate=acquisition_rate(ledger, total_pixels),
                newly_refined=newly,
                seconds=time.perf_counter() - t0,
            ))
    finally:
        backend.close()
    return records


def load_pool(source: SynthPoolSpec, master_seed: int) -> Pool:
    seed = source.seed if source.seed is not None else derive_seed(master_seed, _STREAM_POOL)
    pairs = generate_pool(seed, source.n_images, source.scene)
    return Pool([img for img, _ in pairs], [lab for _, lab in pairs])


def run_experiment(config: ExperimentConfig, pool: Pool,
                   jobs: int = 1) -> list[CycleRecord]:
    """All repeats x folds of run_fold, records sorted (repeat, fold, cycle)."""
    tasks = [(r, f) for r in range(config.repeats) for f in range(len(pool))]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_run_fold_task, [(pool, config, r, f) for r, f in tasks]))
    else:
        chunks = [run_fold(pool, config, r, f) for r, f in tasks]
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda rec: (rec.repeat, rec.fold, rec.cycle))
    return records


def _run_fold_task(args) -> list[CycleRecord]:
    pool, config, repeat, fold = args
    return run_fold(pool, config, repeat, fold)


def records_to_csv(records: list[CycleRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow([
            rec.repeat, rec.fold, rec.cycle, rec.strategy,
            f"{rec.accuracy:.6f}", f"{rec.acquisition_rate:.6f}",
            rec.newly_refined, f"{rec.seconds:.3f}",
        ])
    return buf.getvalue()


def records_from_csv(text: str) -> list[CycleRecord]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"result CSV is missing columns {sorted(missing)}")
    return [
        CycleRecord(
            repeat=int(row["repeat"]),
            fold=int(row["fold"]),
            cycle=int(row["cycle"]),
            strategy=row["strategy"],
            accuracy=float(row["accuracy"]),
            acquisition_rate=float(row["acquisition_rate"]),
            newly_refined=int(row["newly_refined"]),
            seconds=float(row["seconds"]),
        )
        for row in reader
    ]
