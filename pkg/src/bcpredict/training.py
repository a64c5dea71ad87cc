"""Mini-batch training with early stopping, and grid search over hyperparameters."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .analysis import evaluate
from .corpus import Instance
from .errors import DivergedLoss, EmptySplit, InvalidConfig
from .features import cache_path, cache_read, extract_window
from .model import BCModel, Batch, ModelConfig, Variant, config_hash

log = logging.getLogger(__name__)

# standard search ranges; GRID_FIXED fields are held constant while searching
GRID_RANGES = {
    "filter_widths": [(10,), (11,), (12,)],
    "n_filters": [16, 32, 64, 128],
    "dropout": [0.1, 0.3, 0.5],
    "n_frames": [48, 98, 148, 198],
    "batch_size": [16, 32, 64, 128],
}
GRID_FIXED = {"pool_rows": 10, "embedding_len": 5}


@dataclass
class TrainConfig:
    variant: str = "AC"
    filter_widths: tuple = (10,)
    n_filters: int = 16
    dropout: float = 0.1
    pool_rows: int = 10
    n_frames: int = 48
    batch_size: int = 32
    embedding_len: int = 5
    ffn_hidden: int = 5
    ffn_activation: str = "tanh"
    sli_slices: int = 5
    sli_out: int = 5
    fusion_hidden: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant.parse(getattr(self.variant, "value", self.variant)).value
        if isinstance(self.filter_widths, int):
            self.filter_widths = (self.filter_widths,)
        self.filter_widths = tuple(int(w) for w in self.filter_widths)
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidConfig("batch_size, max_epochs and patience must be >= 1")
        if self.learning_rate < 0:
            raise InvalidConfig("learning_rate must be >= 0")

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def check_grid_values(self) -> None:
        """Raise unless every searched field holds one of the searched grid values."""
        for key, allowed in GRID_RANGES.items():
            val = getattr(self, key)
            if key == "filter_widths":
                ok = set(val) <= {10, 11, 12}
            else:
                ok = val in allowed
            if not ok:
                raise InvalidConfig(f"{key}={val!r} outside the grid range {allowed}")
        for key, val in GRID_FIXED.items():
            if getattr(self, key) != val:
                raise InvalidConfig(f"{key} is fixed at {val} in grid mode")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    dev_accuracy: list = field(default_factory=list)
    dev_macro_f1: list = field(default_factory=list)
    best_epoch: int = -1  # 0-based
    stop_reason: str = ""


# -- data -------------------------------------------------------------------------

class WindowSource:
    """Looks up model input windows from in-memory sequences or a cache dir."""

    def __init__(self, source):
        self.source = source
        self._memo: dict[str, np.ndarray] = {}

    def sequence(self, audio_path: str) -> np.ndarray:
        stem = Path(audio_path).stem
        if stem not in self._memo:
            if isinstance(self.source, Mapping):
                self._memo[stem] = np.asarray(self.source[stem])
            else:
                self._memo[stem] = cache_read(cache_path(self.source, audio_path))
        return self._memo[stem]

    def windows(self, instances: Sequence[Instance], n_frames: int) -> np.ndarray:
        out = np.empty((len(instances), n_frames, 13))
        for i, inst in enumerate(instances):
            out[i] = extract_window(self.sequence(inst.audio_path), inst.t_ms, n_frames).values
        return out


def make_batch(model: BCModel, instances: Sequence[Instance], source, n_frames: int | None = None) -> Batch:
    src = source if isinstance(source, WindowSource) else WindowSource(source)
    n = n_frames or model.config.n_frames
    v = model.config.var
    return Batch(
        src.windows(instances, n),
        model.ids_to_index([i.speaker_id for i in instances], "speaker") if v.uses_speaker else None,
        model.ids_to_index([i.listener_id for i in instances], "listener") if v.uses_listener else None,
        np.array([i.label_index for i in instances], dtype=np.intp),
    )


def split_instances(instances: Sequence[Instance], split: str) -> list[Instance]:
    return [i for i in instances if i.split == split]


def build_model(config: TrainConfig, instances: Sequence[Instance]) -> BCModel:
    ids = {i.speaker_id for i in instances} | {i.listener_id for i in instances}
    listeners = {i.listener_id for i in instances}
    return BCModel(config.model_config(), sorted(ids), sorted(listeners), seed=config.seed)


# -- training -----------------------------------------------------------------------

def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *name.encode()]))


def train(config: TrainConfig, instances: Sequence[Instance], source,
          checkpoint: str | os.PathLike | None = None):
    """Train on the train split, select by dev macro-F1; returns (model, history)."""
    train_set = split_instances(instances, "train")
    dev_set = split_instances(instances, "dev")
    if not train_set:
        raise EmptySplit("train split is empty")
    if not dev_set:
        raise EmptySplit("dev split is empty")
    src = source if isinstance(source, WindowSource) else WindowSource(source)
    model = build_model(config, instances)
    tr = make_batch(model, train_set, src)
    dev = make_batch(model, dev_set, src)

    shuffle_rng = _stream(config.seed, "shuffle")
    dropout_rng = _stream(config.seed, "dropout")
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    hist = TrainHistory()
    best_f1, best_params, stale = -1.0, model.copy_params(), 0
    n = len(tr)
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, _ = model.loss_and_grads(tr.take(idx), train=True, rng=dropout_rng)
            # the probability floor keeps the loss finite, so check gradients too
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if not np.isfinite(loss) or bad:
                raise DivergedLoss(f"loss {loss}, non-finite gradients {bad} at epoch {epoch}, "
                                   f"batch starting {start}; learning_rate={config.learning_rate}")
            total += loss * len(idx)
            for k, p in model.params.items():
                v = velocity[k]
                v *= config.momentum
                v -= config.learning_rate * grads[k]
                p += v
        rep = evaluate(model, dev)
        hist.train_loss.append(total / n)
        hist.dev_accuracy.append(rep.accuracy)
        hist.dev_macro_f1.append(rep.macro_f1)
        log.debug("epoch %d loss %.4f dev acc %.4f f1 %.4f", epoch, total / n, rep.accuracy, rep.macro_f1)
        if rep.macro_f1 > best_f1:
            best_f1, best_params, stale = rep.macro_f1, model.copy_params(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                hist.stop_reason = "patience"
                break
    else:
        hist.stop_reason = "max_epochs"
    model.set_params(best_params)
    if checkpoint is not None:
        model.save(checkpoint, extra={"train_config": asdict(config),
                                      "config_hash": config_hash(asdict(config)),
                                      "best_epoch": hist.best_epoch})
    return model, hist


# -- grid search ---------------------------------------------------------------------

def enumerate_grid(grid: Mapping[str, Sequence], base: TrainConfig | None = None) -> list[TrainConfig]:
    """Cross-product of ``grid`` values applied on top of ``base``, in key order."""
    base = base or TrainConfig()
    keys = list(grid)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(keys) - known
    if unknown:
        raise InvalidConfig(f"unknown grid keys {sorted(unknown)}")
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        out.append(replace(base, **dict(zip(keys, combo))))
    return out


@dataclass
class GridRun:
    config: TrainConfig
    dev: object
    test: object | None
    checkpoint: str
    history: TrainHistory


def _run_one(args):
    i, cfg, instances, source, out_dir = args
    ckpt = str(Path(out_dir) / f"run{i:04d}.ckpt") if out_dir else ""
    model, hist = train(cfg, instances, source, ckpt or None)
    src = WindowSource(source)
    dev = evaluate(model, make_batch(model, split_instances(instances, "dev"), src))
    test_set = split_instances(instances, "test")
    test = evaluate(model, make_batch(model, test_set, src)) if test_set else None
    return GridRun(cfg, dev, test, ckpt, hist)


def _order_key(cfg: TrainConfig, keys):
    return tuple(getattr(cfg, k) for k in keys)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("BCPREDICT_THREADS", "1")))
    except ValueError:
        return 1


def grid_search(grid: Mapping[str, Sequence], instances: Sequence[Instance], source,
                base: TrainConfig | None = None, out_dir=None, restrict: bool = False) -> list[GridRun]:
    """Train every configuration in the grid; return runs ranked best first.

    Ranking: dev macro-F1, then dev accuracy (both descending), then the
    lexicographic order of the grid values. With ``restrict`` every config
    must stay inside ``GRID_RANGES`` / ``GRID_FIXED``.
    """
    configs = enumerate_grid(grid, base)
    if restrict:
        for c in configs:
            c.check_grid_values()
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(i, c, list(instances), source, out_dir) for i, c in enumerate(configs)]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(_run_one, jobs))
    else:
        runs = [_run_one(j) for j in jobs]
    keys = list(grid)
    runs.sort(key=lambda r: (-r.dev.macro_f1, -r.dev.accuracy, _order_key(r.config, keys)))
    return runs


GRID_FIELDS = [f.name for f in fields(TrainConfig)]


def grid_csv(runs: Sequence[GridRun], provenance: Mapping | None = None, base_dir=None) -> str:
    """One row per run, best first; checkpoint paths are made relative to ``base_dir``."""
    buf = io.StringIO()
    if provenance:
        buf.write("# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", *GRID_FIELDS, "best_epoch", "dev_accuracy", "dev_macro_f1",
                "test_accuracy", "test_macro_f1", "checkpoint"])
    for rank, r in enumerate(runs, 1):
        vals = []
        for k in GRID_FIELDS:
            v = getattr(r.config, k)
            vals.append(" ".join(map(str, v)) if isinstance(v, tuple) else v)
        t_acc = f"{r.test.accuracy:.6g}" if r.test else ""
        t_f1 = f"{r.test.macro_f1:.6g}" if r.test else ""
        ckpt = os.path.relpath(r.checkpoint, base_dir) if (base_dir and r.checkpoint) else r.checkpoint
        w.writerow([rank, *vals, r.history.best_epoch, f"{r.dev.accuracy:.6g}",
                    f"{r.dev.macro_f1:.6g}", t_acc, t_f1, ckpt])
    return buf.getvalue()
