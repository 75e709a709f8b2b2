"""Optimization loop: cover-stratified batches, scheduled regularization,
bounded adaptive updates, CSV logging, resumable checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import evaluate, objective
from .inference import binarize, select_threshold
from .network import Mode, NetConfig, TreeDetector, batch_to_tensor, load_checkpoint, save_checkpoint
from .optim import AdaBound
from .raster import PlotSample


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries epoch/batch context."""


def derive_seed(*parts: int) -> int:
    """Stable, well-mixed integer seed from (seed, epoch, ...) tuples."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class Schedules:
    """Pure functions of the epoch; all regularization strength lives here."""

    total_epochs: int = 100
    dropblock_max: float = 0.2
    dropblock_end_epoch: int = 50

    def dropblock(self, epoch: int) -> float:
        if self.dropblock_end_epoch <= 0:
            return self.dropblock_max
        return self.dropblock_max * min(epoch / self.dropblock_end_epoch, 1.0)

    def alpha(self, epoch: int) -> float:
        return objective.alpha_schedule(epoch)


@dataclass(frozen=True)
class TrainConfig:
    net: NetConfig = NetConfig()
    epochs: int = 100
    batch_size: int = 20
    base_rate: float = 1e-3
    final_rate: float = 2e-2
    rate_floor: float = 1e-4
    rate_ceiling: float = 2e-2
    beta1: float = 0.9
    beta2: float = 0.999
    optimizer_gamma: float = 1e-3
    optimizer_eps: float = 1e-8
    grad_clip_norm: float | None = None
    checkpoint_every: int = 25
    eval_every: int = 1
    dropblock_end_epoch: int = 50
    class_weight_beta: float = 0.999

    def schedules(self) -> Schedules:
        return Schedules(
            total_epochs=self.epochs,
            dropblock_max=self.net.dropblock_max,
            dropblock_end_epoch=self.dropblock_end_epoch,
        )


def equibatch(dataset: list[PlotSample], batch_size: int = 20, seed: int = 0,
              epoch: int = 0) -> list[list[int]]:
    """Batches stratified by tree-cover decile.

    Each batch draws batch_size/10 plots per decile; an unpopulated decile
    borrows from the nearest populated one (ties toward lower cover). Plots
    cycle through seeded shuffles, so within an epoch every plot of the
    largest decile appears exactly once and smaller deciles repeat.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if batch_size < 10 or batch_size % 10 != 0:
        raise ValueError(f"batch_size must be a positive multiple of 10, got {batch_size}")
    per_decile = batch_size // 10
    rng = np.random.default_rng([seed, epoch])

    members: list[list[int]] = [[] for _ in range(10)]
    for i, plot in enumerate(dataset):
        members[evaluate.cover_decile(plot.cover)].append(i)
    populated = [d for d in range(10) if members[d]]

    def nearest_populated(d: int) -> int:
        return min(populated, key=lambda p: (abs(p - d), p))

    streams = {}
    for d in populated:
        order = np.array(members[d])
        rng.shuffle(order)
        streams[d] = {"order": order, "pos": 0}

    def draw(d: int) -> int:
        s = streams[d]
        if s["pos"] >= len(s["order"]):
            rng.shuffle(s["order"])
            s["pos"] = 0
        value = int(s["order"][s["pos"]])
        s["pos"] += 1
        return value

    n_batches = -(-max(len(members[d]) for d in populated) // per_decile)
    batches = []
    for _ in range(n_batches):
        batch = []
        for d in range(10):
            source = d if d in streams else nearest_populated(d)
            batch.extend(draw(source) for _ in range(per_decile))
        batches.append(batch)
    return batches


@dataclass
class TrainResult:
    out_dir: Path
    log_path: Path
    checkpoint_dir: Path
    epochs_run: int
    threshold: float | None
    final_metrics: dict = field(default_factory=dict)


def _dataset_labels(dataset: list[PlotSample]) -> np.ndarray:
    return np.stack([np.asarray(p.label.values) for p in dataset])


def _eval_predictions(model: TreeDetector, dataset: list[PlotSample],
                      chunk: int = 64) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    outs = []
    with torch.no_grad():
        for start in range(0, len(dataset), chunk):
            stacks = [p.stack for p in dataset[start : start + chunk]]
            x = batch_to_tensor(stacks, dtype)
            outs.append(model(x, Mode.eval()).numpy().astype(np.float64))
    return np.concatenate(outs, axis=0)


def _train_accuracy(probs: np.ndarray, labels: np.ndarray,
                    threshold: float = 0.5) -> tuple[float | None, float | None]:
    total = evaluate.ToleranceConfusion(0, 0, 0, 0)
    for p, y in zip(probs, labels):
        total = total + evaluate.tolerant_confusion(y, binarize(p, threshold).values)
    return evaluate.users_producers(total)


def save_training_checkpoint(out_dir, model: TreeDetector, optimizer: AdaBound,
                             epoch: int, threshold: float | None = None) -> Path:
    out_dir = Path(out_dir)
    save_checkpoint(model, out_dir, epoch=epoch, threshold=threshold)
    arrays = optimizer.state_arrays()
    entries, blobs, offset = [], [], 0
    for name, tensor in arrays.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    (out_dir / "optim.bin").write_bytes(b"".join(blobs))
    (out_dir / "trainer_state.json").write_text(
        json.dumps({"epochs_completed": epoch, "optim_tensors": entries}, indent=2) + "\n"
    )
    return out_dir


def load_training_checkpoint(ckpt_dir, cfg: TrainConfig) -> tuple[TreeDetector, AdaBound, int, float | None]:
    ckpt_dir = Path(ckpt_dir)
    model, manifest = load_checkpoint(ckpt_dir)
    optimizer = _make_optimizer(model, cfg)
    state_path = ckpt_dir / "trainer_state.json"
    epochs_completed = manifest.get("epoch", 0)
    if state_path.exists():
        state = json.loads(state_path.read_text())
        epochs_completed = state["epochs_completed"]
        raw = (ckpt_dir / "optim.bin").read_bytes()
        arrays = {}
        for entry in state["optim_tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=entry["offset"])
            arrays[entry["name"]] = torch.as_tensor(arr.copy().reshape(shape))
        optimizer.load_state_arrays(arrays)
    return model, optimizer, epochs_completed, manifest.get("threshold")


def _make_optimizer(model: TreeDetector, cfg: TrainConfig) -> AdaBound:
    return AdaBound(
        model.parameters(),
        base_rate=cfg.base_rate,
        final_rate=cfg.final_rate,
        rate_floor=cfg.rate_floor,
        rate_ceiling=cfg.rate_ceiling,
        betas=(cfg.beta1, cfg.beta2),
        gamma=cfg.optimizer_gamma,
        eps=cfg.optimizer_eps,
    )


LOG_HEADER = "epoch,ce,bl,alpha,ua,pa"


def _fmt(value: float | None) -> str:
    return "nan" if value is None else repr(float(value))


def train(cfg: TrainConfig, dataset: list[PlotSample], seed: int, out_dir,
          resume=None) -> TrainResult:
    """Run the full loop; writes training_log.csv and periodic checkpoints.

    Resuming from a checkpoint directory reproduces the uninterrupted run
    bit for bit: batch order and stochastic masks derive from (seed, epoch),
    and model/optimizer state round-trips through float32 exactly.
    """
    if not dataset:
        raise ValueError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_root = out_dir / "checkpoints"
    log_path = out_dir / "training_log.csv"

    labels = _dataset_labels(dataset)
    counts = (int((labels == 0).sum()), int((labels == 1).sum()))
    weights = objective.class_weights(counts, beta=cfg.class_weight_beta)
    schedules = cfg.schedules()

    if resume is not None:
        model, optimizer, start_epoch, _ = load_training_checkpoint(resume, cfg)
    else:
        init_gen = torch.Generator().manual_seed(derive_seed(seed, 0xA11CE))
        model = TreeDetector(cfg.net, generator=init_gen)
        optimizer = _make_optimizer(model, cfg)
        start_epoch = 0

    append = resume is not None and log_path.exists()
    log_file = open(log_path, "a" if append else "w")
    if not append:
        log_file.write(LOG_HEADER + "\n")
        log_file.flush()

    threshold: float | None = None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            gen = torch.Generator().manual_seed(derive_seed(seed, epoch))
            mode = Mode.train(
                epoch=epoch, generator=gen, dropblock_prob=schedules.dropblock(epoch)
            )
            ce_sum = bl_sum = 0.0
            batches = equibatch(dataset, cfg.batch_size, seed, epoch=epoch)
            for batch_idx, batch in enumerate(batches):
                stacks = [dataset[i].stack for i in batch]
                batch_labels = labels[batch]
                x = batch_to_tensor(stacks)
                optimizer.zero_grad(set_to_none=True)
                probs = model(x, mode)
                terms = objective.combined_loss(probs, batch_labels, epoch, weights)
                if not torch.isfinite(terms.total):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch {batch_idx}: "
                        f"ce={float(terms.ce.detach())}, bl={float(terms.bl.detach())}"
                    )
                terms.total.backward()
                if cfg.grad_clip_norm is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
                optimizer.step()
                ce_sum += float(terms.ce.detach())
                bl_sum += float(terms.bl.detach())

            ua = pa = None
            if cfg.eval_every > 0 and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
                probs_all = _eval_predictions(model, dataset)
                ua, pa = _train_accuracy(probs_all, labels)
            n = max(len(batches), 1)
            log_file.write(
                f"{epoch},{_fmt(ce_sum / n)},{_fmt(bl_sum / n)},"
                f"{_fmt(schedules.alpha(epoch))},{_fmt(ua)},{_fmt(pa)}\n"
            )
            log_file.flush()
            if (epoch + 1) % cfg.checkpoint_every == 0 and (epoch + 1) < cfg.epochs:
                save_training_checkpoint(
                    ckpt_root / f"epoch_{epoch + 1:04d}", model, optimizer, epoch + 1
                )
    finally:
        log_file.close()

    probs_all = _eval_predictions(model, dataset)
    try:
        threshold = select_threshold(probs_all.ravel(), labels.ravel())
    except ValueError:
        threshold = None
    final_dir = ckpt_root / "final"
    save_training_checkpoint(final_dir, model, optimizer, cfg.epochs, threshold)

    ua, pa = _train_accuracy(probs_all, labels)
    pixel_acc = float(
        np.mean((probs_all >= 0.5).astype(np.int8) == labels)
    )
    return TrainResult(
        out_dir=out_dir,
        log_path=log_path,
        checkpoint_dir=final_dir,
        epochs_run=cfg.epochs - start_epoch,
        threshold=threshold,
        final_metrics={"ua": ua, "pa": pa, "pixel_accuracy": pixel_acc},
    )
