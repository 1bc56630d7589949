"""Run orchestration: configuration schema, the training loop, evaluation,
the gradient-check harness, the five-row ablation, and hyperparameter sweeps.

Every run directory receives the verbatim config, a deterministic
``metrics.csv`` (pure function of config + seed), wall-clock times in a
separate ``timing.csv``, the checkpoint, a top-k dump, and figures.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .data import (PROMPT_PHRASE, Dataset, build_tokenizer, generate_dataset,
                   materialize, sample_batch)
from .errors import ConfigError, NumericError
from .loss import LossConfig, match_matrix, sdm_total
from .model import (DualEncoder, ModelConfig, closed_form_trainable,
                    count_params, desk_config, similarity_matrix)
from .optim import Adam
from .retrieval import compute_metrics, dump_top_k, rank_gallery
from .rng import derive_seed
from .tokenizer import Tokenizer

ABLATION_ROWS = (
    ("zero-shot", dict(use_bpt=False, use_upt=False, use_dat=False)),
    ("+UPT", dict(use_bpt=False, use_upt=True, use_dat=False)),
    ("+BPT", dict(use_bpt=True, use_upt=False, use_dat=False)),
    ("+DAT", dict(use_bpt=False, use_upt=False, use_dat=True)),
    ("+BPT+DAT", dict(use_bpt=True, use_upt=False, use_dat=True)),
)

SWEEP_AXES = ("prompt_length", "prompt_depth")


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(
            f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


@dataclass
class DataConfig:
    n_identities: int = 16
    images_per_id: int = 6
    captions_per_image: int = 4
    noise_std: float = 0.1
    seed: int = 7

    def __post_init__(self):
        if self.n_identities < 2:
            raise ConfigError("need at least 2 identities for retrieval")


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 3e-4
    batch_size: int = 32
    seed: int = 7
    sampler: str = "identity-aware"
    instances_per_id: int = 2
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.sampler not in ("uniform", "identity-aware"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "identity-aware" \
                and self.batch_size % self.instances_per_id:
            raise ConfigError(
                f"batch size {self.batch_size} not divisible by "
                f"{self.instances_per_id} instances per identity")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=desk_config)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "loss": {"tau": self.loss.tau, "eps": self.loss.eps},
            "data": {f.name: getattr(self.data, f.name)
                     for f in fields(DataConfig)},
            "train": {f.name: getattr(self.train, f.name)
                      for f in fields(TrainConfig)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"model", "loss", "data", "train"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            model=ModelConfig.from_dict(d.get("model", {})) if "model" in d
            else desk_config(),
            loss=_from_dict(LossConfig, d.get("loss", {})),
            data=_from_dict(DataConfig, d.get("data", {})),
            train=_from_dict(TrainConfig, d.get("train", {})),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(d)


def reference_config(**train_overrides) -> RunConfig:
    """The fixed desk-scale reference run (seed 7 throughout)."""
    cfg = RunConfig(model=desk_config(seed=7), loss=LossConfig(),
                    data=DataConfig(seed=7), train=TrainConfig(seed=7))
    for key, val in train_overrides.items():
        setattr(cfg.train, key, val)
    return cfg


# -- pipeline assembly --------------------------------------------------------


@dataclass
class Pipeline:
    cfg: RunConfig
    tokenizer: Tokenizer
    dataset: Dataset
    model: DualEncoder


def build_pipeline(cfg: RunConfig) -> Pipeline:
    tokenizer = build_tokenizer(max_len=cfg.model.max_text_len)
    if tokenizer.vocab_size > cfg.model.vocab_size:
        raise ConfigError(
            f"model vocab {cfg.model.vocab_size} smaller than tokenizer "
            f"vocab {tokenizer.vocab_size}")
    dataset = generate_dataset(
        cfg.data.n_identities, cfg.data.images_per_id,
        cfg.data.captions_per_image, cfg.data.seed,
        noise_std=cfg.data.noise_std)
    phrase = tokenizer.content_ids(PROMPT_PHRASE)
    model = DualEncoder(cfg.model, phrase_token_ids=phrase)
    return Pipeline(cfg, tokenizer, dataset, model)


def batch_loss(model: DualEncoder, batch, loss_cfg: LossConfig):
    """Bidirectional matching loss for one aligned image/caption batch."""
    image_feats = model.encode_image(batch.images).feature
    text_feats = model.encode_text(batch.token_ids).feature
    sim = similarity_matrix(image_feats, text_feats)
    return sdm_total(sim, match_matrix(batch.identities), loss_cfg)


def fit_epoch(pipe: Pipeline, optimizer: Adam, records, epoch: int,
              context: str = "") -> list[float]:
    """One epoch of Adam on the trainable partition; returns step losses.

    Batch draws are seeded per (train seed, epoch, step) so any non-finite
    loss can name the exact batch that produced it.
    """
    cfg = pipe.cfg
    steps = max(1, len(records) // cfg.train.batch_size)
    step_losses = []
    for step_i in range(steps):
        batch_seed = derive_seed(cfg.train.seed, f"batch.{epoch}.{step_i}")
        rng = np.random.Generator(np.random.PCG64(batch_seed))
        batch = sample_batch(
            records, cfg.train.batch_size, rng, pipe.tokenizer,
            cfg.data.noise_std, sampler=cfg.train.sampler,
            instances_per_id=cfg.train.instances_per_id)
        loss = batch_loss(pipe.model, batch, cfg.loss)
        value = loss.item()
        if not np.isfinite(value):
            where = f" in {context}" if context else ""
            raise NumericError(
                f"non-finite loss{where} at epoch {epoch} step {step_i} "
                f"(batch seed {batch_seed})")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        step_losses.append(value)
    return step_losses


# -- evaluation ---------------------------------------------------------------


def _gallery_records(records):
    """One record per distinct image, ordered by (identity, image index)."""
    seen = {}
    for r in records:
        seen.setdefault((r.identity, r.image_index), r)
    return [seen[k] for k in sorted(seen)]


def evaluate(model: DualEncoder, dataset: Dataset, tokenizer: Tokenizer,
             split: str = "test", direction: str = "t2i", top_k: int = 10):
    """Rank the split's image gallery against every caption query (or the
    reverse under ``direction='i2t'``) and score it."""
    records = dataset.split(split)
    if not records:
        raise ConfigError(f"split {split!r} is empty")
    gallery = _gallery_records(records)
    gallery_batch = materialize(gallery, tokenizer, dataset.noise_std)
    query_batch = materialize(records, tokenizer, dataset.noise_std)

    with ad.no_grad():
        image_feats = model.encode_image(gallery_batch.images).feature.data
        text_feats = model.encode_text(query_batch.token_ids).feature.data

    if direction == "t2i":
        sim = text_feats @ image_feats.T
        query_ids, gallery_ids = query_batch.identities, gallery_batch.identities
    elif direction == "i2t":
        sim = image_feats @ text_feats.T
        query_ids, gallery_ids = gallery_batch.identities, query_batch.identities
    else:
        raise ConfigError(f"unknown direction {direction!r}")

    rankings = [rank_gallery(sim[i], gallery_ids, query_ids[i], query_index=i)
                for i in range(sim.shape[0])]
    return compute_metrics(rankings), rankings


# -- the training loop --------------------------------------------------------


def _format_row(epoch, loss_value, report) -> str:
    loss_text = "" if loss_value is None else f"{loss_value:.12g}"
    return (f"{epoch},{loss_text},{report.rank1:.12g},{report.rank5:.12g},"
            f"{report.rank10:.12g},{report.mean_ap:.12g}")


def train_run(cfg: RunConfig, out_dir, quiet: bool = False) -> dict:
    """Train per config, writing logs/checkpoint/figures into ``out_dir``.

    Returns a summary dict (final metrics, losses, parameter counts).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")

    pipe = build_pipeline(cfg)
    model, dataset, tokenizer = pipe.model, pipe.dataset, pipe.tokenizer
    optimizer = Adam(model.store, lr=cfg.train.lr)
    train_records = dataset.split("train")
    if not train_records and cfg.train.epochs > 0:
        raise ConfigError("train split is empty")

    metric_rows = []
    timing_rows = []
    losses = []

    report, _ = evaluate(model, dataset, tokenizer)
    metric_rows.append(_format_row(0, None, report))

    for epoch in range(1, cfg.train.epochs + 1):
        started = time.perf_counter()
        step_losses = fit_epoch(pipe, optimizer, train_records, epoch)
        losses.append(float(np.mean(step_losses)))

        if epoch % cfg.train.eval_every == 0 or epoch == cfg.train.epochs:
            report, _ = evaluate(model, dataset, tokenizer)
            metric_rows.append(_format_row(epoch, losses[-1], report))
        timing_rows.append(f"{epoch},{time.perf_counter() - started:.6f}")
        if not quiet and (epoch % 25 == 0 or epoch == cfg.train.epochs):
            print(f"epoch {epoch}: loss {losses[-1]:.4f} "
                  f"rank1 {report.rank1:.4f} mAP {report.mean_ap:.4f}")

    report, rankings = evaluate(model, dataset, tokenizer)

    header = "epoch,train_loss,rank1,rank5,rank10,map"
    (out / "metrics.csv").write_text("\n".join([header] + metric_rows) + "\n")
    (out / "timing.csv").write_text(
        "\n".join(["epoch,seconds"] + timing_rows) + "\n")
    ckpt.save(model.store, out / "model.ckpt")
    dump_top_k(rankings, out / "topk.jsonl")

    from . import plots
    plots.training_curves(metric_rows, out / "training_curves.png")

    counts = model.store.counts()
    summary = {
        "final": report.as_dict(),
        "first_epoch_loss": losses[0] if losses else None,
        "final_loss": losses[-1] if losses else None,
        "epochs": cfg.train.epochs,
        "trainable_params": counts["trainable"],
        "frozen_params": counts["frozen"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# -- verification harnesses ---------------------------------------------------


def gradient_check(cfg: RunConfig | None = None, n_coords: int = 600,
                   step: float = 1e-5, batch_size: int = 4,
                   tolerance: float = 1e-4, seed: int = 0) -> dict:
    """Analytic vs central finite-difference gradients of the full batch
    loss, sampled over every trainable tensor.

    Relative error uses max(|analytic|, |numeric|, 1e-8) in the denominator;
    coordinates where both sides are below 1e-10 count as agreeing.
    """
    if cfg is None:
        cfg = reference_config()
    pipe = build_pipeline(cfg)
    model, dataset, tokenizer = pipe.model, pipe.dataset, pipe.tokenizer
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "grad-batch")))
    batch = sample_batch(dataset.split("train"), batch_size, rng, tokenizer,
                         cfg.data.noise_std, sampler="uniform")

    loss = batch_loss(model, batch, cfg.loss)
    model.store.zero_grad()
    loss.backward()
    trainable = list(model.store.trainable_items())
    analytic = {name: t.grad.copy() for name, t in trainable}

    frozen_with_grad = [name for name, t, frozen in model.store.items()
                        if frozen and t.grad is not None]

    coord_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "coords")))
    per_tensor = max(1, int(np.ceil(n_coords / len(trainable))))
    checks = []
    for name, tensor in trainable:
        flat = tensor.data.reshape(-1)
        size = flat.size
        picks = coord_rng.choice(size, size=min(per_tensor, size), replace=False)
        for idx in picks:
            idx = int(idx)
            original = flat[idx]
            flat[idx] = original + step
            with ad.no_grad():
                up = batch_loss(model, batch, cfg.loss).item()
            flat[idx] = original - step
            with ad.no_grad():
                down = batch_loss(model, batch, cfg.loss).item()
            flat[idx] = original
            numeric = (up - down) / (2 * step)
            exact = analytic[name].reshape(-1)[idx]
            if abs(exact) < 1e-10 and abs(numeric) < 1e-10:
                rel = 0.0
            else:
                rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            checks.append((name, idx, float(exact), float(numeric), float(rel)))

    failures = [c for c in checks if c[4] > tolerance]
    return {
        "n_checked": len(checks),
        "max_rel_err": max(c[4] for c in checks),
        "tolerance": tolerance,
        "failures": failures,
        "frozen_with_grad": frozen_with_grad,
        "checked_names": sorted({c[0] for c in checks}),
        "passed": not failures and not frozen_with_grad,
    }


# -- ablation and sweeps ------------------------------------------------------


def _variant_config(base: RunConfig, flags: dict) -> RunConfig:
    model = ModelConfig.from_dict({**base.model.to_dict(), **flags})
    return RunConfig(model=model, loss=base.loss, data=base.data,
                     train=base.train)


def run_ablation(base: RunConfig, out_dir=None, quiet: bool = False) -> list[dict]:
    """Train each transfer-method variant on identical data and seed."""
    rows = []
    for name, flags in ABLATION_ROWS:
        cfg = _variant_config(base, flags)
        pipe = build_pipeline(cfg)
        if name != "zero-shot":
            optimizer = Adam(pipe.model.store, lr=cfg.train.lr)
            records = pipe.dataset.split("train")
            for epoch in range(1, cfg.train.epochs + 1):
                fit_epoch(pipe, optimizer, records, epoch, context=f"row {name!r}")
        report, _ = evaluate(pipe.model, pipe.dataset, pipe.tokenizer)
        counts = pipe.model.store.counts()
        row = {"variant": name, "trainable_params": counts["trainable"],
               **report.as_dict()}
        rows.append(row)
        if not quiet:
            print(f"{name}: rank1 {report.rank1:.4f} mAP {report.mean_ap:.4f} "
                  f"trainable {counts['trainable']}")

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = "variant,trainable_params,rank1,rank5,rank10,map"
        lines = [header] + [
            f"{r['variant']},{r['trainable_params']},{r['rank1']:.12g},"
            f"{r['rank5']:.12g},{r['rank10']:.12g},{r['mAP']:.12g}"
            for r in rows]
        (out / "ablation.csv").write_text("\n".join(lines) + "\n")
        (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
        from . import plots
        plots.ablation_chart(rows, out / "ablation.png")
    return rows


def run_sweep(base: RunConfig, axis: str, values, out_dir=None,
              quiet: bool = False) -> list[dict]:
    """One full training run per axis value, shared seed and data."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    rows = []
    for value in values:
        value = int(value)
        if axis == "prompt_depth" and value > base.model.layers:
            raise ConfigError(
                f"prompt depth {value} exceeds {base.model.layers} layers")
        cfg = _variant_config(base, {axis: value})
        pipe = build_pipeline(cfg)
        optimizer = Adam(pipe.model.store, lr=cfg.train.lr)
        records = pipe.dataset.split("train")
        for epoch in range(1, cfg.train.epochs + 1):
            fit_epoch(pipe, optimizer, records, epoch, context=f"{axis}={value}")
        report, _ = evaluate(pipe.model, pipe.dataset, pipe.tokenizer)
        counts = pipe.model.store.counts()
        rows.append({
            "value": value, "rank1": report.rank1, "mAP": report.mean_ap,
            "trainable_params": counts["trainable"],
            "closed_form": closed_form_trainable(cfg.model),
        })
        if not quiet:
            print(f"{axis}={value}: rank1 {report.rank1:.4f} "
                  f"mAP {report.mean_ap:.4f}")

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["value,rank1,map"] + [
            f"{r['value']},{r['rank1']:.12g},{r['mAP']:.12g}" for r in rows]
        (out / "sweep.csv").write_text("\n".join(lines) + "\n")
        from . import plots
        plots.sweep_curve(axis, rows, out / "sweep.png")
    return rows


def audit_params(model_cfg: ModelConfig) -> dict:
    """Plan-based counts plus the closed form, for the parameter report."""
    counts = count_params(model_cfg)
    counts["closed_form_trainable"] = closed_form_trainable(model_cfg)
    counts["match"] = counts["closed_form_trainable"] == counts["trainable"]
    return counts
