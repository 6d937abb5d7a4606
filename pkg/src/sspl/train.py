"""Training loop, evaluation, and checkpoint-backed model restoration."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .config import TrainConfig
from .errors import ConfigurationError, NumericError, UsageError
from .metrics import EvalReport, per_sample_ciou, binarize_map
from .model import SSPLModel
from .optim import AdamW
from .prng import Stream
from .synthdata import AugmentConfig, augment_view, box_mask, load_dataset
from .tensor import Tensor, backward


def build_model(cfg, image_size=64, spec_shape=(32, 32)):
    return SSPLModel(cfg.model_config(image_size, spec_shape), seed=cfg.seed)


def make_optimizer(cfg, model):
    heads, rest = model.param_groups()
    return AdamW([(heads, cfg.lr_heads), (rest, cfg.lr_rest)], cfg.weight_decay, (cfg.beta1, cfg.beta2))


def augment_config(name):
    if name == "default":
        return AugmentConfig()
    if name == "none":
        return AugmentConfig.none()
    if name == "full":
        return AugmentConfig.full()
    raise ConfigurationError(f"unknown augmentation {name!r}")


def split_indices(n):
    """(train, validation) indices; every tenth sample (index % 10 == 9) is held out."""
    idx = np.arange(n)
    return idx[idx % 10 != 9], idx[idx % 10 == 9]


def draw_views(data, indices, aug, seed, epoch):
    """Two independently augmented views per sample, keyed by (seed, epoch, index)."""
    v1, v2 = [], []
    for i in indices:
        stream = Stream(seed, "views", epoch, int(i))
        pair = data[int(i)]
        v1.append(augment_view(pair, aug, stream.split(1))[0])
        v2.append(augment_view(pair, aug, stream.split(2))[0])
    return np.stack(v1), np.stack(v2)


def eval_views(data, aug=None):
    """Deterministic centre views and their ground-truth masks."""
    aug = aug or AugmentConfig()
    views, masks = [], []
    for i in range(len(data)):
        view, box = augment_view(data[i], aug, evaluation=True)
        views.append(view)
        masks.append(box_mask(box, view.shape[-1]))
    return np.stack(views), np.stack(masks)


def localization_maps(model, images, specs, cycles=None, batch_size=100):
    was_training = model.training
    model.eval()
    try:
        out = [
            model.localization_map(images[s : s + batch_size], specs[s : s + batch_size], cycles)
            for s in range(0, len(images), batch_size)
        ]
    finally:
        model.train(was_training)
    return np.concatenate(out)


def evaluate(model, data, pcm_T=None, batch_size=100, views=None):
    """EvalReport on centre views; ``pcm_T`` overrides the number of PCM cycles."""
    if len(data) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    mc = model.cfg
    if data.image_size != mc.image_size or data.spec_shape != tuple(mc.spec_shape):
        raise ConfigurationError(
            f"dataset dims {data.image_size}px / {data.spec_shape} do not match model "
            f"{mc.image_size}px / {tuple(mc.spec_shape)}"
        )
    images, masks = views if views is not None else eval_views(data)
    maps = localization_maps(model, images, data.spectrograms, pcm_T, batch_size)
    return EvalReport.from_cious([per_sample_ciou(binarize_map(m), g) for m, g in zip(maps, masks)])


@dataclass
class TrainResult:
    model: SSPLModel
    optimizer: AdamW
    log: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    stopped_early: bool = False
    checkpoint_path: str | None = None


def _batch_loss(model, cfg, data, idx, views):
    v1, v2 = views
    spec = Tensor(data.spectrograms[idx])
    if cfg.objective == "sspl":
        rep = model.sspl_step(Tensor(v1), Tensor(v2), spec, use_stop_gradient=cfg.use_stop_gradient)
        return rep.total, rep.collapse, 0
    labels = data.class_ids[idx] if cfg.objective == "infonce_masked" else None
    loss, skipped = model.contrastive_step(Tensor(v1), spec, labels, cfg.temperature)
    return loss, None, skipped


def train(cfg, data=None, log_path=None, checkpoint_path=None, progress=None):
    """Train on ``data`` (or ``cfg.dataset``) and return a TrainResult.

    Validation uses the held-out tenth of the training file; training stops
    once validation success@0.5 has not improved for ``cfg.patience`` epochs,
    and the best-scoring weights are kept.
    """
    cfg.validate()
    if data is None:
        if not cfg.dataset:
            raise UsageError("no dataset given")
        data = load_dataset(cfg.dataset)
    train_idx, val_idx = split_indices(len(data))
    if len(train_idx) < 2:
        raise UsageError("need at least 2 training samples")
    val = data.subset(val_idx) if len(val_idx) else None
    val_views = eval_views(val) if val is not None else None

    model = build_model(cfg, data.image_size, data.spec_shape)
    opt = make_optimizer(cfg, model)
    aug = augment_config(cfg.augmentation)
    result = TrainResult(model=model, optimizer=opt)
    best_score, best_state, wait = -1.0, None, 0
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = train_idx[Stream(cfg.seed, "shuffle", epoch).permutation(len(train_idx))]
            losses, collapses, skipped, steps = [], [], 0, 0
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                if len(idx) < 2:  # batch norm needs two samples
                    continue
                views = draw_views(data, idx, aug, cfg.seed, epoch)
                try:
                    loss, collapse, n_skip = _batch_loss(model, cfg, data, idx, views)
                    opt.zero_grad()
                    backward(loss)
                    opt.step()
                    _check_parameters(model)
                except NumericError as exc:
                    _dump_failure(cfg, epoch, b, idx, str(exc))
                    raise NumericError(f"non-finite value at epoch {epoch}, batch {b} (seed {cfg.seed}): {exc}") from None
                steps += 1
                skipped += n_skip
                losses.append(float(loss.data))
                if collapse is not None:
                    collapses.append(collapse)
            entry = {
                "epoch": epoch,
                "steps": steps,
                "loss": float(np.mean(losses)) if losses else None,
                "collapse": float(np.mean(collapses)) if collapses else None,
            }
            if cfg.objective != "sspl":
                entry["skipped_anchors"] = skipped
            if val is not None:
                rep = evaluate(model, val, views=val_views)
                entry["val_success"] = rep.ciou_at_half
                entry["val_auc"] = rep.auc
                score = rep.ciou_at_half
            else:
                score = -float(entry["loss"] or 0.0)
            result.log.append(entry)
            result.epochs_run = epoch
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                log_fh.flush()
            if progress:
                progress(entry)
            if score > best_score:
                best_score, best_state, wait = score, _snapshot(model, opt), 0
                result.best_epoch = epoch
            else:
                wait += 1
                if wait >= cfg.patience:
                    result.stopped_early = epoch < cfg.epochs
                    break
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        _restore(model, opt, best_state)
    if checkpoint_path:
        save_checkpoint(
            checkpoint_path,
            model,
            opt,
            config=checkpoint_config(cfg, data),
            epoch=result.best_epoch,
            cursor=result.epochs_run,
        )
        result.checkpoint_path = checkpoint_path
    return result


def _check_parameters(model):
    for name, p in model.named_parameters():
        if not np.isfinite(p.data).all():
            raise NumericError(f"parameter {name} became non-finite")


def _dump_failure(cfg, epoch, batch, idx, message):
    if not cfg.out_dir:
        return
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "nan_dump.json"), "w") as fh:
        json.dump(
            {"seed": cfg.seed, "epoch": epoch, "batch": batch, "indices": [int(i) for i in idx], "error": message},
            fh,
            indent=1,
        )


def _snapshot(model, opt):
    return (
        copy.deepcopy(model.state_dict()),
        {k: v.copy() for k, v in opt.m.items()},
        {k: v.copy() for k, v in opt.v.items()},
        opt.steps,
    )


def _restore(model, opt, state):
    weights, m, v, steps = state
    model.load_state_dict(weights)
    opt.m, opt.v, opt.steps = m, v, steps


def checkpoint_config(cfg, data):
    return {"train": cfg.to_dict(), "image_size": int(data.image_size), "spec_shape": list(data.spec_shape)}


def model_from_checkpoint(path, with_optimizer=False):
    """(model, TrainConfig[, optimizer]) rebuilt from a checkpoint file."""
    ck = load_checkpoint(path)
    try:
        cfg = TrainConfig.from_dict(ck.config["train"])
        image_size, spec_shape = ck.config["image_size"], tuple(ck.config["spec_shape"])
    except (KeyError, TypeError, UsageError) as exc:
        from .errors import FormatError

        raise FormatError(f"{path}: bad config echo ({exc})") from None
    model = build_model(cfg, image_size, spec_shape)
    opt = make_optimizer(cfg, model) if with_optimizer else None
    restore_into(ck, model, opt)
    model.eval()
    return (model, cfg, opt) if with_optimizer else (model, cfg)
