"""Mini-batch training loop with per-epoch metrics and checkpointing."""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import ValidationError
from ..store import atomic_write
from .checkpoint import Checkpoint, save_checkpoint
from .losses import MetricsRecord, ce_parts, evaluate
from .model import ModelSpec, backward, build_model, forward
from .optim import AdamState, Hyperparams, adam_step
from .rng import derive_stream


def _check_warm_start(spec: ModelSpec, warm: Checkpoint) -> None:
    if warm.spec.architecture_id != spec.architecture_id:
        raise ValidationError("warm start requires the same architecture")
    if warm.spec.tasks != spec.tasks:
        raise ValidationError("warm start requires identical tasks")
    if warm.spec.in_channels != spec.in_channels:
        raise ValidationError("warm start requires the same channel count")


def _train_batch(spec, params, batch, hp, state):
    """Forward/backward over one batch; returns the summed task losses.

    Valid-pixel normalization pools over the batch per task, and gradient
    accumulation walks examples in sorted tile order so the result does
    not depend on how the batch was assembled.
    """
    ordered = sorted(batch, key=lambda ex: (ex.tile.y, ex.tile.x))
    n_tot = {name: 0 for name, _ in spec.tasks}
    for ex in ordered:
        for i, (name, _) in enumerate(spec.tasks):
            n_tot[name] += int((ex.labels.planes[i] != 255).sum())

    loss = 0.0
    grad_acc = None
    for ex in ordered:
        logits, cache = forward(spec, params, ex.image, want_cache=True)
        dlogits = {}
        for i, (name, _) in enumerate(spec.tasks):
            nll, n, gsum = ce_parts(logits[name], ex.labels.planes[i])
            if n_tot[name]:
                loss += nll / n_tot[name]
                dlogits[name] = gsum / n_tot[name]
            else:
                dlogits[name] = gsum
        g = backward(spec, params, cache, dlogits)
        if grad_acc is None:
            grad_acc = g
        else:
            for k in grad_acc:
                grad_acc[k] += g[k]
    adam_step(params, grad_acc, state, hp)
    return loss


def train(train_examples, val_examples, spec: ModelSpec, hp: Hyperparams,
          warm_start: Checkpoint | None = None, checkpoint_every: int = 5,
          out_dir: str | None = None, progress=None):
    """Returns (final Checkpoint, metric history).

    With a warm start, parameters and optimizer state continue from the
    given checkpoint; zero epochs returns it unchanged apart from the
    epoch/metrics bookkeeping.
    """
    if warm_start is not None:
        _check_warm_start(spec, warm_start)
        params = {k: v.copy() for k, v in warm_start.params.items()}
        state = warm_start.optimizer_state or AdamState.for_params(params)
        state = AdamState(m={k: v.copy() for k, v in state.m.items()},
                          v={k: v.copy() for k, v in state.v.items()}, t=state.t)
        start_epoch = warm_start.epoch
        snapshot = warm_start.metrics_snapshot
    else:
        params = build_model(spec, hp.init_seed)
        state = AdamState.for_params(params)
        start_epoch = 0
        snapshot = None

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    history: list[MetricsRecord] = []

    def emit_checkpoint(epoch):
        ckpt = Checkpoint(spec=spec, params=params, epoch=epoch,
                          metrics_snapshot=snapshot, optimizer_state=state)
        if out_dir:
            save_checkpoint(ckpt, os.path.join(out_dir, f"ckpt_{epoch:04d}.trnk"))
        return ckpt

    last = None
    for e in range(1, hp.epochs + 1):
        epoch = start_epoch + e
        order = list(train_examples)
        derive_stream(hp.init_seed, epoch).shuffle(order)
        for i in range(0, len(order), hp.batch_size):
            _train_batch(spec, params, order[i:i + hp.batch_size], hp, state)
        train_rec = evaluate(spec, params, train_examples, epoch=epoch, split="train")
        val_rec = evaluate(spec, params, val_examples, epoch=epoch, split="val")
        history.extend([train_rec, val_rec])
        snapshot = val_rec.to_json()
        if progress is not None:
            progress(epoch, val_rec)
        if checkpoint_every and e % checkpoint_every == 0 and e != hp.epochs:
            emit_checkpoint(epoch)
        last = epoch

    if hp.epochs == 0:
        last = start_epoch
        if snapshot is None:
            snapshot = evaluate(spec, params, val_examples,
                                epoch=start_epoch, split="val").to_json()

    final = emit_checkpoint(last)
    if out_dir:
        lines = "".join(json.dumps(r.to_json()) + "\n" for r in history)
        hist_path = os.path.join(out_dir, "history.jsonl")
        if warm_start is not None and os.path.exists(hist_path):
            with open(hist_path, encoding="utf-8") as f:
                lines = f.read() + lines
        atomic_write(hist_path, lines.encode("utf-8"))
    return final, history
