"""Random-search hyperparameter tuning over parallel trials."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from ..errors import ValidationError
from .optim import Hyperparams
from .rng import Lcg, derive_stream
from .train import train


def automl_search(train_examples, val_examples, spec, ranges: dict,
                  n_trials: int, parallelism: int, seed: int, epochs: int,
                  out_dir: str | None = None):
    """Returns (best Hyperparams, best Checkpoint, trial table).

    All hyperparameter draws come from one seeded stream before any trial
    starts, and each trial trains on its own substream keyed by (seed,
    trial index), so the winner and the table are identical for any
    parallelism. Best = minimal final validation loss, ties to the lower
    trial index.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    if parallelism < 1:
        raise ValidationError("parallelism must be >= 1")
    lr_range = ranges.get("learning_rate")
    batch_sizes = ranges.get("batch_size")
    if not lr_range or len(lr_range) != 2 or not (0 < lr_range[0] <= lr_range[1]):
        raise ValidationError("ranges.learning_rate must be (lo, hi) with 0 < lo <= hi")
    if not batch_sizes:
        raise ValidationError("ranges.batch_size must be a non-empty list")
    batch_sizes = sorted(int(b) for b in batch_sizes)

    rng = Lcg(seed)
    draws = []
    for i in range(n_trials):
        lr = rng.log_uniform(lr_range[0], lr_range[1])
        bs = rng.choice(batch_sizes)
        init_seed = derive_stream(seed, i).next_uint64()
        draws.append(Hyperparams(epochs=epochs, learning_rate=lr,
                                 batch_size=bs, init_seed=init_seed))

    def run(i):
        sub_dir = f"{out_dir}/trial_{i:03d}" if out_dir else None
        ckpt, history = train(train_examples, val_examples, spec, draws[i],
                              out_dir=sub_dir)
        val_loss = float(ckpt.metrics_snapshot["total_loss"])
        return ckpt, val_loss

    results = [None] * n_trials
    if parallelism == 1:
        for i in range(n_trials):
            results[i] = run(i)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = {i: pool.submit(run, i) for i in range(n_trials)}
            for i, fut in futures.items():
                results[i] = fut.result()

    table = []
    for i, (hp, (ckpt, val_loss)) in enumerate(zip(draws, results)):
        table.append({
            "trial_index": i,
            "learning_rate": hp.learning_rate,
            "batch_size": hp.batch_size,
            "init_seed": hp.init_seed,
            "final_val_loss": val_loss,
        })
    best_index = min(range(n_trials), key=lambda i: (results[i][1], i))
    return draws[best_index], results[best_index][0], table, best_index
