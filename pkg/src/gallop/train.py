"""Losses, prompt dropout, SGD with momentum/weight decay/cosine annealing,
and the training loop.

The total loss is the sum of the global term (per-prompt mean cross-entropy
over the images each prompt keeps under dropout), the multiscale local term
(per-prompt mean cross-entropy at that prompt's scale), and an optional
diversity penalty on pairwise prompt encodings (off by default). Gradients
come from the reverse-mode tape in ``autodiff``; a finite-difference harness
(``gradcheck``) pins their correctness.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .encoder import encode_classes_t, encode_t
from .errors import ConfigError
from .head import ScaleSchedule
from .model import new_model


@dataclass
class DropoutPolicy:
    """Per-image random masking of prompts; at least one is always kept."""

    rate: float = 0.0
    apply_to_local: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")

    def keep_count(self, m):
        return max(1, int(math.floor((1.0 - self.rate) * m + 0.5)))


def sample_dropout(policy, batch_size, m, step=0):
    """(batch_size, m) 0/1 matrix; each row keeps exactly keep_count prompts,
    uniform without replacement. Deterministic given (policy.seed, step)."""
    mask = np.zeros((batch_size, m), dtype=np.float64)
    if m == 0:
        return mask
    keep = policy.keep_count(m)
    rng = np.random.default_rng([policy.seed, step])
    for row in range(batch_size):
        mask[row, rng.choice(m, size=keep, replace=False)] = 1.0
    return mask


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the reference recipe
    (batch 128, SGD momentum 0.9, weight decay 0.01, lr 0.002 cosine-annealed
    over 50 epochs, 4 global + 4 local prompts of 4 tokens, 75% dropout)."""

    batch_size: int = 128
    epochs: int = 50
    lr: float = 0.002
    weight_decay: float = 0.01
    momentum: float = 0.9
    tau: float = 0.01
    dropout: DropoutPolicy = field(default_factory=lambda: DropoutPolicy(rate=0.75))
    scales: ScaleSchedule = None
    lambda_div: float = 0.0
    seed: int = 0
    m: int = 4
    n: int = 4
    V: int = 4
    d_prime: int = 16
    encoder_seed: int = None

    def __post_init__(self):
        if self.scales is None:
            self.scales = ScaleSchedule(k1=1, delta_k=1, n=self.n)
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lambda_div < 0:
            raise ConfigError(f"lambda_div must be >= 0, got {self.lambda_div}")
        if self.m + self.n < 1:
            raise ConfigError("need at least one prompt (m + n >= 1)")
        if self.scales.n != self.n:
            raise ConfigError(
                f"scale schedule covers {self.scales.n} prompts, config has n={self.n}"
            )

    def to_dict(self):
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "momentum": self.momentum,
            "tau": self.tau,
            "dropout": {
                "rate": self.dropout.rate,
                "apply_to_local": self.dropout.apply_to_local,
            },
            "scales": {"k1": self.scales.k1, "delta_k": self.scales.delta_k},
            "lambda_div": self.lambda_div,
            "seed": self.seed,
            "m": self.m,
            "n": self.n,
            "V": self.V,
            "d_prime": self.d_prime,
            "encoder_seed": self.encoder_seed,
        }

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        drop = raw.pop("dropout", {})
        scales = raw.pop("scales", None)
        known = {f for f in cls.__dataclass_fields__ if f not in ("dropout", "scales")}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(
            dropout=DropoutPolicy(
                rate=drop.get("rate", 0.75),
                apply_to_local=drop.get("apply_to_local", False),
                seed=drop.get("seed", raw.get("seed", 0)),
            ),
            scales=None,
            **raw,
        )
        if scales is not None:
            cfg.scales = ScaleSchedule(
                k1=scales.get("k1", 1), delta_k=scales.get("delta_k", 1), n=cfg.n
            )
        return cfg


@dataclass
class Batch:
    """Float64 views of a slice of a dataset."""

    z_g: np.ndarray  # (B, d)
    z_l: np.ndarray  # (B, L, d)
    labels: np.ndarray  # (B,)

    @classmethod
    def from_dataset(cls, dataset, indices=None):
        zg = dataset.global_matrix()
        zl = dataset.local_tensor()
        y = dataset.labels()
        if indices is not None:
            zg, zl, y = zg[indices], zl[indices], y[indices]
        return cls(z_g=zg, z_l=zl, labels=y)

    def __len__(self):
        return self.labels.shape[0]


class ModelTensors:
    """One training step's view of the trainable parameters as tape leaves."""

    def __init__(self, model):
        self.model = model
        self.global_prompts = [ad.parameter(p) for p in model.prompts.global_prompts]
        self.local_prompts = [ad.parameter(p) for p in model.prompts.local_prompts]
        self.theta = ad.parameter(model.alignment.theta)

    def gradients(self):
        def collect(tensors, shape):
            if not tensors:
                return np.zeros(shape)
            return np.stack(
                [np.zeros(t.data.shape) if t.grad is None else t.grad for t in tensors]
            )

        return {
            "global_prompts": collect(
                self.global_prompts, self.model.prompts.global_prompts.shape
            ),
            "local_prompts": collect(
                self.local_prompts, self.model.prompts.local_prompts.shape
            ),
            "theta": np.zeros(self.theta.data.shape)
            if self.theta.grad is None
            else self.theta.grad,
        }


def _global_loss_t(tensors, batch, mask, tau):
    """Sum over global prompts of the mean CE over the images that kept them."""
    model = tensors.model
    tokens = model.class_tokens()
    total = ad.constant(0.0)
    for i, prompt in enumerate(tensors.global_prompts):
        kept = np.flatnonzero(mask[:, i])
        if kept.size == 0:
            continue
        text = encode_classes_t(model.encoder, prompt, tokens)  # (C, d)
        logits = ad.mul(
            ad.matmul(ad.constant(batch.z_g[kept]), ad.transpose(text)), 1.0 / tau
        )
        total = ad.add(total, ad.cross_entropy_mean(logits, batch.labels[kept]))
    return total


def _multiscale_loss_t(tensors, batch, tau, mask=None):
    """Sum over local prompts of the mean CE at that prompt's scale."""
    model = tensors.model
    if not tensors.local_prompts:
        return ad.constant(0.0)
    B, L, d = batch.z_l.shape
    model.scales.validate_for(L)
    tokens = model.class_tokens()
    flat = ad.constant(batch.z_l.reshape(B * L, d))
    aligned = ad.matmul(flat, ad.transpose(tensors.theta))
    total = ad.constant(0.0)
    for j, prompt in enumerate(tensors.local_prompts):
        kept = np.arange(B) if mask is None else np.flatnonzero(mask[:, j])
        if kept.size == 0:
            continue
        text = encode_classes_t(model.encoder, prompt, tokens)
        table = ad.matmul(aligned, ad.transpose(text))  # (B*L, C)
        sims = ad.topk_block_mean(table, L, model.scales.scales[j])  # (B, C)
        if kept.size != B:
            rows = ad.stack_rows([_row(sims, r) for r in kept])
        else:
            rows = sims
        logits = ad.mul(rows, 1.0 / tau)
        total = ad.add(total, ad.cross_entropy_mean(logits, batch.labels[kept]))
    return total


def _row(tensor, r):
    """Select one row of a 2-D tensor (gradient scatters back into the row)."""
    C = tensor.data.shape[1]
    sel = np.zeros((tensor.data.shape[0],))
    sel[r] = 1.0
    return ad.matmul(ad.constant(sel), tensor)


def diversity_from_embeddings(vectors):
    """Mean absolute pairwise inner product, ordered-pair normalization:
    (1 / (N(N-1))) * sum_{i<j} |<t_i, t_j>|."""
    N = len(vectors)
    if N < 2:
        raise ValueError("diversity needs at least two prompts")
    total = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            total += abs(float(np.dot(vectors[i], vectors[j])))
    return total / (N * (N - 1))


def _diversity_loss_t(tensors):
    model = tensors.model
    prompts = tensors.global_prompts + tensors.local_prompts
    N = len(prompts)
    if N < 2:
        raise ValueError("diversity needs at least two prompts")
    encoded = [encode_t(model.encoder, p, None) for p in prompts]
    total = ad.constant(0.0)
    for i in range(N):
        for j in range(i + 1, N):
            total = ad.add(total, ad.absolute(ad.matmul(encoded[i], encoded[j])))
    return ad.mul(total, 1.0 / (N * (N - 1)))


def _local_mask(config, batch_size, n, step):
    if not (config.dropout.apply_to_local and n > 0):
        return None
    # separate stream so toggling local dropout leaves the global masks alone
    local_policy = replace(config.dropout, seed=config.dropout.seed + 0x10CA1)
    return sample_dropout(local_policy, batch_size, n, step=step)


def _total_loss_t(tensors, batch, mask, tau, lambda_div, local_mask=None):
    loss = ad.add(
        _global_loss_t(tensors, batch, mask, tau),
        _multiscale_loss_t(tensors, batch, tau, mask=local_mask),
    )
    if lambda_div > 0:
        loss = ad.add(loss, ad.mul(_diversity_loss_t(tensors), lambda_div))
    return loss


# Plain-number wrappers around the tape builders.


def cross_entropy(probabilities, label):
    """-log p[label] for an already-normalized probability vector."""
    p = np.asarray(probabilities, dtype=np.float64)
    if label < 0 or label >= p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(p[label], np.finfo(np.float64).tiny)))


def global_loss(model, batch, mask):
    return float(_global_loss_t(ModelTensors(model), batch, mask, model.tau).data)


def multiscale_loss(model, batch, mask=None):
    return float(_multiscale_loss_t(ModelTensors(model), batch, model.tau, mask=mask).data)


def diversity_loss(model):
    return float(_diversity_loss_t(ModelTensors(model)).data)


def total_loss(model, batch, mask, lambda_div=0.0, local_mask=None):
    return float(
        _total_loss_t(ModelTensors(model), batch, mask, model.tau, lambda_div,
                      local_mask=local_mask).data
    )


def backward(model, batch, mask, lambda_div=0.0, local_mask=None):
    """Evaluate the total loss and return (loss, gradients) for the trainable
    tensors; frozen parameters (encoder, class tokens) get no entry."""
    tensors = ModelTensors(model)
    loss = _total_loss_t(tensors, batch, mask, model.tau, lambda_div,
                         local_mask=local_mask)
    ad.backward(loss)
    return float(loss.data), tensors.gradients()


def cosine_lr(step, total_steps, lr_max):
    """Cosine annealing from lr_max at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_max * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def sgd_step(params, grads, lr, momentum=0.9, weight_decay=0.01, velocity=None):
    """v <- momentum*v + (grad + wd*param); param <- param - lr*v. In place;
    returns the velocity state. Weight decay pulls every parameter toward
    zero, including the alignment map."""
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {key}")
        v = velocity[key]
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return velocity


@dataclass
class EpochStats:
    epoch: int
    loss_total: float
    loss_global: float
    loss_local: float
    loss_div: float
    train_top1: float
    lr: float

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "loss_total": self.loss_total,
            "loss_global": self.loss_global,
            "loss_local": self.loss_local,
            "loss_div": self.loss_div,
            "train_top1": self.train_top1,
            "lr": self.lr,
        }


def train(dataset, config):
    """Train a fresh model on the dataset; returns (model, per-epoch trace).

    Fully deterministic given config.seed: init, shuffling and dropout all
    derive from it. Configuration errors (e.g. scales exceeding L) surface
    before the first step.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    config.scales.validate_for(dataset.L)

    model = new_model(
        seed=config.seed,
        m=config.m,
        n=config.n,
        V=config.V,
        d_prime=config.d_prime,
        d=dataset.d,
        scales=config.scales,
        tau=config.tau,
        encoder_seed=config.encoder_seed,
        num_classes=dataset.num_classes,
    )
    dropout = replace(config.dropout, seed=config.dropout.seed or config.seed)

    from .scoring import evaluate_top1  # local import; scoring depends on model only

    full = Batch.from_dataset(dataset)
    N = len(full)
    steps_per_epoch = (N + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * steps_per_epoch
    shuffle_rng = np.random.default_rng([config.seed, 0x5AFF1E])

    params = {
        "global_prompts": model.prompts.global_prompts,
        "local_prompts": model.prompts.local_prompts,
        "theta": model.alignment.theta,
    }
    velocity = None
    trace = []
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(N)
        sums = {"total": 0.0, "global": 0.0, "local": 0.0, "div": 0.0}
        last_lr = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = Batch(z_g=full.z_g[idx], z_l=full.z_l[idx], labels=full.labels[idx])
            mask = sample_dropout(dropout, len(batch), config.m, step=step)
            local_mask = _local_mask(config, len(batch), config.n, step)

            tensors = ModelTensors(model)
            g_loss = _global_loss_t(tensors, batch, mask, config.tau)
            l_loss = _multiscale_loss_t(tensors, batch, config.tau, mask=local_mask)
            loss = ad.add(g_loss, l_loss)
            d_loss = ad.constant(0.0)
            if config.lambda_div > 0:
                d_loss = _diversity_loss_t(tensors)
                loss = ad.add(loss, ad.mul(d_loss, config.lambda_div))
            ad.backward(loss)

            last_lr = cosine_lr(step, total_steps, config.lr)
            velocity = sgd_step(
                params,
                tensors.gradients(),
                last_lr,
                momentum=config.momentum,
                weight_decay=config.weight_decay,
                velocity=velocity,
            )
            sums["total"] += float(loss.data)
            sums["global"] += float(g_loss.data)
            sums["local"] += float(l_loss.data)
            sums["div"] += float(d_loss.data)
            step += 1

        trace.append(
            EpochStats(
                epoch=epoch,
                loss_total=sums["total"] / steps_per_epoch,
                loss_global=sums["global"] / steps_per_epoch,
                loss_local=sums["local"] / steps_per_epoch,
                loss_div=sums["div"] / steps_per_epoch,
                train_top1=evaluate_top1(model, dataset),
                lr=last_lr,
            )
        )
    model.validate()
    return model, trace


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_group: dict
    passed: bool
    tolerance: float


def gradcheck(model, batch, mask=None, lambda_div=0.0, coords_per_group=50,
              h=1e-5, tolerance=1e-4, seed=0):
    """Compare reverse-mode gradients of the total loss against central finite
    differences on randomly sampled coordinates of every trainable group."""
    if mask is None:
        mask = np.ones((len(batch), model.m))
    loss0, grads = backward(model, batch, mask, lambda_div=lambda_div)

    arrays = {
        "global_prompts": model.prompts.global_prompts,
        "local_prompts": model.prompts.local_prompts,
        "theta": model.alignment.theta,
    }
    rng = np.random.default_rng(seed)
    per_group = {}
    for name, arr in arrays.items():
        if arr.size == 0:
            continue
        worst = 0.0
        count = min(coords_per_group, arr.size)
        coords = rng.choice(arr.size, size=count, replace=False)
        flat = arr.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = total_loss(model, batch, mask, lambda_div=lambda_div)
            flat[c] = orig - h
            down = total_loss(model, batch, mask, lambda_div=lambda_div)
            flat[c] = orig
            fd = (up - down) / (2.0 * h)
            adg = grads[name].reshape(-1)[c]
            rel = abs(adg - fd) / max(abs(adg), abs(fd), 1e-6)
            worst = max(worst, rel)
        per_group[name] = worst
    max_rel = max(per_group.values()) if per_group else 0.0
    return GradCheckReport(
        max_rel_err=max_rel,
        per_group=per_group,
        passed=max_rel < tolerance and not math.isnan(loss0),
        tolerance=tolerance,
    )
