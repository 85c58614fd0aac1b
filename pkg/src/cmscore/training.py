"""Pairwise ranking loss, Adam, plateau learning-rate schedule, training loop."""

import time
from dataclasses import dataclass, field

import numpy as np

from .model import EmbeddingModel

INITIAL_LR = 0.002


@dataclass
class TrainConfig:
    margin: float = 0.2
    batch_size: int = 100
    lr: float = INITIAL_LR
    patience: int = 30
    max_halvings: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    improvement_tol: float = 1e-5
    max_epochs: int = 200
    seed: int = 0
    symmetric: bool = False
    kappa: float = 1.0

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (the loss needs contrastive samples)")


def cosine_score(x, y):
    """Similarity of two unit-norm embeddings: their dot product."""
    return float(np.dot(np.asarray(x), np.asarray(y)))


def ranking_loss(X, Y, margin, symmetric=False):
    """Hinge ranking loss over a batch of matching embedding pairs.

    Rows of ``X`` (image) and ``Y`` (audio) are unit-norm and aligned so
    (X[j], Y[j]) match. Every anchor X[j] is pushed to score its own
    Y[j] higher than each other Y[k] in the batch by at least ``margin``;
    with ``symmetric`` the audio-anchored direction is added.

    Returns (loss, dX, dY) where the gradients flow through active
    hinge terms only.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    n = X.shape[0]
    if n < 2 or Y.shape[0] != n:
        raise ValueError(f"need >= 2 aligned pairs, got X {X.shape} and Y {Y.shape}")
    S = X @ Y.T
    d = np.diag(S).copy()
    offdiag = ~np.eye(n, dtype=bool)

    M = margin - d[:, None] + S
    active = (M > 0) & offdiag
    loss = float(M[active].sum())
    G = active.astype(X.dtype)
    dS = G.copy()
    np.fill_diagonal(dS, -G.sum(axis=1))

    if symmetric:
        M2 = margin - d[None, :] + S
        active2 = (M2 > 0) & offdiag
        loss += float(M2[active2].sum())
        G2 = active2.astype(X.dtype)
        dS2 = G2.copy()
        np.fill_diagonal(dS2, -G2.sum(axis=0))
        dS = dS + dS2

    dX = dS @ Y
    dY = dS.T @ X
    return loss, dX, dY


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update. ``t`` is the 1-based step count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p, dtype=np.float64 if p.dtype == np.float64 else np.float32) for p in self.params]
        self.v = [np.zeros_like(mi) for mi in self.m]
        self.t = 0

    def step(self, grads, lr):
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            adam_step(p, g.astype(p.dtype, copy=False), m, v, self.t, lr, self.beta1, self.beta2, self.eps)


class PlateauSchedule:
    """Halve the learning rate after ``patience`` epochs without improvement.

    The first observed validation loss sets the baseline. An improvement
    is a decrease of at least ``tol`` below the best seen so far; it
    resets the patience counter, as does a halving. After
    ``max_halvings`` halvings the schedule is exhausted and training
    should stop.
    """

    def __init__(self, initial_lr=INITIAL_LR, patience=30, max_halvings=10, tol=1e-5):
        self.lr = initial_lr
        self.patience = patience
        self.max_halvings = max_halvings
        self.tol = tol
        self.best = None
        self.since_improvement = 0
        self.halvings = 0
        self.exhausted = False

    def update(self, val_loss):
        """Record one epoch's validation loss; returns the lr to use next."""
        if self.best is None:
            self.best = val_loss
            return self.lr
        if val_loss <= self.best - self.tol:
            self.best = val_loss
            self.since_improvement = 0
            return self.lr
        self.since_improvement += 1
        if self.since_improvement >= self.patience:
            self.lr *= 0.5
            self.halvings += 1
            self.since_improvement = 0
            if self.halvings >= self.max_halvings:
                self.exhausted = True
        return self.lr


def lr_schedule(history, initial_lr=INITIAL_LR, patience=30, max_halvings=10, tol=1e-5):
    """Learning rate after replaying a per-epoch validation-loss history."""
    sched = PlateauSchedule(initial_lr, patience, max_halvings, tol)
    lr = sched.lr
    for v in history:
        lr = sched.update(v)
    return lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    model: EmbeddingModel
    log: list
    best_val: float
    best_epoch: int
    exhausted: bool
    seconds: float = 0.0


def _batched_indices(n, batch_size):
    """Contiguous index blocks; a trailing block of size 1 is dropped
    (both the loss and train-mode batch norm need at least 2 samples)."""
    blocks = [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    return [b for b in blocks if len(b) >= 2]


def _epoch_loss(model, snippets, excerpts, order, batch_size, margin, symmetric):
    """Eval-mode loss over a split, averaged per anchor."""
    total = 0.0
    anchors = 0
    for block in _batched_indices(len(order), batch_size):
        idx = order[block]
        X = model.embed_image(snippets[idx])
        Y = model.embed_audio(excerpts[idx])
        loss, _, _ = ranking_loss(X, Y, margin, symmetric)
        total += loss
        anchors += len(idx)
    return total / max(anchors, 1)


def write_metrics_csv(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for rec in log:
            fh.write(f"{rec.epoch},{rec.train_loss:.8g},{rec.val_loss:.8g},{rec.lr:.8g}\n")


def train(dataset, config, model=None, log_fn=None):
    """Train the two-pathway model on a correspondence dataset.

    ``dataset`` must expose train/val splits with ``snippets`` and
    ``excerpts`` arrays. Deterministic given ``config.seed``: the root
    seed is split into independent init and shuffle streams. Returns the
    best-validation model state and the per-epoch metric log.
    """
    tr = dataset.splits["train"]
    va = dataset.splits["val"]
    n_train = len(tr.snippets)
    if n_train == 0 or len(va.snippets) == 0:
        raise ValueError("dataset has an empty train or val split")

    root = np.random.SeedSequence(config.seed)
    init_ss, shuffle_ss = root.spawn(2)
    if model is None:
        model = EmbeddingModel.build(config.kappa, dtype=np.float32, rng=np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)

    params = [a for _, a in model.f.parameters()] + [a for _, a in model.g.parameters()]
    opt = Adam(params, config.beta1, config.beta2, config.eps)
    sched = PlateauSchedule(config.lr, config.patience, config.max_halvings, config.improvement_tol)

    start_epoch = model.epoch
    log = []
    best_val = np.inf
    best_epoch = start_epoch
    best_state = model.state_arrays()
    t0 = time.perf_counter()
    lr = sched.lr
    val_order = np.arange(len(va.snippets))

    for epoch in range(start_epoch, start_epoch + config.max_epochs):
        perm = shuffle_rng.permutation(n_train)
        total = 0.0
        anchors = 0
        for block in _batched_indices(n_train, config.batch_size):
            idx = perm[block]
            X = model.embed_image(tr.snippets[idx], train=True)
            Y = model.embed_audio(tr.excerpts[idx], train=True)
            loss, dX, dY = ranking_loss(X, Y, config.margin, config.symmetric)
            model.f.backward(dX.astype(np.float32))
            model.g.backward(dY.astype(np.float32))
            grads = [a for _, a in model.f.gradients()] + [a for _, a in model.g.gradients()]
            opt.step(grads, lr)
            total += loss
            anchors += len(idx)
        train_loss = total / max(anchors, 1)
        val_loss = _epoch_loss(model, va.snippets, va.excerpts, val_order,
                               config.batch_size, config.margin, config.symmetric)
        lr_next = sched.update(val_loss)
        model.epoch = epoch + 1
        rec = EpochRecord(epoch=epoch + 1, train_loss=train_loss, val_loss=val_loss, lr=lr)
        log.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch + 1
            best_state = model.state_arrays()
        lr = lr_next
        if sched.exhausted:
            break

    model.load_state_arrays(best_state)
    model.epoch = best_epoch
    return TrainResult(model=model, log=log, best_val=best_val, best_epoch=best_epoch,
                       exhausted=sched.exhausted, seconds=time.perf_counter() - t0)
