"""Training: single-shot pretraining and the hybrid sequence regime.

The sequence trainer combines two gradient streams per batch:

  * cross-entropy on the per-frame posteriors, backpropagated through the
    classifier and the LSTM (and, end-to-end, into the embedding);
  * a policy-gradient term for the attention unit: for each episode and
    step, score = (w_t - p_t) / (p_t (1 - p_t)) with respect to the
    Bernoulli parameter, which chains through the sigmoid to (w_t - p_t)
    on the pre-sigmoid activation; it is weighted by (R_t - b_t), the
    cumulative reward against a learned per-step baseline, and scaled by
    lambda_reinforce.

Rewards are granted per step: r_t = 1 when the reward posterior's argmax
is the true class and the maximum is unique (ties give 0). By default the
reward posterior at step t is the running fusion of the posteriors of
frames the agent sampled *in* (w = 1) up to t, uniform while the agent has
included nothing, so that rewards actually depend on the sampled actions;
``reward_posterior="frame"`` instead scores each frame's own posterior,
which leaves the expected policy gradient at exactly zero and is kept for
comparison.

Two regimes: staged (default) freezes the embedding (lr multiplier 0,
features precomputed once in eval mode) and trains the temporal parts;
end-to-end lets both gradient streams reach the embedding. The sequence
learning rate follows a linear schedule (0.01 to 0.0001 over 200 epochs,
then constant, hard stop at 250, all configurable).
"""

from dataclasses import dataclass

import numpy as np

from .nn import SGD, softmax, softmax_cross_entropy
from .preprocess import expand_channels
from .validation import NonFiniteError, ShapeError, check_labels, check_ndim

REWARD_POSTERIOR_MODES = ("fused", "frame")


@dataclass
class TrainConfig:
    """Hyperparameters for both phases.

    Defaults are the reference settings: embedding momentum 0.5 at
    lr 3e-4; sequence momentum 0.9 with the 0.01 -> 0.0001 schedule;
    weight decay 2e-4; batches of 50; windows of 3 frames.
    """

    embedding_lr: float = 3e-4
    embedding_momentum: float = 0.5
    embedding_epochs: int = 20
    lr_start: float = 0.01
    lr_end: float = 0.0001
    lr_decay_epochs: int = 200
    max_epochs: int = 250
    sequence_epochs: int = 250
    sequence_momentum: float = 0.9
    weight_decay: float = 2e-4
    batch_size: int = 50
    window: int = 3
    lambda_reinforce: float = 1.0
    baseline_lr: float = 0.1
    reward_posterior: str = "fused"
    staged: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.window < 1:
            raise ValueError("batch size and window must be positive")
        if min(self.embedding_lr, self.lr_start, self.lr_end) < 0:
            raise ValueError("learning rates must be nonnegative")
        if not 0 <= self.sequence_epochs <= self.max_epochs:
            raise ValueError(
                f"sequence_epochs must lie in [0, {self.max_epochs}]")
        if self.lr_decay_epochs < 1:
            raise ValueError("lr_decay_epochs must be positive")
        if self.reward_posterior not in REWARD_POSTERIOR_MODES:
            raise ValueError(
                f"reward_posterior must be one of {REWARD_POSTERIOR_MODES}")
        if self.lambda_reinforce < 0 or self.baseline_lr < 0:
            raise ValueError("reinforce and baseline rates must be nonnegative")


def lr_schedule(epoch, config):
    """Sequence-phase base learning rate at ``epoch`` (0-based)."""
    epoch = int(epoch)
    if epoch < 0 or epoch >= config.max_epochs:
        raise ValueError(
            f"epoch {epoch} outside the training range "
            f"[0, {config.max_epochs})")
    if epoch >= config.lr_decay_epochs:
        return config.lr_end
    frac = epoch / config.lr_decay_epochs
    return config.lr_start + (config.lr_end - config.lr_start) * frac


@dataclass
class Episode:
    """One sequence pass through the temporal model.

    Arrays are per step: embeddings (T, D), Bernoulli parameters and
    binary samples (T,), per-frame posteriors (T, N), the 0/1 rewards and
    their running sums (T,). ``valid`` masks padded steps out of losses,
    rewards and baseline statistics.
    """

    embeddings: np.ndarray
    bernoulli: np.ndarray
    samples: np.ndarray
    posteriors: np.ndarray
    truth: int
    valid: np.ndarray
    rewards: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        t = self.bernoulli.shape[0]
        for name in ("samples", "valid", "rewards", "cumulative"):
            if getattr(self, name).shape[0] != t:
                raise ShapeError(f"episode field {name} disagrees on length")
        if self.posteriors.shape[0] != t or self.embeddings.shape[0] != t:
            raise ShapeError("episode arrays disagree on sequence length")
        live = self.valid.astype(bool)
        if not np.isin(self.rewards[live], (0.0, 1.0)).all():
            raise ValueError("rewards must be 0 or 1")
        if (np.diff(self.cumulative) < -1e-12).any():
            raise ValueError("cumulative rewards must be nondecreasing")
        p = self.bernoulli[live]
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("Bernoulli parameters must lie in [0, 1]")


def compute_rewards(posteriors, truth, valid=None):
    """Per-step rewards and running sums.

    r_t = 1 iff the posterior's unique argmax equals ``truth`` (exact ties
    score 0). Invalid (padded) steps contribute 0 and do not advance the
    running sum.
    """
    c = check_ndim(np.asarray(posteriors, dtype=np.float64), 2, "posteriors")
    t, n = c.shape
    truth = int(truth)
    if not 0 <= truth < n:
        raise ValueError(f"truth {truth} outside [0, {n})")
    top = c.max(axis=1)
    unique = (c == top[:, None]).sum(axis=1) == 1
    rewards = ((c[:, truth] == top) & unique).astype(np.float64)
    if valid is not None:
        rewards = rewards * np.asarray(valid, dtype=np.float64)
    return rewards, np.cumsum(rewards)


def running_fused_posteriors(posteriors, samples, valid=None):
    """Fusion-so-far of the frames the agent sampled in.

    At step t this is the mean posterior over frames tau <= t with
    w_tau = 1 (and valid); before anything is included it is uniform,
    which the tie rule scores as reward 0.
    """
    c = check_ndim(np.asarray(posteriors, dtype=np.float64), 2, "posteriors")
    t, n = c.shape
    w = np.asarray(samples, dtype=np.float64)
    live = np.ones(t) if valid is None else np.asarray(valid, dtype=np.float64)
    out = np.empty_like(c)
    acc = np.zeros(n)
    count = 0.0
    for k in range(t):
        if live[k] and w[k] > 0:
            acc = acc + c[k]
            count += 1.0
        out[k] = acc / count if count > 0 else np.full(n, 1.0 / n)
    return out


def score_function(samples, bernoulli):
    """(w - p) / (p (1 - p)): d log pi / dp for a Bernoulli policy."""
    w = np.asarray(samples, dtype=np.float64)
    p = np.asarray(bernoulli, dtype=np.float64)
    if p.size and (p.min() <= 0.0 or p.max() >= 1.0):
        raise ValueError("score function undefined at p in {0, 1}")
    return (w - p) / (p * (1.0 - p))


def reinforce_pre_sigmoid(episodes, baseline_values):
    """Gradient of the *negated* objective w.r.t. pre-sigmoid activations.

    Ascent on J uses (w_t - p_t)(R_t - b_t); the optimizer descends, so
    this returns its negation, averaged over the M episodes, zero at
    padded steps. Shape (M, T).
    """
    m = len(episodes)
    if m == 0:
        raise ValueError("reinforce needs at least one episode")
    t = episodes[0].bernoulli.shape[0]
    b = np.asarray(baseline_values, dtype=np.float64)
    if b.shape != (t,):
        raise ShapeError(f"baseline: expected shape ({t},), got {b.shape}")
    da = np.zeros((m, t))
    for i, ep in enumerate(episodes):
        advantage = ep.cumulative - b
        da[i] = -(ep.samples - ep.bernoulli) * advantage * ep.valid / m
    return da


class BaselineEstimator:
    """Free per-step scalars b_t trained toward E[R_t] by MSE.

    ``update`` takes one gradient step on (1/M) sum_i sum_t (R_t - b_t)^2,
    so with a fixed reward distribution b_t converges geometrically to the
    empirical mean of R_t.
    """

    def __init__(self, steps):
        self.values = np.zeros(int(steps))

    def update(self, cumulative, valid, lr):
        r = np.asarray(cumulative, dtype=np.float64)
        live = np.asarray(valid, dtype=np.float64)
        if r.shape != live.shape or r.ndim != 2 or r.shape[1] != self.values.shape[0]:
            raise ShapeError("baseline update: (episodes, steps) arrays expected")
        m = r.shape[0]
        residual = (r - self.values[None, :]) * live
        self.values += lr * 2.0 / m * residual.sum(axis=0)
        return self.values.copy()


def embed_all(embedding, frames, chunk=200):
    """Eval-mode embeddings for a whole frame store, chunked for memory."""
    out = np.zeros((frames.shape[0], 256))
    for lo in range(0, frames.shape[0], chunk):
        hi = min(lo + chunk, frames.shape[0])
        out[lo:hi] = embedding.embed(expand_channels(frames[lo:hi]), mode="eval")
    return out


def train_embedding(model, frames, labels, config, rng, log=None):
    """Single-shot pretraining: per-frame cross-entropy through the head.

    ``frames`` is (n, 1|3, 144, 56) with values in [1, 256]; ``labels``
    must match the head's class count. Returns per-epoch history records.
    """
    if model.head is None:
        raise RuntimeError("attach a head (adapt_head) before training")
    frames = np.asarray(frames, dtype=np.float64)
    labels = check_labels(labels, model.n_classes)
    if frames.shape[0] != labels.shape[0]:
        raise ShapeError("frames and labels disagree on length")
    if frames.shape[0] == 0:
        raise ValueError("empty training set")
    opt = SGD(model.params(), lr=config.embedding_lr,
              momentum=config.embedding_momentum,
              weight_decay=config.weight_decay)
    shuffle = rng.child("shuffle")
    dropout = rng.child("dropout")
    history = []
    n = frames.shape[0]
    for epoch in range(config.embedding_epochs):
        order = shuffle.permutation(n)
        losses, hits, seen = [], 0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x = expand_channels(frames[idx])
            logits = model.forward_logits(x, mode="train", rng=dropout)
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            model.backward_logits(dlogits)
            opt.step()
            losses.append(loss)
            hits += int((logits.argmax(axis=1) == labels[idx]).sum())
            seen += idx.size
        record = {
            "phase": "embedding",
            "epoch": epoch,
            "cross_entropy": float(np.mean(losses)),
            "accuracy": hits / seen,
            "base_lr": config.embedding_lr,
        }
        history.append(record)
        if log is not None:
            log(record)
    return history


class SequenceTrainer:
    """Hybrid trainer for the temporal model over fixed-length windows.

    Data comes in as a frame store (n_frames, 1|3, H, W), plus windows
    (m, T) of frame indices with validity flags (m, T) and labels (m,).
    Padded steps repeat a real frame index but are excluded from the loss,
    rewards and baseline statistics.
    """

    def __init__(self, model, frames, windows, valid, labels, config, rng):
        self.model = model
        self.config = config
        self.frames = np.asarray(frames, dtype=np.float64)
        self.windows = np.asarray(windows, dtype=np.int64)
        self.valid = np.asarray(valid, dtype=bool)
        self.labels = check_labels(labels, model.n_classes)
        if self.windows.shape != self.valid.shape:
            raise ShapeError("windows and validity flags disagree")
        if self.windows.ndim != 2 or self.windows.shape[1] != config.window:
            raise ShapeError(
                f"windows must be (m, {config.window}), got {self.windows.shape}")
        if self.windows.shape[0] != self.labels.shape[0]:
            raise ShapeError("windows and labels disagree on length")
        if self.windows.shape[0] == 0:
            raise ValueError("no training windows")
        if not self.valid.any(axis=1).all():
            raise ValueError("every window needs at least one valid step")

        self._shuffle = rng.child("shuffle")
        self._dropout = rng.child("dropout")
        self._embed_dropout = rng.child("embed_dropout")
        self._attention = rng.child("attention")

        embed_params = model.embedding.params()
        if config.staged:
            for p in embed_params:
                p.lr_multiplier = 0.0
            self._cached = embed_all(model.embedding, self.frames)
        else:
            self._cached = None
        self.opt = SGD(model.temporal_params() + embed_params,
                       lr=lr_schedule(0, config),
                       momentum=config.sequence_momentum,
                       weight_decay=config.weight_decay)
        self.baseline = BaselineEstimator(config.window)
        self.epoch = 0

    # ------------------------------------------------------------------

    def _embeddings_for(self, win):
        b, t = win.shape
        if self._cached is not None:
            return self._cached[win.reshape(-1)].reshape(b, t, -1)
        x = expand_channels(self.frames[win.reshape(-1)])
        g = self.model.embedding.embed(x, mode="train", rng=self._embed_dropout)
        return g.reshape(b, t, -1)

    def train_step(self, window_ids):
        """One hybrid update on the given window indices."""
        cfg = self.config
        win = self.windows[window_ids]
        live = self.valid[window_ids]
        truth = self.labels[window_ids]
        b, t = win.shape

        g = self._embeddings_for(win)
        p, w = self.model.attention.forward(g, mode="train", rng=self._attention)
        w = np.where(live, w, 0.0)
        hs = self.model.lstm.forward_sequence(g)
        logits = self.model.classifier.forward_logits(
            hs.reshape(b * t, -1), mode="train", rng=self._dropout)
        posteriors = softmax(logits).reshape(b, t, -1)

        step_labels = np.repeat(truth, t)
        ce, dlogits = softmax_cross_entropy(
            logits, step_labels, mask=live.reshape(-1).astype(np.float64))
        if not np.isfinite(ce):
            raise NonFiniteError(
                f"cross-entropy diverged at epoch {self.epoch} "
                f"(loss={ce!r}, lr={self.opt.lr}); lower the learning rate")

        episodes = []
        for i in range(b):
            if cfg.reward_posterior == "fused":
                scored = running_fused_posteriors(posteriors[i], w[i], live[i])
            else:
                scored = posteriors[i]
            rewards, cumulative = compute_rewards(scored, truth[i], live[i])
            episodes.append(Episode(
                embeddings=g[i], bernoulli=p[i], samples=w[i],
                posteriors=posteriors[i], truth=int(truth[i]),
                valid=live[i].astype(np.float64), rewards=rewards,
                cumulative=cumulative,
            ))

        # cross-entropy stream
        dh = self.model.classifier.backward(dlogits).reshape(b, t, -1)
        dg = self.model.lstm.backward_sequence(dh)

        # policy-gradient stream; the scale applies to the attention
        # parameters and to the chained embedding gradient alike
        da = cfg.lambda_reinforce * reinforce_pre_sigmoid(episodes, self.baseline.values)
        dg = dg + self.model.attention.accumulate_pre_sigmoid(g, da)
        if self._cached is None:
            self.model.embedding.backward(dg.reshape(b * t, -1))

        cumulative = np.stack([ep.cumulative for ep in episodes])
        self.baseline.update(cumulative, live.astype(np.float64), cfg.baseline_lr)
        self.opt.step()
        return {
            "cross_entropy": ce,
            "mean_reward": float(cumulative[:, -1].mean()),
            "baseline": self.baseline.values.copy(),
        }

    def train(self, log=None):
        cfg = self.config
        history = []
        m = self.windows.shape[0]
        for epoch in range(cfg.sequence_epochs):
            self.epoch = epoch
            self.opt.lr = lr_schedule(epoch, cfg)
            order = self._shuffle.permutation(m)
            ces, rewards = [], []
            for lo in range(0, m, cfg.batch_size):
                stats = self.train_step(order[lo:lo + cfg.batch_size])
                ces.append(stats["cross_entropy"])
                rewards.append(stats["mean_reward"])
            record = {
                "phase": "sequence",
                "epoch": epoch,
                "cross_entropy": float(np.mean(ces)),
                "mean_reward": float(np.mean(rewards)),
                "base_lr": self.opt.lr,
                "baseline": self.baseline.values.tolist(),
            }
            history.append(record)
            if log is not None:
                log(record)
        return history
