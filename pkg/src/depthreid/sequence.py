"""Temporal model: LSTM over frame embeddings, attention unit, classifier.

The LSTM follows the standard gate equations with separate input and
recurrent weights per gate (input, forget, candidate, output), hidden size
256, zero initial state:

    i = sigmoid(g W_gi + h' W_hi + b_i)
    f = sigmoid(g W_gf + h' W_hf + b_f)
    z = tanh   (g W_gc + h' W_hc + b_c)
    c = f * c' + i * z
    o = sigmoid(g W_go + h' W_ho + b_o)
    h = o * tanh(c)

The attention unit maps each embedding to a Bernoulli parameter
p = sigmoid(w . g + b). During training, binary samples w_t ~ Bernoulli(p_t)
drive the policy-gradient update; fusion always uses the continuous p_t,
normalized over the sequence, in train and eval alike.

The classifier head turns a hidden state into class logits through
relu -> dropout -> dense; multi-shot predictions fuse per-frame posteriors
with the normalized attention weights.
"""

import numpy as np

from .nn import Dense, Dropout, Parameter, ReLU, sigmoid, softmax
from .validation import ShapeError, check_finite, check_ndim

HIDDEN_DIM = 256

_GATES = ("i", "f", "c", "o")


class LSTMCell:
    """One LSTM layer processed step by step, with backprop through time.

    ``forward_sequence`` consumes (B, T, D) embeddings and keeps per-step
    caches; ``backward_sequence`` walks them in reverse. ``step`` is the
    raw single-transition primitive (also what evaluation uses).
    """

    def __init__(self, rng, input_dim=HIDDEN_DIM, hidden_dim=HIDDEN_DIM,
                 name="lstm"):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.name = name
        std = 1.0 / np.sqrt(self.hidden_dim)
        self._params = {}
        for gate in _GATES:
            self._params[f"W_g{gate}"] = Parameter(
                f"{name}.W_g{gate}", rng.normal((self.input_dim, self.hidden_dim), std=std))
            self._params[f"W_h{gate}"] = Parameter(
                f"{name}.W_h{gate}", rng.normal((self.hidden_dim, self.hidden_dim), std=std))
            self._params[f"b_{gate}"] = Parameter(
                f"{name}.b_{gate}", np.zeros(self.hidden_dim), decay=False)
        self._steps = []

    def params(self):
        return [self._params[k] for k in sorted(self._params)]

    def zero_state(self, batch):
        return (np.zeros((batch, self.hidden_dim)),
                np.zeros((batch, self.hidden_dim)))

    def _gates(self, g, h_prev):
        P = self._params
        pre = {
            gate: g @ P[f"W_g{gate}"].value + h_prev @ P[f"W_h{gate}"].value
            + P[f"b_{gate}"].value
            for gate in _GATES
        }
        i = sigmoid(pre["i"])
        f = sigmoid(pre["f"])
        z = np.tanh(pre["c"])
        o = sigmoid(pre["o"])
        return i, f, z, o

    def step(self, g, state, record=False):
        """One transition. ``record`` keeps the cache for backprop."""
        g = check_ndim(np.asarray(g, dtype=np.float64), 2, "lstm input")
        if g.shape[1] != self.input_dim:
            raise ShapeError(
                f"lstm input width {g.shape[1]} != {self.input_dim}")
        check_finite(g, "lstm input")
        h_prev, c_prev = state
        i, f, z, o = self._gates(g, h_prev)
        c = f * c_prev + i * z
        h = o * np.tanh(c)
        if record:
            self._steps.append((g, h_prev, c_prev, i, f, z, o, c))
        return h, c

    def forward_sequence(self, g_seq, mode="train"):
        """(B, T, D) -> hidden states (B, T, H), caching for backward."""
        g_seq = check_ndim(np.asarray(g_seq, dtype=np.float64), 3, "lstm input")
        b, t, _ = g_seq.shape
        self._steps = []
        state = self.zero_state(b)
        hs = np.zeros((b, t, self.hidden_dim))
        for k in range(t):
            state = self.step(g_seq[:, k], state, record=True)
            hs[:, k] = state[0]
        return hs

    def backward_sequence(self, dh_seq):
        """Backprop (B, T, H) hidden-state gradients; returns (B, T, D)
        input gradients and accumulates into the weight gradients."""
        dh_seq = np.asarray(dh_seq, dtype=np.float64)
        if len(self._steps) != dh_seq.shape[1]:
            raise ShapeError(
                f"got gradients for {dh_seq.shape[1]} steps, "
                f"recorded {len(self._steps)}")
        P = self._params
        b = dh_seq.shape[0]
        dg_seq = np.zeros((b, dh_seq.shape[1], self.input_dim))
        dh_next = np.zeros((b, self.hidden_dim))
        dc_next = np.zeros((b, self.hidden_dim))
        for k in range(len(self._steps) - 1, -1, -1):
            g, h_prev, c_prev, i, f, z, o, c = self._steps[k]
            dh = dh_seq[:, k] + dh_next
            tc = np.tanh(c)
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc ** 2)
            di = dc * z
            df = dc * c_prev
            dz = dc * i
            dc_next = dc * f
            pre = {
                "i": di * i * (1.0 - i),
                "f": df * f * (1.0 - f),
                "c": dz * (1.0 - z ** 2),
                "o": do * o * (1.0 - o),
            }
            dg = np.zeros((b, self.input_dim))
            dh_next = np.zeros((b, self.hidden_dim))
            for gate in _GATES:
                dpre = pre[gate]
                P[f"W_g{gate}"].grad += g.T @ dpre
                P[f"W_h{gate}"].grad += h_prev.T @ dpre
                P[f"b_{gate}"].grad += dpre.sum(axis=0)
                dg += dpre @ P[f"W_g{gate}"].value.T
                dh_next += dpre @ P[f"W_h{gate}"].value.T
            dg_seq[:, k] = dg
        self._steps = []
        return dg_seq


class AttentionUnit:
    """Per-frame relevance: p = sigmoid(w . g + b), sampled in train mode.

    The binary samples exist only to drive the policy-gradient update;
    every fused prediction uses the continuous p values.
    """

    def __init__(self, rng, input_dim=HIDDEN_DIM, name="attention"):
        self.input_dim = int(input_dim)
        self.weight = Parameter(f"{name}.weight",
                                rng.normal((self.input_dim,), std=0.01))
        self.bias = Parameter(f"{name}.bias", np.zeros(1), decay=False)

    def params(self):
        return [self.weight, self.bias]

    def pre_sigmoid(self, g):
        g = np.asarray(g, dtype=np.float64)
        check_finite(g, "attention input")
        if g.shape[-1] != self.input_dim:
            raise ShapeError(
                f"attention input width {g.shape[-1]} != {self.input_dim}")
        return g @ self.weight.value + self.bias.value[0]

    def forward(self, g, mode="eval", rng=None):
        """Returns (p, w): Bernoulli parameters and, in train mode, binary
        samples; in eval mode w is None and p itself acts as the weight."""
        p = sigmoid(self.pre_sigmoid(g))
        if mode == "eval":
            return p, None
        if mode != "train":
            raise ValueError(f"unknown mode {mode!r}")
        if rng is None:
            raise ValueError("attention sampling needs an rng in train mode")
        return p, rng.bernoulli(p)

    def accumulate_pre_sigmoid(self, g, da):
        """Accumulate gradients given d(loss)/d(pre-sigmoid activation);
        returns d(loss)/d(g) for chaining into the embedding."""
        g = np.asarray(g, dtype=np.float64)
        da = np.asarray(da, dtype=np.float64)
        flat_g = g.reshape(-1, self.input_dim)
        flat_a = da.reshape(-1)
        self.weight.grad += flat_a @ flat_g
        self.bias.grad += flat_a.sum()
        return da[..., None] * self.weight.value


class SequenceClassifier:
    """Hidden state -> class logits: relu, dropout, dense (group
    "classifier", weights N(0, 0.01^2), zero biases)."""

    def __init__(self, n_classes, rng, hidden_dim=HIDDEN_DIM, dropout=0.4,
                 name="classifier"):
        n_classes = int(n_classes)
        if n_classes < 2:
            raise ValueError(f"classifier needs at least 2 classes, got {n_classes}")
        self.n_classes = n_classes
        self._relu = ReLU()
        self._dropout = Dropout(dropout)
        self._dense = Dense(name, hidden_dim, n_classes, rng, weight_std=0.01)

    def params(self):
        return self._dense.params()

    def forward_logits(self, h, mode="eval", rng=None):
        z = self._relu.forward(h, mode)
        z = self._dropout.forward(z, mode, rng)
        return self._dense.forward(z, mode)

    def backward(self, dlogits):
        dz = self._dense.backward(dlogits)
        return self._relu.backward(self._dropout.backward(dz))

    def posteriors(self, h, mode="eval", rng=None):
        return softmax(self.forward_logits(h, mode, rng))


def fuse_predictions(posteriors, weights):
    """Weighted fusion of per-frame posteriors.

    ``weights`` (T,) must be nonnegative with a positive sum; they are
    normalized to w' = w / sum(w) and the fused posterior is
    sum_t w'_t * c_t, itself a distribution by convexity.
    """
    c = check_ndim(np.asarray(posteriors, dtype=np.float64), 2, "posteriors")
    w = check_ndim(np.asarray(weights, dtype=np.float64), 1, "fusion weights")
    if w.shape[0] != c.shape[0]:
        raise ShapeError(
            f"got {w.shape[0]} weights for {c.shape[0]} posteriors")
    if (w < 0).any():
        raise ValueError("fusion weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("fusion weights sum to zero")
    return (w / total) @ c


class SequenceModel:
    """Embedding + LSTM + attention + classifier, as used at evaluation.

    The embedding is shared with the single-shot route; the temporal parts
    (lstm, attention, classifier) are this model's own parameters.
    """

    def __init__(self, embedding, n_classes, rng, dropout=0.4):
        from .embedding import EMBEDDING_DIM  # avoid cycle at import time

        self.embedding = embedding
        self.n_classes = int(n_classes)
        self.lstm = LSTMCell(rng, EMBEDDING_DIM, HIDDEN_DIM)
        self.attention = AttentionUnit(rng, EMBEDDING_DIM)
        self.classifier = SequenceClassifier(self.n_classes, rng,
                                             HIDDEN_DIM, dropout)

    def temporal_params(self):
        return (self.lstm.params() + self.attention.params()
                + self.classifier.params())

    def params(self):
        return self.embedding.params() + self.temporal_params()

    def predict_sequence(self, frames, fusion="attention"):
        """Fused posterior for one sequence of network inputs (T, 3, H, W).

        ``fusion`` is "attention" (normalized p_t) or "uniform" (equal
        weights, the averaging baseline). Returns (fused, per_frame, p).
        """
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4:
            raise ShapeError(
                f"sequence frames: expected (T, C, H, W), got {frames.shape}")
        g = self.embedding.embed(frames, mode="eval")
        return self.predict_from_embeddings(g, fusion)

    def predict_from_embeddings(self, g, fusion="attention"):
        if fusion not in ("attention", "uniform"):
            raise ValueError(f"unknown fusion mode {fusion!r}")
        t = g.shape[0]
        p, _ = self.attention.forward(g, mode="eval")
        state = self.lstm.zero_state(1)
        posteriors = np.zeros((t, self.n_classes))
        for k in range(t):
            state = self.lstm.step(g[k:k + 1], state)
            posteriors[k] = self.classifier.posteriors(state[0], mode="eval")[0]
        weights = p if fusion == "attention" else np.ones(t)
        return fuse_predictions(posteriors, weights), posteriors, p
