"""Frame embedding: a small configurable CNN producing 256-dim features.

The network is organized in named layer groups, bottom to top: conv groups
("conv1", "conv2", ...), each 3x3 convolution + relu + 2x max pool, then
fully connected groups ("fc5", ...), each dense + relu, with dropout
between consecutive fully connected groups. The default configuration has
four conv and three fc groups, seven in total, and the last fc group always
outputs the 256-dim embedding.

Groups are the unit of transfer: learning-rate multipliers, freezing and
checkpoint copying all operate per group. A classifier head ("head",
256 x N, weights drawn from N(0, 0.01^2), zero biases, dropout in front)
can be attached for single-shot classification and is replaced wholesale
when the class count changes.
"""

from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, Dense, Dropout, MaxPool2d, ReLU
from .preprocess import (
    NETWORK_INPUT_HEIGHT,
    NETWORK_INPUT_WIDTH,
    STANDARDIZE_MEAN,
    STANDARDIZE_SCALE,
)
from .validation import ShapeError, check_finite, check_shape

EMBEDDING_DIM = 256


@dataclass(frozen=True)
class EmbeddingConfig:
    """Architecture knobs for the frame CNN.

    At least four conv groups and two fc groups are required; the final fc
    extent is pinned to the 256-dim embedding.
    """

    conv_channels: tuple = (8, 16, 24, 32)
    fc_dims: tuple = (256, 256, EMBEDDING_DIM)
    dropout: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))
        if len(self.conv_channels) < 4:
            raise ValueError("embedding needs at least 4 conv groups")
        if len(self.fc_dims) < 2:
            raise ValueError("embedding needs at least 2 fc groups")
        if any(c < 1 for c in self.conv_channels) or any(d < 1 for d in self.fc_dims):
            raise ValueError("layer extents must be positive")
        if self.fc_dims[-1] != EMBEDDING_DIM:
            raise ValueError(
                f"the top fc group must output {EMBEDDING_DIM} features, "
                f"got {self.fc_dims[-1]}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    def group_names(self):
        names = [f"conv{i + 1}" for i in range(len(self.conv_channels))]
        offset = len(self.conv_channels)
        names += [f"fc{offset + j + 1}" for j in range(len(self.fc_dims))]
        return names


class FrameEmbedding:
    """The frame CNN plus its optional classifier head."""

    def __init__(self, config=None, rng=None):
        if config is None:
            config = EmbeddingConfig()
        if rng is None:
            raise ValueError("FrameEmbedding needs an rng for weight init")
        self.config = config
        self.input_shape = (3, NETWORK_INPUT_HEIGHT, NETWORK_INPUT_WIDTH)
        self.standardize_mean = STANDARDIZE_MEAN
        self.standardize_scale = STANDARDIZE_SCALE

        names = config.group_names()
        self._conv_groups = []
        c_in, h, w = self.input_shape
        for name, c_out in zip(names, config.conv_channels):
            self._conv_groups.append(
                (name, Conv2d(name, c_in, c_out, rng), ReLU(), MaxPool2d(2))
            )
            c_in = c_out
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(
                    "too many conv groups: feature map shrank to nothing"
                )
        self._flat_dim = c_in * h * w
        self._conv_out_shape = (c_in, h, w)

        self._fc_groups = []
        self._fc_dropouts = []  # between consecutive fc groups
        d_in = self._flat_dim
        for name, d_out in zip(names[len(config.conv_channels):], config.fc_dims):
            if self._fc_groups:
                self._fc_dropouts.append(Dropout(config.dropout))
            self._fc_groups.append((name, Dense(name, d_in, d_out, rng), ReLU()))
            d_in = d_out

        self.head = None
        self._head_dropout = None
        self.n_classes = None

    # ------------------------------------------------------------------
    # structure

    def group_names(self):
        names = self.config.group_names()
        if self.head is not None:
            names.append("head")
        return names

    def groups(self):
        """Ordered (name, [Parameter, ...]) pairs, bottom to top."""
        out = [(name, conv.params()) for name, conv, _, _ in self._conv_groups]
        out += [(name, dense.params()) for name, dense, _ in self._fc_groups]
        if self.head is not None:
            out.append(("head", self.head.params()))
        return out

    def params(self):
        return [p for _, group in self.groups() for p in group]

    def adapt_head(self, n_classes, rng):
        """Attach a fresh 256 x N classifier head, replacing any old one."""
        n_classes = int(n_classes)
        if n_classes < 2:
            raise ValueError(f"head needs at least 2 classes, got {n_classes}")
        self.head = Dense("head", EMBEDDING_DIM, n_classes, rng, weight_std=0.01)
        self._head_dropout = Dropout(self.config.dropout)
        self.n_classes = n_classes
        return self

    # ------------------------------------------------------------------
    # forward / backward

    def _standardize(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        check_shape(x, (None,) + self.input_shape, "network input")
        check_finite(x, "network input")
        return (x - self.standardize_mean) / self.standardize_scale

    def embed(self, x, mode="eval", rng=None):
        """Batch of network inputs (B, 3, 144, 56) -> embeddings (B, 256)."""
        z = self._standardize(x)
        for _, conv, relu, pool in self._conv_groups:
            z = pool.forward(relu.forward(conv.forward(z, mode), mode), mode)
        z = z.reshape(z.shape[0], self._flat_dim)
        for i, (_, dense, relu) in enumerate(self._fc_groups):
            if i > 0:
                z = self._fc_dropouts[i - 1].forward(z, mode, rng)
            z = relu.forward(dense.forward(z, mode), mode)
        return z

    def backward(self, dg):
        """Backprop from embedding gradients to the input gradient."""
        dz = np.asarray(dg, dtype=np.float64)
        for i in range(len(self._fc_groups) - 1, -1, -1):
            _, dense, relu = self._fc_groups[i]
            dz = dense.backward(relu.backward(dz))
            if i > 0:
                dz = self._fc_dropouts[i - 1].backward(dz)
        dz = dz.reshape((-1,) + self._conv_out_shape)
        for _, conv, relu, pool in reversed(self._conv_groups):
            dz = conv.backward(relu.backward(pool.backward(dz)))
        return dz / self.standardize_scale

    def forward_logits(self, x, mode="eval", rng=None):
        """Single-shot route: embedding, dropout, head logits."""
        if self.head is None:
            raise RuntimeError("no classifier head attached; call adapt_head")
        g = self.embed(x, mode, rng)
        return self.head.forward(self._head_dropout.forward(g, mode, rng), mode)

    def backward_logits(self, dlogits):
        dg = self._head_dropout.backward(self.head.backward(dlogits))
        return self.backward(dg)

    def head_logits(self, g, mode="eval", rng=None):
        """Head on precomputed embeddings (used when features are cached)."""
        if self.head is None:
            raise RuntimeError("no classifier head attached; call adapt_head")
        return self.head.forward(self._head_dropout.forward(g, mode, rng), mode)
