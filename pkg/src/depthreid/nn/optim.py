"""Stochastic gradient descent with momentum, weight decay and per-parameter
learning-rate multipliers.

The update, per parameter, with effective rate gamma = lr * lr_multiplier:

    buffer <- momentum * buffer - gamma * (grad + weight_decay * value)
    value  <- value + buffer

Weight decay is skipped for parameters with ``decay=False`` (biases).
Parameters with lr_multiplier == 0 are never touched at all, so frozen
values stay bit-identical forever. Gradients are cleared by ``step``.
"""


class SGD:
    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        params = list(params)
        seen = set()
        for p in params:
            if id(p) in seen:
                raise ValueError(f"duplicate parameter {p.name} passed to SGD")
            seen.add(id(p))
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if p.lr_multiplier == 0.0:
                p.grad[...] = 0.0
                continue
            gamma = self.lr * p.lr_multiplier
            grad = p.grad
            if self.weight_decay and p.decay:
                grad = grad + self.weight_decay * p.value
            p.momentum *= self.momentum
            p.momentum -= gamma * grad
            p.value += p.momentum
            p.grad[...] = 0.0
            p.version += 1
