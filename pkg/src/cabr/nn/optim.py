import numpy as np


class Adam:
    """Bias-corrected Adam over a list of parameter tensors.

    Moment buffers are float32 like the parameters; one buffer pair per
    parameter, matched by position.
    """

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(np.float32, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params, grads, state: Adam) -> None:
    """Functional spelling of ``state.step(grads)``; updates ``params`` in place."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("parameters do not match the optimizer state")
    state.step(grads)
