"""Dense-network substrate: MLPs with analytic gradients, Adam, target syncing.

Everything is float64 numpy so runs are bit-reproducible. Networks are plain
parameter lists; a forward pass returns the caches needed for backward.
"""

from __future__ import annotations

import io
import json

import numpy as np

RELU = "relu"
TANH = "tanh"
LINEAR = "linear"


class Mlp:
    """Fully connected net; hidden layers use ReLU, the output is tanh or linear."""

    def __init__(self, sizes, output: str = LINEAR, rng: np.random.Generator | None = None):
        assert len(sizes) >= 2
        assert output in (TANH, LINEAR)
        self.sizes = list(int(s) for s in sizes)
        self.output = output
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = np.sqrt(6.0 / (n_in + n_out))
            self.weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.output = self.output
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    # -- forward / backward ---------------------------------------------------

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """x is (batch, n_in) or (n_in,); pass a list as cache to enable backward."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=float))
        if cache is not None:
            cache.clear()
            cache.append(h)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output == TANH:
                h = np.tanh(z)
            else:
                h = z
            if cache is not None:
                cache.append(h)
        return h[0] if squeeze else h

    def backward(self, cache: list, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. parameters and the input.

        Returns (grads, grad_input); grads interleave [dW0, db0, dW1, ...] to
        match parameters().
        """
        g = np.atleast_2d(np.asarray(grad_out, dtype=float)).astype(float)
        acts = cache
        last = len(self.weights) - 1
        grads = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            out_i = acts[i + 1]
            if i == last and self.output == TANH:
                g = g * (1.0 - out_i * out_i)
            elif i < last:
                g = g * (out_i > 0.0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def input_gradient(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        cache: list = []
        self.forward(x, cache)
        _, gin = self.backward(cache, grad_out)
        return gin


class Adam:
    """Adam over a network's parameter list; lr can be re-assigned per episode."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def sync_target(main: Mlp, target: Mlp, mix: float = 1.0) -> None:
    """Polyak mix of main into target; mix=1 is a hard copy."""
    for pt, pm in zip(target.parameters(), main.parameters()):
        if mix >= 1.0:
            pt[...] = pm
        else:
            pt *= 1.0 - mix
            pt += mix * pm


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_networks(path, nets: dict, meta: dict | None = None) -> None:
    """Write named networks (and optional JSON-able metadata) to one .npz file."""
    arrays = {}
    spec = {"version": CHECKPOINT_VERSION, "nets": {}, "meta": meta or {}}
    for name, net in nets.items():
        spec["nets"][name] = {"sizes": net.sizes, "output": net.output}
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}/W{i}"] = w
            arrays[f"{name}/b{i}"] = b
    arrays["__spec__"] = np.frombuffer(
        json.dumps(spec, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_networks(path):
    """Inverse of save_networks; round-trips parameters bit-exactly."""
    with np.load(path) as data:
        spec = json.loads(bytes(data["__spec__"]).decode("utf-8"))
        if spec["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {spec['version']}")
        nets = {}
        for name, info in spec["nets"].items():
            net = Mlp.__new__(Mlp)
            net.sizes = list(info["sizes"])
            net.output = info["output"]
            net.weights = []
            net.biases = []
            for i in range(len(net.sizes) - 1):
                net.weights.append(data[f"{name}/W{i}"].copy())
                net.biases.append(data[f"{name}/b{i}"].copy())
            nets[name] = net
    return nets, spec["meta"]
