"""Dueling Q-network in plain numpy, with exact gradients and Adam.

Q(x, .) = V(x) + A(x, .) - mean(A(x, .)) where V and A are linear heads on
top of a ReLU MLP trunk. Action order is (Go, NotGo).
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "pedcross-qnet"
CHECKPOINT_VERSION = 1
N_ACTIONS = 2


def dueling_aggregate(v, a) -> np.ndarray:
    """Combine state value(s) ``v`` and advantages ``a`` (last axis = actions)."""
    a = np.asarray(a)
    return np.asarray(v)[..., None] + a - a.mean(axis=-1, keepdims=True)


def relu(x):
    return np.maximum(x, 0)


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= (step * m / (np.sqrt(v) + self.eps)).astype(params[k].dtype, copy=False)


class QNetwork:
    def __init__(self, input_dim: int, hidden=(512, 256), dtype=np.float32, rng=None,
                 mode: str = "noisy", sigma_v: float | None = None):
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.dtype = np.dtype(dtype)
        self.mode = mode
        self.sigma_v = sigma_v
        self.optimizer: Adam | None = None
        rng = np.random.default_rng(rng)
        self.params: dict[str, np.ndarray] = {}
        fan_in = self.input_dim
        for i, h in enumerate(self.hidden):
            bound = np.sqrt(6.0 / fan_in)
            self.params[f"W{i}"] = rng.uniform(-bound, bound, (fan_in, h)).astype(self.dtype)
            self.params[f"b{i}"] = np.zeros(h, self.dtype)
            fan_in = h
        bound = 1.0 / np.sqrt(fan_in)
        self.params["Wv"] = rng.uniform(-bound, bound, (fan_in, 1)).astype(self.dtype)
        self.params["bv"] = np.zeros(1, self.dtype)
        self.params["Wa"] = rng.uniform(-bound, bound, (fan_in, N_ACTIONS)).astype(self.dtype)
        self.params["ba"] = np.zeros(N_ACTIONS, self.dtype)

    @property
    def param_order(self) -> list[str]:
        return list(self.params)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "QNetwork":
        new = QNetwork.__new__(QNetwork)
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.optimizer = None
        return new

    def load_params_from(self, other: "QNetwork") -> None:
        for k, v in other.params.items():
            self.params[k][...] = v

    # -- forward / backward ---------------------------------------------------
    def _forward(self, x):
        p = self.params
        acts = [x]
        h = x
        for i in range(len(self.hidden)):
            h = relu(h @ p[f"W{i}"] + p[f"b{i}"])
            acts.append(h)
        v = (h @ p["Wv"] + p["bv"])[..., 0]
        a = h @ p["Wa"] + p["ba"]
        return dueling_aggregate(v, a), acts

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has dimension {x.shape[-1]}, network expects {self.input_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        """Q-values for one input vector (shape (2,)) or a batch (shape (n, 2))."""
        return self._forward(self._check(x))[0]

    __call__ = forward

    def greedy(self, x) -> np.ndarray:
        """Greedy actions; exact ties go to NotGo."""
        q = self.forward(x)
        return (q[..., 1] >= q[..., 0]).astype(np.int64)

    def loss_and_grads(self, x, actions, targets):
        """Mean squared TD error of the taken actions and its exact gradient."""
        x = self._check(x)
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=self.dtype)
        n = x.shape[0]
        q, acts = self._forward(x)
        rows = np.arange(n)
        err = q[rows, actions] - targets
        loss = float(np.mean(err.astype(np.float64) ** 2))

        dq = np.zeros_like(q)
        dq[rows, actions] = 2 * err / n
        dv = dq.sum(axis=1)
        da = dq - dq.mean(axis=1, keepdims=True)
        p = self.params
        h = acts[-1]
        grads = {
            "Wv": h.T @ dv[:, None],
            "bv": dv.sum(keepdims=True),
            "Wa": h.T @ da,
            "ba": da.sum(axis=0),
        }
        dh = dv[:, None] @ p["Wv"].T + da @ p["Wa"].T
        for i in reversed(range(len(self.hidden))):
            dz = dh * (acts[i + 1] > 0)
            grads[f"W{i}"] = acts[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i:
                dh = dz @ p[f"W{i}"].T
        return loss, {k: grads[k] for k in self.params}


def train_step(net: QNetwork, batch, lr: float = 1e-3, clip: float | None = None) -> float:
    """One Adam step on a batch of ``(x, action, target)``; returns the pre-update loss.

    ``batch`` may be a list of triples or a tuple of three stacked arrays.
    """
    if isinstance(batch, tuple) and len(batch) == 3 and np.ndim(batch[0]) == 2:
        x, actions, targets = batch
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        x, actions, targets = (np.array(c) for c in zip(*batch))
    if not np.all(np.isfinite(targets)):
        raise FloatingPointError("non-finite TD target")
    loss, grads = net.loss_and_grads(x, actions, targets)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}; max |target| = {np.max(np.abs(targets))}")
    if clip is not None:
        norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        if norm > clip:
            grads = {k: g * (clip / norm) for k, g in grads.items()}
    if net.optimizer is None:
        net.optimizer = Adam(lr)
    net.optimizer.lr = lr
    net.optimizer.update(net.params, grads)
    return loss


# --- checkpoints -------------------------------------------------------------
_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(net: QNetwork, path: str | Path, train_config: dict | None = None,
                    extra: dict | None = None) -> None:
    """Write a zip of ``header.json`` plus one ``.npy`` per parameter.

    Entries carry a fixed timestamp so identical networks give identical bytes.
    The archive is readable with ``numpy.load``.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": net.input_dim,
        "hidden": list(net.hidden),
        "n_actions": N_ACTIONS,
        "dtype": net.dtype.name,
        "mode": net.mode,
        "sigma_v": net.sigma_v,
        "param_order": net.param_order,
        "train_config": train_config or {},
        **(extra or {}),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("header.json", _EPOCH)
        zf.writestr(info, json.dumps(header, indent=1, sort_keys=True))
        for name in net.param_order:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, net.params[name], allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", _EPOCH), buf.getvalue())


def read_header(path: str | Path) -> dict:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header


def load_checkpoint(path: str | Path) -> tuple[QNetwork, dict]:
    header = read_header(path)
    net = QNetwork(header["input_dim"], header["hidden"], dtype=header["dtype"], rng=0,
                   mode=header["mode"], sigma_v=header["sigma_v"])
    with zipfile.ZipFile(path) as zf:
        for name in header["param_order"]:
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            if arr.shape != net.params[name].shape:
                raise ValueError(f"{path}: parameter {name} has shape {arr.shape}, "
                                 f"expected {net.params[name].shape}")
            net.params[name] = arr
    return net, header
