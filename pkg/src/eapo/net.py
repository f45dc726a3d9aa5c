"""NumPy actor-critic network with hand-written reverse and forward mode.

The network maps an observation batch to policy logits and two normalized
critic outputs (task value and trajectory entropy). All parameters live in
one flat float64 vector; ``layout`` names the slices.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NoCachedForward(RuntimeError):
    pass


class DegenerateSigma(UserWarning):
    pass


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def orthogonal(rng: np.random.Generator, shape: Tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass
class PopArtStats:
    mu: float = 0.0
    nu: float = 1.0
    beta: float = 0.03
    sigma_min: float = 1e-4
    sigma_max: float = 1e6

    @property
    def sigma(self) -> float:
        var = max(self.nu - self.mu * self.mu, self.sigma_min ** 2)
        return min(max(math.sqrt(var), self.sigma_min), self.sigma_max)

    def normalize(self, x):
        return (x - self.mu) / self.sigma

    def denormalize(self, y):
        return y * self.sigma + self.mu


def popart_update_and_rescale(stats: PopArtStats, weight: np.ndarray, bias: np.ndarray,
                              targets: np.ndarray) -> Tuple[PopArtStats, np.ndarray, np.ndarray]:
    """Move the target statistics towards ``targets`` and rewrite the head.

    The rewritten head satisfies ``sigma' * y' + mu' == sigma * y + mu`` for
    every trunk feature, so denormalized predictions are preserved.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("PopArt update needs a nonempty batch")
    mean = float(targets.mean())
    mean_sq = float((targets * targets).mean())
    new = PopArtStats(mu=stats.mu + stats.beta * (mean - stats.mu),
                      nu=stats.nu + stats.beta * (mean_sq - stats.nu),
                      beta=stats.beta, sigma_min=stats.sigma_min, sigma_max=stats.sigma_max)
    if new.nu - new.mu * new.mu < new.sigma_min ** 2:
        warnings.warn("PopArt scale clamped at sigma_min", DegenerateSigma, stacklevel=2)
    scale = stats.sigma / new.sigma
    return new, weight * scale, bias * scale + (stats.mu - new.mu) / new.sigma


@dataclass
class Cache:
    obs: np.ndarray
    pi_acts: List[np.ndarray]
    vf_acts: List[np.ndarray]


class DualHeadNetwork:
    """Tanh MLP trunk with a policy head and two scalar critic heads.

    With ``shared_trunk`` (default) all heads read one trunk. Otherwise the
    policy has its own trunk and the two critic heads share a second one.
    """

    def __init__(self, obs_dim: int, num_actions: int, hidden: Sequence[int] = (64, 64),
                 shared_trunk: bool = True, seed: Optional[int] = 0,
                 popart_beta: float = 0.03):
        self.obs_dim = int(obs_dim)
        self.num_actions = int(num_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.shared_trunk = shared_trunk
        self.layout: List[Tuple[str, Tuple[int, ...]]] = []
        trunks = ["trunk"] if shared_trunk else ["pi_trunk", "vf_trunk"]
        for trunk in trunks:
            fan_in = self.obs_dim
            for i, width in enumerate(self.hidden):
                self.layout += [(f"{trunk}.{i}.w", (fan_in, width)), (f"{trunk}.{i}.b", (width,))]
                fan_in = width
        feat = self.hidden[-1] if self.hidden else self.obs_dim
        self.layout += [("policy.w", (feat, self.num_actions)), ("policy.b", (self.num_actions,)),
                        ("value.w", (feat, 1)), ("value.b", (1,)),
                        ("entropy.w", (feat, 1)), ("entropy.b", (1,))]
        self.offsets: Dict[str, Tuple[int, int]] = {}
        n = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.offsets[name] = (n, n + size)
            n += size
        self.params = np.zeros(n)
        self.popart_v = PopArtStats(beta=popart_beta)
        self.popart_h = PopArtStats(beta=popart_beta)
        self._cache: Optional[Cache] = None
        if seed is not None:
            self.initialize(np.random.default_rng(seed))

    # -- parameter layout -------------------------------------------------

    @property
    def num_params(self) -> int:
        return self.params.size

    def view(self, name: str, params: Optional[np.ndarray] = None) -> np.ndarray:
        lo, hi = self.offsets[name]
        shape = dict(self.layout)[name]
        src = self.params if params is None else params
        return src[lo:hi].reshape(shape)

    def unflatten(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: self.view(name, flat).copy() for name, _ in self.layout}

    def flatten(self, arrays: Dict[str, np.ndarray]) -> np.ndarray:
        out = np.empty(self.num_params)
        for name, shape in self.layout:
            lo, hi = self.offsets[name]
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != tuple(shape):
                raise ShapeMismatch(f"{name}: {a.shape} != {shape}")
            out[lo:hi] = a.ravel()
        return out

    def mask(self, prefixes: Sequence[str]) -> np.ndarray:
        m = np.zeros(self.num_params, dtype=bool)
        for name, _ in self.layout:
            if name.startswith(tuple(prefixes)):
                lo, hi = self.offsets[name]
                m[lo:hi] = True
        return m

    @property
    def policy_mask(self) -> np.ndarray:
        """Parameters that influence the logits."""
        return self.mask(["trunk.", "pi_trunk.", "policy."])

    @property
    def entropy_head_mask(self) -> np.ndarray:
        return self.mask(["entropy."])

    def _trunk_names(self, role: str) -> str:
        if self.shared_trunk:
            return "trunk"
        return "pi_trunk" if role == "pi" else "vf_trunk"

    def initialize(self, rng: np.random.Generator) -> None:
        p = np.zeros(self.num_params)
        for name, shape in self.layout:
            if name.endswith(".b"):
                continue
            gain = {"policy.w": 0.01, "value.w": 1.0, "entropy.w": 1.0}.get(name, math.sqrt(2.0))
            lo, hi = self.offsets[name]
            p[lo:hi] = orthogonal(rng, shape, gain).ravel()
        self.params = p

    def copy(self) -> "DualHeadNetwork":
        other = DualHeadNetwork(self.obs_dim, self.num_actions, self.hidden, self.shared_trunk,
                                seed=None)
        other.params = self.params.copy()
        other.popart_v = PopArtStats(**asdict(self.popart_v))
        other.popart_h = PopArtStats(**asdict(self.popart_h))
        return other

    # -- forward / backward -------------------------------------------------

    def _trunk_forward(self, trunk: str, x: np.ndarray, params: np.ndarray) -> List[np.ndarray]:
        acts = [x]
        for i in range(len(self.hidden)):
            x = np.tanh(x @ self.view(f"{trunk}.{i}.w", params) + self.view(f"{trunk}.{i}.b", params))
            acts.append(x)
        return acts

    def forward(self, obs: np.ndarray, params: Optional[np.ndarray] = None,
                cache: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(logits, value_norm, entropy_value_norm)`` for a batch or single observation."""
        params = self.params if params is None else params
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        x = obs[None, :] if single else obs
        if x.ndim != 2 or x.shape[1] != self.obs_dim:
            raise ShapeMismatch(f"observation shape {obs.shape} does not match input size {self.obs_dim}")
        pi_acts = self._trunk_forward(self._trunk_names("pi"), x, params)
        vf_acts = pi_acts if self.shared_trunk else self._trunk_forward("vf_trunk", x, params)
        logits = pi_acts[-1] @ self.view("policy.w", params) + self.view("policy.b", params)
        feat = vf_acts[-1]
        v = (feat @ self.view("value.w", params) + self.view("value.b", params))[:, 0]
        h = (feat @ self.view("entropy.w", params) + self.view("entropy.b", params))[:, 0]
        if cache:
            self._cache = Cache(x, pi_acts, vf_acts)
        if single:
            return logits[0], v[0], h[0]
        return logits, v, h

    def _trunk_backward(self, trunk: str, acts: List[np.ndarray], delta: np.ndarray,
                        grad: np.ndarray) -> None:
        for i in reversed(range(len(self.hidden))):
            dz = delta * (1.0 - acts[i + 1] ** 2)
            lo, hi = self.offsets[f"{trunk}.{i}.w"]
            grad[lo:hi] += (acts[i].T @ dz).ravel()
            lo, hi = self.offsets[f"{trunk}.{i}.b"]
            grad[lo:hi] += dz.sum(axis=0)
            if i:
                delta = dz @ self.view(f"{trunk}.{i}.w").T

    def backward(self, dlogits: Optional[np.ndarray] = None, dvalue: Optional[np.ndarray] = None,
                 dentropy: Optional[np.ndarray] = None) -> np.ndarray:
        """Parameter gradient of a scalar loss given its gradient at the three outputs.

        Uses the activations cached by the most recent ``forward`` call.
        """
        if self._cache is None:
            raise NoCachedForward("backward() needs a preceding forward()")
        c = self._cache
        batch = c.obs.shape[0]
        dlogits = np.zeros((batch, self.num_actions)) if dlogits is None else np.reshape(dlogits, (batch, self.num_actions))
        dv = np.zeros(batch) if dvalue is None else np.reshape(dvalue, (batch,))
        dh = np.zeros(batch) if dentropy is None else np.reshape(dentropy, (batch,))
        grad = np.zeros(self.num_params)

        pi_feat, vf_feat = c.pi_acts[-1], c.vf_acts[-1]
        for name, feat, d in (("policy", pi_feat, dlogits), ("value", vf_feat, dv[:, None]),
                              ("entropy", vf_feat, dh[:, None])):
            lo, hi = self.offsets[f"{name}.w"]
            grad[lo:hi] = (feat.T @ d).ravel()
            lo, hi = self.offsets[f"{name}.b"]
            grad[lo:hi] = d.sum(axis=0)

        d_pi = dlogits @ self.view("policy.w").T
        d_vf = dv[:, None] @ self.view("value.w").T + dh[:, None] @ self.view("entropy.w").T
        if not self.hidden:
            return grad
        if self.shared_trunk:
            self._trunk_backward("trunk", c.pi_acts, d_pi + d_vf, grad)
        else:
            self._trunk_backward("pi_trunk", c.pi_acts, d_pi, grad)
            self._trunk_backward("vf_trunk", c.vf_acts, d_vf, grad)
        return grad

    def logits_jvp(self, obs: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """Directional derivative of the logits along a parameter direction."""
        x = np.asarray(obs, dtype=np.float64)
        trunk = self._trunk_names("pi")
        act, dact = x, np.zeros_like(x)
        for i in range(len(self.hidden)):
            w = self.view(f"{trunk}.{i}.w")
            z = act @ w + self.view(f"{trunk}.{i}.b")
            dz = dact @ w + act @ self.view(f"{trunk}.{i}.w", direction) + self.view(f"{trunk}.{i}.b", direction)
            act = np.tanh(z)
            dact = (1.0 - act ** 2) * dz
        return (dact @ self.view("policy.w") + act @ self.view("policy.w", direction)
                + self.view("policy.b", direction))

    # -- critic denormalization -------------------------------------------

    def predict(self, obs: np.ndarray):
        """Logits plus denormalized value and entropy-value predictions."""
        logits, v, h = self.forward(obs, cache=False)
        return logits, self.popart_v.denormalize(v), self.popart_h.denormalize(h)

    def popart_update(self, value_targets: Optional[np.ndarray] = None,
                      entropy_targets: Optional[np.ndarray] = None) -> None:
        if value_targets is not None and len(value_targets):
            self.popart_v, w, b = popart_update_and_rescale(
                self.popart_v, self.view("value.w"), self.view("value.b"), value_targets)
            self._set("value.w", w)
            self._set("value.b", b)
        if entropy_targets is not None and len(entropy_targets):
            self.popart_h, w, b = popart_update_and_rescale(
                self.popart_h, self.view("entropy.w"), self.view("entropy.b"), entropy_targets)
            self._set("entropy.w", w)
            self._set("entropy.b", b)

    def _set(self, name: str, value: np.ndarray) -> None:
        lo, hi = self.offsets[name]
        self.params[lo:hi] = np.asarray(value).ravel()


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update (gradient descent direction); updates ``state`` in place."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeMismatch(f"params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grads
    state.v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> Tuple[np.ndarray, float]:
    norm = float(np.sqrt(grad @ grad))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / (norm + 1e-6))
    return grad, norm


# Checkpoint layout, all little-endian:
#   8 bytes  magic b"EAPOCKPT"
#   u32      format version (1)
#   u32      header length N
#   N bytes  UTF-8 JSON header: obs_dim, num_actions, hidden, shared_trunk,
#            layout [[name, shape], ...], popart_v, popart_h, metadata
#   u64      parameter count P
#   P * f64  flat parameter vector
CHECKPOINT_MAGIC = b"EAPOCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: Union[str, Path], net: DualHeadNetwork, metadata: Optional[dict] = None) -> None:
    header = json.dumps({
        "obs_dim": net.obs_dim, "num_actions": net.num_actions, "hidden": list(net.hidden),
        "shared_trunk": net.shared_trunk,
        "layout": [[name, list(shape)] for name, shape in net.layout],
        "popart_v": asdict(net.popart_v), "popart_h": asdict(net.popart_h),
        "metadata": metadata or {},
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", net.num_params))
        fh.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path: Union[str, Path]) -> Tuple[DualHeadNetwork, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    (count,) = struct.unpack_from("<Q", data, 16 + hlen)
    params = np.frombuffer(data, dtype="<f8", count=count, offset=24 + hlen).astype(np.float64)
    net = DualHeadNetwork(header["obs_dim"], header["num_actions"], header["hidden"],
                          header["shared_trunk"], seed=None)
    if [[n, list(s)] for n, s in net.layout] != header["layout"] or count != net.num_params:
        raise ShapeMismatch("checkpoint layout does not match the network description")
    net.params = params
    net.popart_v = PopArtStats(**header["popart_v"])
    net.popart_h = PopArtStats(**header["popart_h"])
    return net, header["metadata"]
