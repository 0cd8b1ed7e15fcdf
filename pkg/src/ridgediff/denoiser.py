"""Noise-prediction network, Adam optimizer and training loop.

The network is a small U-shaped encoder-decoder.  Every level holds one
residual block of two 3x3 convolutions, each followed by per-sample
channel normalization and SiLU, with the timestep embedding projected and
added after the first normalization.  The encoder halves the resolution
after each level by 2x2 averaging; the decoder mixes channels down at the
coarse resolution, upsamples by nearest-neighbor repetition and adds the
matching encoder activation.
"""

from __future__ import annotations

import csv
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .diffusion import BranchSpec, NoiseSchedule, branch_identities, linear_schedule, sample, to_latent
from .errors import DimensionMismatch, InvalidArchitecture, IoFailure, MalformedHeader, NonFiniteLoss
from .imagecore import as_array
from .validation import check_images

log = logging.getLogger(__name__)

MAGIC = b"DFCK"
# samples per forward call; small chunks keep activations in cache
CHUNK = 2
# normalization statistics span every channel of a sample (one group)
NORM_GROUPS = 1
VERSION = 1


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(t w_k), cos(t w_k)]`` with geometric ``w_k``."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def channel_plan(init_features: int, depth: int) -> list[int]:
    return [init_features * 2**i for i in range(depth + 1)]


def _block_shapes(prefix, cin, cout, temb):
    shapes = {
        f"{prefix}.conv1.w": (3, 3, cin, cout), f"{prefix}.conv1.b": (cout,),
        f"{prefix}.norm1.scale": (cout,), f"{prefix}.norm1.shift": (cout,),
        f"{prefix}.temb.w": (temb, cout), f"{prefix}.temb.b": (cout,),
        f"{prefix}.conv2.w": (3, 3, cout, cout), f"{prefix}.conv2.b": (cout,),
        f"{prefix}.norm2.scale": (cout,), f"{prefix}.norm2.shift": (cout,),
    }
    if cin != cout:
        shapes[f"{prefix}.skip.w"] = (cin, cout)
        shapes[f"{prefix}.skip.b"] = (cout,)
    return shapes


def parameter_shapes(init_features: int, depth: int, time_embed_dim: int) -> dict[str, tuple]:
    """Ordered mapping of parameter name to shape for an architecture."""
    ch = channel_plan(init_features, depth)
    e = time_embed_dim
    shapes = {"time.fc1.w": (e, e), "time.fc1.b": (e,), "time.fc2.w": (e, e), "time.fc2.b": (e,),
              "in.w": (3, 3, 1, ch[0]), "in.b": (ch[0],)}
    prev = ch[0]
    for i in range(depth):
        shapes.update(_block_shapes(f"enc{i}", prev, ch[i], e))
        prev = ch[i]
    shapes.update(_block_shapes("mid", ch[depth - 1], ch[depth], e))
    for i in reversed(range(depth)):
        shapes[f"up{i}.w"] = (3, 3, ch[i + 1], ch[i])
        shapes[f"up{i}.b"] = (ch[i],)
        shapes.update(_block_shapes(f"dec{i}", ch[i], ch[i], e))
    shapes["out.w"] = (3, 3, ch[0], 1)
    shapes["out.b"] = (1,)
    return shapes


def _fan_in(name: str, shape: tuple) -> int:
    if len(shape) == 4:
        return shape[0] * shape[1] * shape[2]
    return shape[0]


class DenoiserModel:
    """Callable ``model(x, t)`` returning predicted noise for a batch.

    ``x`` has shape ``(N, side, side)`` and ``t`` holds N integer steps.
    """

    def __init__(self, params: dict[str, np.ndarray], side: int, init_features: int, depth: int,
                 time_embed_dim: int, dtype=np.float32):
        self.side = int(side)
        self.init_features = int(init_features)
        self.depth = int(depth)
        self.time_embed_dim = int(time_embed_dim)
        self.dtype = np.dtype(dtype)
        self.chunk = CHUNK
        expected = parameter_shapes(self.init_features, self.depth, self.time_embed_dim)
        if list(expected) != list(params):
            raise InvalidArchitecture("parameter names do not match the architecture")
        self.params = {}
        for name, shape in expected.items():
            arr = np.asarray(params[name], dtype=self.dtype)
            if arr.shape != shape:
                raise InvalidArchitecture(f"{name} has shape {arr.shape}, expected {shape}")
            self.params[name] = ad.Tensor(arr.copy(), requires_grad=True)

    # --- bookkeeping

    def named_parameters(self):
        return list(self.params.items())

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def astype(self, dtype) -> "DenoiserModel":
        return DenoiserModel(self.state_dict(), self.side, self.init_features, self.depth,
                             self.time_embed_dim, dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # --- forward

    def _block(self, prefix, h, temb):
        P = self.params
        x = h
        h = ad.conv3x3(h, P[f"{prefix}.conv1.w"], P[f"{prefix}.conv1.b"])
        g = NORM_GROUPS
        h = ad.group_norm(h, P[f"{prefix}.norm1.scale"], P[f"{prefix}.norm1.shift"], g)
        h = ad.add_channel(h, ad.linear(temb, P[f"{prefix}.temb.w"], P[f"{prefix}.temb.b"]))
        h = ad.silu(h)
        h = ad.conv3x3(h, P[f"{prefix}.conv2.w"], P[f"{prefix}.conv2.b"])
        h = ad.group_norm(h, P[f"{prefix}.norm2.scale"], P[f"{prefix}.norm2.shift"], g)
        h = ad.silu(h)
        if f"{prefix}.skip.w" in P:
            x = ad.conv1x1(x, P[f"{prefix}.skip.w"], P[f"{prefix}.skip.b"])
        return ad.add(h, x)

    def forward(self, x, t) -> ad.Tensor:
        """Graph-recording forward pass on an ``(N, side, side)`` batch."""
        x = np.asarray(x)
        t = np.asarray(t)
        if x.ndim != 3 or x.shape[1:] != (self.side, self.side):
            raise DimensionMismatch(f"expected (N, {self.side}, {self.side}), got {x.shape}")
        if t.shape != (x.shape[0],):
            raise DimensionMismatch(f"need one step per sample, got t of shape {t.shape}")
        P = self.params
        emb = timestep_embedding(t, self.time_embed_dim).astype(self.dtype)
        temb = ad.linear(emb, P["time.fc1.w"], P["time.fc1.b"])
        temb = ad.linear(ad.silu(temb), P["time.fc2.w"], P["time.fc2.b"])
        temb = ad.silu(temb)
        h = ad.conv3x3(x.astype(self.dtype)[..., None], P["in.w"], P["in.b"])
        skips = []
        for i in range(self.depth):
            h = self._block(f"enc{i}", h, temb)
            skips.append(h)
            h = ad.avgpool2(h)
        h = self._block("mid", h, temb)
        for i in reversed(range(self.depth)):
            h = ad.conv3x3(h, P[f"up{i}.w"], P[f"up{i}.b"])
            h = ad.add(ad.upsample2(h), skips[i])
            h = self._block(f"dec{i}", h, temb)
        out = ad.conv3x3(h, P["out.w"], P["out.b"])
        return out

    def __call__(self, x, t) -> np.ndarray:
        """Gradient-free prediction, evaluated a few samples at a time for cache locality."""
        x = np.asarray(x)
        t = np.asarray(t)
        with ad.no_grad():
            parts = [self.forward(x[i : i + self.chunk], t[i : i + self.chunk]).data[..., 0]
                     for i in range(0, max(len(x), 1), self.chunk)]
        return np.concatenate(parts, axis=0)


def init_model(init_features: int = 32, side: int = 64, seed: int = 0, depth: int = 2,
               time_embed_dim: int = 128, dtype=np.float32) -> DenoiserModel:
    """Fan-in scaled uniform weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; zero biases and norms."""
    if depth < 1 or init_features < 1 or time_embed_dim < 2 or time_embed_dim % 2:
        raise InvalidArchitecture("need depth >= 1, init_features >= 1 and an even time_embed_dim >= 2")
    if side < 2**depth or side % 2**depth:
        raise InvalidArchitecture(f"side {side} is not divisible by 2^{depth}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(init_features, depth, time_embed_dim).items():
        if name.endswith(".w"):
            bound = 1.0 / np.sqrt(_fan_in(name, shape))
            # open interval keeps every value strictly inside (-1, 1)
            params[name] = rng.uniform(-bound, bound, size=shape) * (1.0 - 1e-7)
        else:
            params[name] = np.zeros(shape)
    return DenoiserModel(params, side, init_features, depth, time_embed_dim, dtype)


def predict_noise(model: DenoiserModel, x_t, t) -> np.ndarray:
    return model(x_t, t)


# --------------------------------------------------------------------------- loss, optimizer


def loss_and_grad(model: DenoiserModel, x0_batch, s: NoiseSchedule, rng: np.random.Generator):
    """Noise-regression loss on one batch with gradients left in each parameter's ``grad``.

    The loss is the mean squared error over every element, so a zero
    predictor scores about 1.
    """
    x0 = np.asarray(x0_batch, dtype=np.float64)
    if x0.ndim != 3 or x0.shape[0] == 0:
        raise DimensionMismatch("need a non-empty (N, side, side) batch")
    t = rng.integers(1, s.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    ab = s.alpha_bar[t - 1][:, None, None]
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return loss_on(model, xt, t, eps)


def loss_on(model: DenoiserModel, xt, t, eps):
    """Batch loss and gradients, accumulated chunk by chunk in a fixed order."""
    model.zero_grad()
    n = len(xt)
    target = np.asarray(eps, dtype=model.dtype)[..., None]
    value = 0.0
    for i in range(0, n, model.chunk):
        j = min(n, i + model.chunk)
        loss = ad.mse(model.forward(xt[i:j], t[i:j]), target[i:j])
        part = float(loss.data) * (j - i) / n
        if not np.isfinite(part):
            model.zero_grad()
            raise NonFiniteLoss(f"loss is {part}")
        loss.backward(np.asarray((j - i) / n, dtype=model.dtype))
        value += part
    return value, {k: p.grad for k, p in model.params.items()}


class Adam:
    def __init__(self, params: dict[str, ad.Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    steps: int = 500
    learning_rate: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


def corpus_array(corpus) -> np.ndarray:
    """Stack equal-sized square images into an ``(N, side, side)`` latent array."""
    arrays = [as_array(im) for im in corpus]
    if not arrays:
        raise ValueError("training corpus is empty")
    shape = arrays[0].shape
    if shape[0] != shape[1] or any(a.shape != shape for a in arrays):
        raise DimensionMismatch("training images must be square and of equal size")
    return to_latent(np.stack(arrays))


def train(model: DenoiserModel, corpus, s: NoiseSchedule, cfg: TrainConfig,
          checkpoint_path=None, progress=None):
    """Run ``cfg.steps`` Adam updates on reshuffled mini-batches.

    Returns ``(model, losses)``.  A non-finite loss restores the last good
    parameters, saves them to ``checkpoint_path`` when given, and re-raises.
    """
    data = corpus_array(corpus)
    if data.shape[1] != model.side:
        raise DimensionMismatch(f"corpus side {data.shape[1]} differs from model side {model.side}")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate)
    order = rng.permutation(len(data))
    pos = 0
    losses = []
    last_good = model.state_dict()
    for step in range(1, cfg.steps + 1):
        idx = []
        while len(idx) < cfg.batch_size:
            if pos == len(order):
                order, pos = rng.permutation(len(data)), 0
            take = min(cfg.batch_size - len(idx), len(order) - pos)
            idx.extend(order[pos : pos + take].tolist())
            pos += take
        try:
            value, _ = loss_and_grad(model, data[idx], s, rng)
        except NonFiniteLoss:
            _load_into(model, last_good)
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
            raise
        opt.step()
        losses.append(value)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            last_good = model.state_dict()
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
        if progress is not None:
            progress(step, value)
    return model, losses


def _load_into(model: DenoiserModel, values: dict) -> None:
    for k, v in values.items():
        model.params[k].data[...] = v


def write_loss_csv(losses, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss"])
            for i, v in enumerate(losses, 1):
                w.writerow([i, repr(float(v))])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(model: DenoiserModel, path) -> None:
    """Write the versioned binary container; values are stored as float64."""
    parts = [MAGIC, struct.pack("<5I", VERSION, model.side, model.init_features, model.depth,
                                model.time_embed_dim)]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{p.data.ndim}I", p.data.ndim, *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(b"".join(parts))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, dtype=np.float32) -> DenoiserModel:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != MAGIC:
        raise MalformedHeader("not a checkpoint file (bad magic)")
    try:
        version, side, feats, depth, temb = struct.unpack_from("<5I", buf, 4)
        if version != VERSION:
            raise MalformedHeader(f"unsupported checkpoint version {version}")
        off = 24
        params = {}
        while off < len(buf):
            (n,) = struct.unpack_from("<I", buf, off)
            name = buf[off + 4 : off + 4 + n].decode("utf-8")
            off += 4 + n
            (rank,) = struct.unpack_from("<I", buf, off)
            dims = struct.unpack_from(f"<{rank}I", buf, off + 4)
            off += 4 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            end = off + 8 * count
            if end > len(buf):
                raise MalformedHeader(f"truncated record for {name}")
            params[name] = np.frombuffer(buf[off:end], dtype="<f8").reshape(dims)
            off = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"corrupt checkpoint: {exc}") from exc
    try:
        return DenoiserModel(params, side, feats, depth, temb, dtype)
    except InvalidArchitecture as exc:
        raise MalformedHeader(str(exc)) from exc


# --------------------------------------------------------------------------- estimator


class DiffusionFingerprintGenerator(BaseEstimator):
    """Estimator wrapper: ``fit`` trains on images, ``sample`` and ``impressions`` generate."""

    def __init__(self, init_features=32, depth=2, time_embed_dim=128, T=1000, beta_start=1e-4,
                 beta_end=0.02, batch_size=16, steps=500, learning_rate=1e-4, seed=0,
                 branch_d=400, branch_k=4, sample_batch=64):
        self.init_features = init_features
        self.depth = depth
        self.time_embed_dim = time_embed_dim
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.batch_size = batch_size
        self.steps = steps
        self.learning_rate = learning_rate
        self.seed = seed
        self.branch_d = branch_d
        self.branch_k = branch_k
        self.sample_batch = sample_batch

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def fit(self, X, y=None, progress=None):
        X = check_images(X, square=True, same_size=True)
        data = corpus_array(X)
        side = data.shape[1]
        self.model_ = init_model(self.init_features, side, self.seed, self.depth, self.time_embed_dim)
        cfg = TrainConfig(self.batch_size, self.steps, self.learning_rate, self.seed)
        self.model_, self.loss_trace_ = train(self.model_, X, self.schedule(), cfg, progress=progress)
        self.side_ = side
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before sampling")

    def sample(self, n: int, seed: int | None = None):
        self._check_fitted()
        rng = np.random.default_rng(self.seed if seed is None else seed)
        return sample(self.model_, self.schedule(), self.model_.side, rng, n, self.sample_batch)

    def impressions(self, n_identities: int, seed: int | None = None):
        self._check_fitted()
        rng = np.random.default_rng(self.seed if seed is None else seed)
        spec = BranchSpec(self.branch_d, self.branch_k)
        return branch_identities(self.model_, self.schedule(), spec, self.model_.side, rng,
                                 n_identities, self.sample_batch)
