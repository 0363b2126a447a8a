"""Two-layer LSTM encoder-decoder with a hand-written backward pass.

The encoder reads the ``H x 30`` history; its final ``(h, c)`` per layer
seeds the decoder, which runs ``P`` steps autoregressively. Decoder step
``t`` receives the position emitted at step ``t - 1`` (zeros at the first
step), and a linear head maps the top hidden state to ``(x, y)`` in units
of ``output_scale`` metres, which keeps the fed-back positions near unit
range.

Gate order inside every ``4h`` block is input, forget, cell, output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 30
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.2
    horizon: int = 30
    out_dim: int = 2
    output_scale: float = 10.0  # metres per head unit; feedback uses the unscaled head output

    def __post_init__(self):
        if self.hidden <= 0 or self.layers <= 0 or self.horizon <= 0:
            raise ContractError("hidden, layers and horizon must be positive")
        if not self.output_scale > 0:
            raise ContractError(f"output_scale must be positive, got {self.output_scale}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")

    def with_horizon(self, horizon: int) -> ModelConfig:
        return replace(self, horizon=horizon)

    def layer_input(self, part: str, layer: int) -> int:
        if layer > 0:
            return self.hidden
        return self.input_dim if part == "enc" else self.out_dim


def param_shapes(config: ModelConfig) -> dict:
    """Ordered mapping of tensor name to shape."""
    h = config.hidden
    shapes = {}
    for part in ("enc", "dec"):
        for layer in range(config.layers):
            n_in = config.layer_input(part, layer)
            shapes[f"{part}.{layer}.W_x"] = (4 * h, n_in)
            shapes[f"{part}.{layer}.W_h"] = (4 * h, h)
            shapes[f"{part}.{layer}.b_x"] = (4 * h,)
            shapes[f"{part}.{layer}.b_h"] = (4 * h,)
    shapes["proj.W"] = (config.out_dim, h)
    shapes["proj.b"] = (config.out_dim,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def count(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> ModelParams:
        return ModelParams(self.config, {k: np.zeros_like(v) for k, v in self.tensors.items()})

    def astype(self, dtype) -> ModelParams:
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def unflatten(self, flat) -> ModelParams:
        out, pos = {}, 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(flat[pos : pos + v.size], dtype=v.dtype).reshape(v.shape)
            pos += v.size
        return ModelParams(self.config, out)

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(v, dtype=np.float64))) for v in self.tensors.values())))

    def equals(self, other: ModelParams) -> bool:
        return self.config == other.config and self.tensors.keys() == other.tensors.keys() and all(
            np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()
        )


def expected_param_count(config: ModelConfig) -> int:
    h = config.hidden
    total = 0
    for part in ("enc", "dec"):
        for layer in range(config.layers):
            total += 4 * h * (config.layer_input(part, layer) + h) + 8 * h
    return total + config.out_dim * h + config.out_dim


def init_params(config: ModelConfig, seed: int = 42, dtype=np.float64) -> ModelParams:
    """Uniform ``+-1/sqrt(hidden)`` weights; forget-gate bias starts at +1."""
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(config.hidden)
    h = config.hidden
    tensors = {}
    for name, shape in param_shapes(config).items():
        arr = rng.uniform(-k, k, size=shape)
        if name.endswith(".b_x"):
            arr[h : 2 * h] = 1.0
        elif name.endswith(".b_h"):
            arr[h : 2 * h] = 0.0
        tensors[name] = arr.astype(dtype)
    return ModelParams(config, tensors)


def _sigmoid(x):
    # tanh form is overflow-free and accurate in both tails
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _cell(z, c_prev, h):
    i = _sigmoid(z[:, :h])
    f = _sigmoid(z[:, h : 2 * h])
    g = np.tanh(z[:, 2 * h : 3 * h])
    o = _sigmoid(z[:, 3 * h :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return i, f, g, o, c, tc, o * tc


class DropoutMasks:
    """Inverted-dropout masks between stacked layers, fresh at every step."""

    def __init__(self, p: float, rng: np.random.Generator | None, dtype):
        self.p = p
        self.rng = rng
        self.dtype = dtype
        self.active = p > 0 and rng is not None

    def draw(self, shape):
        if not self.active:
            return None
        keep = self.rng.random(shape) >= self.p
        return keep.astype(self.dtype) * self.dtype.type(1.0 / (1.0 - self.p))


def _check_history(params: ModelParams, history):
    x = np.asarray(history)
    cfg = params.config
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise ContractError(f"history must be shaped (N, H, {cfg.input_dim}), got {x.shape}")
    return x.astype(params.dtype, copy=False)


def forward(params: ModelParams, history, dropout_on: bool = False, rng=None, keep_cache: bool = False):
    """Predict ``(N, P, 2)`` anchor-relative positions for ``(N, H, 30)`` histories.

    A single ``(H, 30)`` history yields ``(P, 2)``. With ``dropout_on`` the
    masks are drawn from ``rng``. ``keep_cache=True`` also returns the
    activations needed by :func:`backward`.
    """
    single = np.ndim(history) == 2
    x = _check_history(params, np.asarray(history)[None] if single else history)
    cfg = params.config
    N, H, _ = x.shape
    h, L, P = cfg.hidden, cfg.layers, cfg.horizon
    dt = params.dtype
    masks = DropoutMasks(cfg.dropout if dropout_on else 0.0, rng, dt)
    if dropout_on and rng is None and cfg.dropout > 0:
        raise ContractError("dropout_on requires an rng")

    hs = [np.zeros((N, h), dtype=dt) for _ in range(L)]
    cs = [np.zeros((N, h), dtype=dt) for _ in range(L)]
    cache = {"enc": [], "dec": [], "x": x} if keep_cache else None

    # layer-0 input projection for every encoder step at once
    zx0 = (x.reshape(N * H, -1) @ params["enc.0.W_x"].T).reshape(N, H, 4 * h)
    zx0 += params["enc.0.b_x"] + params["enc.0.b_h"]
    for t in range(H):
        step = []
        inp = None
        for layer in range(L):
            if layer == 0:
                z = zx0[:, t] + hs[0] @ params["enc.0.W_h"].T
                mask = None
            else:
                mask = masks.draw((N, h))
                inp = hs[layer - 1] if mask is None else hs[layer - 1] * mask
                z = inp @ params[f"enc.{layer}.W_x"].T + hs[layer] @ params[f"enc.{layer}.W_h"].T
                z += params[f"enc.{layer}.b_x"] + params[f"enc.{layer}.b_h"]
            i, f, g, o, c, tc, hn = _cell(z, cs[layer], h)
            if keep_cache:
                step.append((inp, hs[layer], cs[layer], i, f, g, o, tc, mask))
            hs[layer], cs[layer] = hn, c
        if keep_cache:
            cache["enc"].append(step)

    W_p, b_p = params["proj.W"], params["proj.b"]
    scale = dt.type(cfg.output_scale)
    y = np.zeros((N, cfg.out_dim), dtype=dt)
    out = np.empty((N, P, cfg.out_dim), dtype=dt)
    for t in range(P):
        step = []
        for layer in range(L):
            if layer == 0:
                inp, mask = y, None
            else:
                mask = masks.draw((N, h))
                inp = hs[layer - 1] if mask is None else hs[layer - 1] * mask
            z = inp @ params[f"dec.{layer}.W_x"].T + hs[layer] @ params[f"dec.{layer}.W_h"].T
            z += params[f"dec.{layer}.b_x"] + params[f"dec.{layer}.b_h"]
            i, f, g, o, c, tc, hn = _cell(z, cs[layer], h)
            if keep_cache:
                step.append((inp, hs[layer], cs[layer], i, f, g, o, tc, mask))
            hs[layer], cs[layer] = hn, c
        y = hs[-1] @ W_p.T + b_p
        out[:, t] = y * scale
        if keep_cache:
            step.append(hs[-1])
            cache["dec"].append(step)

    if single:
        out = out[0]
    return (out, cache) if keep_cache else out


def _cell_backward(entry, dh, dc_next, h):
    _, h_prev, c_prev, i, f, g, o, tc, _ = entry
    do = dh * tc
    dc = dc_next + dh * o * (1.0 - tc * tc)
    dz = np.empty((dh.shape[0], 4 * h), dtype=dh.dtype)
    dz[:, :h] = dc * g * i * (1.0 - i)
    dz[:, h : 2 * h] = dc * c_prev * f * (1.0 - f)
    dz[:, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
    dz[:, 3 * h :] = do * o * (1.0 - o)
    return dz, dc * f


def backward(params: ModelParams, cache, dpreds) -> ModelParams:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dL/dpreds``."""
    cfg = params.config
    h, L = cfg.hidden, cfg.layers
    dpreds = np.asarray(dpreds, dtype=params.dtype)
    if dpreds.ndim == 2:
        dpreds = dpreds[None]
    grads = params.zeros_like()
    g = grads.tensors
    N = dpreds.shape[0]
    dh = [np.zeros((N, h), dtype=params.dtype) for _ in range(L)]
    dc = [np.zeros((N, h), dtype=params.dtype) for _ in range(L)]
    W_p = params["proj.W"]
    scale = params.dtype.type(cfg.output_scale)

    dy_carry = None
    for t in range(cfg.horizon - 1, -1, -1):
        step = cache["dec"][t]
        h_top = step[-1]
        dy = dpreds[:, t] * scale
        if dy_carry is not None:
            dy = dy + dy_carry
        g["proj.W"] += dy.T @ h_top
        g["proj.b"] += dy.sum(axis=0)
        dh[L - 1] = dh[L - 1] + dy @ W_p
        for layer in range(L - 1, -1, -1):
            entry = step[layer]
            dz, dc[layer] = _cell_backward(entry, dh[layer], dc[layer], h)
            inp, h_prev = entry[0], entry[1]
            g[f"dec.{layer}.W_x"] += dz.T @ inp
            g[f"dec.{layer}.W_h"] += dz.T @ h_prev
            db = dz.sum(axis=0)
            g[f"dec.{layer}.b_x"] += db
            g[f"dec.{layer}.b_h"] += db
            dinp = dz @ params[f"dec.{layer}.W_x"]
            dh[layer] = dz @ params[f"dec.{layer}.W_h"]
            if layer > 0:
                mask = entry[8]
                dh[layer - 1] = dh[layer - 1] + (dinp if mask is None else dinp * mask)
            else:
                dy_carry = dinp  # step t's input is the prediction of step t - 1

    H = len(cache["enc"])
    dz0 = np.empty((N, H, 4 * h), dtype=params.dtype)
    for t in range(H - 1, -1, -1):
        step = cache["enc"][t]
        for layer in range(L - 1, -1, -1):
            entry = step[layer]
            dz, dc[layer] = _cell_backward(entry, dh[layer], dc[layer], h)
            h_prev = entry[1]
            g[f"enc.{layer}.W_h"] += dz.T @ h_prev
            dh[layer] = dz @ params[f"enc.{layer}.W_h"]
            if layer > 0:
                g[f"enc.{layer}.W_x"] += dz.T @ entry[0]
                db = dz.sum(axis=0)
                g[f"enc.{layer}.b_x"] += db
                g[f"enc.{layer}.b_h"] += db
                dinp = dz @ params[f"enc.{layer}.W_x"]
                mask = entry[8]
                dh[layer - 1] = dh[layer - 1] + (dinp if mask is None else dinp * mask)
            else:
                dz0[:, t] = dz
    x = cache["x"]
    g["enc.0.W_x"] += dz0.reshape(N * H, -1).T @ x.reshape(N * H, -1)
    db0 = dz0.sum(axis=(0, 1))
    g["enc.0.b_x"] += db0
    g["enc.0.b_h"] += db0
    return grads


@dataclass
class PredictionSet:
    samples: np.ndarray  # (K, N, P, 2) or (K, P, 2)
    anchor: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def predict(params: ModelParams, history, batch_size: int = 1024, dropout_on: bool = False, rng=None) -> np.ndarray:
    """Batched :func:`forward` over many histories."""
    history = np.asarray(history)
    if history.ndim == 2:
        return forward(params, history, dropout_on, rng)
    parts = [
        forward(params, history[s : s + batch_size], dropout_on, rng)
        for s in range(0, len(history), batch_size)
    ]
    if not parts:
        return np.empty((0, params.config.horizon, params.config.out_dim), dtype=params.dtype)
    return np.concatenate(parts)


def mc_dropout_predict(params: ModelParams, history, K: int = 20, seed: int = 42, anchor=None,
                       batch_size: int = 1024) -> PredictionSet:
    """``K`` stochastic passes with dropout active and independent seeded masks."""
    if K < 1:
        raise ContractError("K must be at least 1")
    rng = np.random.default_rng(seed)
    samples = np.stack([predict(params, history, batch_size, dropout_on=True, rng=rng) for _ in range(K)])
    return PredictionSet(samples, None if anchor is None else np.asarray(anchor, dtype=float))
