"""Fourier neural operator smoother with an explicit backward pass.

Architecture (1D or 2D, batched over a leading axis)::

    z = lift_w * u + lift_b                                    # 1 -> c channels
    z = act(Re(IDFT(R . DFT(z))) + W (*) z + B)                # repeated `layers` times
    out = sum_c proj_w[c] * z[c] + proj_b                      # c -> 1 channel

``R`` mixes channels on the retained low modes only and zeros the rest;
``W (*)`` is a channel-mixing convolution with an odd kernel (circular by
default).  In 1D the retained modes are DFT bins ``0..k-1``.  In 2D they are
rows ``0..k-1`` and ``n-k..n-1`` by columns ``0..k-1``, so after taking the
real part every quadrant of the low-frequency square is covered.

Complex weights are stored as real arrays with a trailing ``(re, im)`` axis,
so every parameter is a float64 tensor and real/imaginary parts are trained
as independent reals.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

Params = Dict[str, np.ndarray]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class FnoError(ValueError):
    pass


@dataclass(frozen=True)
class FnoConfig:
    channels: int = 16
    layers: int = 3
    modes: int = 16
    kernel_size: int = 5
    size: tuple = (64,)
    activation: str = "gelu"
    padding: str = "circular"

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        if len(self.size) not in (1, 2):
            raise FnoError("size must describe a 1D or 2D grid")
        if min(self.channels, self.layers, self.modes, self.kernel_size, *self.size) <= 0:
            raise FnoError("all FNO hyperparameters must be positive")
        if self.kernel_size % 2 != 1:
            raise FnoError(f"kernel size must be odd, got {self.kernel_size}")
        if self.kernel_size // 2 > min(self.size):
            raise FnoError(f"kernel size {self.kernel_size} is too wide for grid {self.size}")
        if any(self.modes > s // 2 for s in self.size):
            raise FnoError(f"modes={self.modes} exceeds half the grid size {self.size}")
        if self.activation not in ACTIVATIONS:
            raise FnoError(f"unknown activation {self.activation!r}")
        if self.padding not in ("circular", "zero"):
            raise FnoError(f"unknown padding {self.padding!r}")

    @property
    def ndim(self) -> int:
        return len(self.size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FnoConfig":
        return cls(**{**d, "size": tuple(d["size"])})


# --- activations -------------------------------------------------------------

def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


# --- hyperparameter tables -----------------------------------------------------

# grid cells per axis -> (channels, layers, modes, kernel size)
FULL_SIZE_1D = {64: (64, 4, 16, 5), 128: (64, 4, 32, 5), 256: (64, 5, 64, 7),
             512: (64, 6, 128, 7), 1024: (64, 6, 128, 7)}
FULL_SIZE_2D = {64: (64, 4, 16, 3), 128: (64, 4, 32, 3), 256: (64, 5, 32, 5),
             512: (64, 6, 64, 7), 1024: (64, 6, 64, 7)}


def _table_row(table: dict, n: int):
    keys = sorted(table)
    key = min(keys, key=lambda k: abs(np.log2(k) - np.log2(max(n, 1))))
    return table[key]


def full_size_config(size: tuple) -> FnoConfig:
    """Full-size configuration keyed by the level grid size (nearest tabulated row)."""
    size = tuple(size)
    c, layers, k, ks = _table_row(FULL_SIZE_1D if len(size) == 1 else FULL_SIZE_2D, size[0])
    return FnoConfig(channels=c, layers=layers, modes=min(k, min(size) // 2), kernel_size=ks, size=size)


def desk_config(size: tuple, channels: int = 16, layers: int = 3, kernel_size=None) -> FnoConfig:
    """Reduced configuration for CPU runs: ``c=16``, 3 layers, ``k = n_l/4``."""
    size = tuple(size)
    if kernel_size is None:
        kernel_size = _table_row(FULL_SIZE_1D if len(size) == 1 else FULL_SIZE_2D, size[0])[3]
    return FnoConfig(channels=channels, layers=layers, modes=max(1, min(size) // 4),
                     kernel_size=kernel_size, size=size)


# --- parameters --------------------------------------------------------------

def _spectral_shape(cfg: FnoConfig) -> tuple:
    c, k = cfg.channels, cfg.modes
    return (c, c, k, 2) if cfg.ndim == 1 else (c, c, 2 * k, k, 2)


def param_shapes(cfg: FnoConfig) -> Dict[str, tuple]:
    c, ks = cfg.channels, cfg.kernel_size
    shapes = {"lift.w": (c,), "lift.b": (c,)}
    for i in range(cfg.layers):
        shapes[f"layer{i}.R"] = _spectral_shape(cfg)
        shapes[f"layer{i}.W"] = (c, c) + (ks,) * cfg.ndim
        shapes[f"layer{i}.B"] = (c,)
    shapes["proj.w"] = (c,)
    shapes["proj.b"] = (1,)
    return shapes


def init_params(cfg: FnoConfig, rng: np.random.Generator) -> Params:
    """Uniform fan-in initialization; spectral weights ~ 1/(c k); biases zero."""
    c, k = cfg.channels, cfg.modes
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name.endswith(".B"):
            params[name] = np.zeros(shape)
        elif name == "lift.w":
            params[name] = rng.uniform(-1.0, 1.0, shape)
        elif name == "proj.w":
            params[name] = rng.uniform(-1.0, 1.0, shape) / np.sqrt(c)
        elif name.endswith(".W"):
            fan_in = c * cfg.kernel_size**cfg.ndim
            params[name] = rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)
        else:
            params[name] = rng.uniform(-1.0, 1.0, shape) / (c * k)
    return params


def zeros_like_params(params: Params) -> Params:
    return {name: np.zeros_like(v) for name, v in params.items()}


def check_params(params: Params, cfg: FnoConfig) -> None:
    shapes = param_shapes(cfg)
    if set(shapes) != set(params):
        raise FnoError(f"parameter names do not match config: {sorted(set(shapes) ^ set(params))}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise FnoError(f"{name}: shape {params[name].shape} != {shape}")


# --- building blocks ---------------------------------------------------------

def _spatial_axes(ndim: int) -> tuple:
    return tuple(range(-ndim, 0))


def _pad(z: np.ndarray, r: int, nd: int, padding: str) -> np.ndarray:
    width = [(0, 0)] * (z.ndim - nd) + [(r, r)] * nd
    return np.pad(z, width, mode="wrap" if padding == "circular" else "constant")


def _windows(z: np.ndarray, cfg: FnoConfig) -> np.ndarray:
    """Sliding windows ``(B, c, *S, *K)`` with ``win[..., t, s] = z[..., t + s - r]``."""
    nd, ks = cfg.ndim, cfg.kernel_size
    zp = _pad(z, ks // 2, nd, cfg.padding)
    return sliding_window_view(zp, (ks,) * nd, axis=_spatial_axes(nd))


def _conv(W: np.ndarray, z: np.ndarray, cfg: FnoConfig) -> np.ndarray:
    nd = cfg.ndim
    win = _windows(z, cfg)
    # contract input channel and kernel offsets: (B, *S, c_out)
    out = np.tensordot(win, W, axes=([1] + [2 + nd + j for j in range(nd)], [1] + [2 + j for j in range(nd)]))
    return np.moveaxis(out, -1, 1)


def _conv_backward(W, z, g, cfg):
    nd, ks = cfg.ndim, cfg.kernel_size
    r = ks // 2
    win = _windows(z, cfg)
    sp = list(range(2, 2 + nd))
    gW = np.tensordot(g, win, axes=([0] + sp, [0] + sp))          # (c_out, c_in, *K)
    # per-offset back-projection (B, c_in, *S, *K) then fold back onto the padded grid
    gwin = np.tensordot(g, W, axes=([1], [0]))                     # (B, *S, c_in, *K)
    gwin = np.moveaxis(gwin, 1 + nd, 1)
    padded = np.zeros(z.shape[:2] + tuple(n + 2 * r for n in cfg.size))
    if nd == 1:
        n = cfg.size[0]
        for s in range(ks):
            padded[..., s:s + n] += gwin[..., s]
    else:
        n1, n2 = cfg.size
        for s1 in range(ks):
            for s2 in range(ks):
                padded[..., s1:s1 + n1, s2:s2 + n2] += gwin[..., s1, s2]
    return gW, _unpad(padded, r, nd, cfg.padding)


def _unpad(p: np.ndarray, r: int, nd: int, padding: str) -> np.ndarray:
    """Adjoint of :func:`_pad`."""
    if r == 0:
        return p
    for ax in range(p.ndim - nd, p.ndim):
        p = np.moveaxis(p, ax, -1)
        core = p[..., r:-r].copy()
        if padding == "circular":
            core[..., -r:] += p[..., :r]
            core[..., :r] += p[..., -r:]
        p = np.moveaxis(core, -1, ax)
    return p


def _complex(R: np.ndarray) -> np.ndarray:
    return R[..., 0] + 1j * R[..., 1]


def _take_modes(X: np.ndarray, cfg: FnoConfig) -> np.ndarray:
    k = cfg.modes
    if cfg.ndim == 1:
        return X[..., :k]
    return np.concatenate([X[..., :k, :k], X[..., -k:, :k]], axis=-2)


def _place_modes(Y: np.ndarray, cfg: FnoConfig) -> np.ndarray:
    k = cfg.modes
    full = np.zeros(Y.shape[:2] + cfg.size, dtype=complex)
    if cfg.ndim == 1:
        full[..., :k] = Y
    else:
        full[..., :k, :k] = Y[..., :k, :]
        full[..., -k:, :k] = Y[..., k:, :]
    return full


def _spectral(Rc: np.ndarray, z: np.ndarray, cfg: FnoConfig):
    axes = _spatial_axes(cfg.ndim)
    Xr = _take_modes(np.fft.fftn(z, axes=axes), cfg)
    Y = np.einsum("oi...,bi...->bo...", Rc, Xr)
    return np.real(np.fft.ifftn(_place_modes(Y, cfg), axes=axes)), Xr


def _spectral_backward(Rc, Xr, g, cfg):
    axes = _spatial_axes(cfg.ndim)
    npts = int(np.prod(cfg.size))
    gY = _take_modes(np.fft.fftn(g, axes=axes), cfg) / npts
    gR = np.einsum("bo...,bi...->oi...", gY, np.conj(Xr))
    gX = np.einsum("oi...,bo...->bi...", np.conj(Rc), gY)
    gz = np.real(np.fft.ifftn(_place_modes(gX, cfg), axes=axes)) * npts
    return np.stack([gR.real, gR.imag], axis=-1), gz


def _bshape(v: np.ndarray, ndim: int) -> np.ndarray:
    """Channel vector -> broadcastable against (B, c, *S)."""
    return v.reshape((1, -1) + (1,) * ndim)


# --- forward / backward ------------------------------------------------------

class FnoCache:
    __slots__ = ("u", "layers", "z_out", "token", "batched")

    def __init__(self, u, layers, z_out, token, batched):
        self.u = u
        self.layers = layers
        self.z_out = z_out
        self.token = token
        self.batched = batched


def _token(params: Params) -> tuple:
    return tuple((name, id(v), float(np.sum(v))) for name, v in sorted(params.items()))


def fno_forward(params: Params, cfg: FnoConfig, u):
    """Evaluate the network; ``u`` has shape ``cfg.size`` or ``(B,) + cfg.size``.

    Returns ``(output, cache)`` where ``cache`` feeds :func:`fno_backward`.
    """
    u = np.asarray(u, dtype=float)
    batched = u.ndim == cfg.ndim + 1
    if u.shape[u.ndim - cfg.ndim:] != cfg.size or u.ndim not in (cfg.ndim, cfg.ndim + 1):
        raise FnoError(f"input shape {u.shape} does not match config size {cfg.size}")
    if not np.all(np.isfinite(u)):
        raise FnoError("non-finite input")
    if not batched:
        u = u[None]
    act, _ = ACTIVATIONS[cfg.activation]
    nd = cfg.ndim
    z = _bshape(params["lift.w"], nd) * u[:, None] + _bshape(params["lift.b"], nd)
    records = []
    for i in range(cfg.layers):
        Rc = _complex(params[f"layer{i}.R"])
        spec, Xr = _spectral(Rc, z, cfg)
        pre = spec + _conv(params[f"layer{i}.W"], z, cfg) + _bshape(params[f"layer{i}.B"], nd)
        if not np.all(np.isfinite(pre)):
            raise FnoError(f"non-finite activation input in layer {i}")
        records.append((z, Xr, pre))
        z = act(pre)
    out = np.einsum("c,bc...->b...", params["proj.w"], z) + params["proj.b"][0]
    if not np.all(np.isfinite(out)):
        raise FnoError("non-finite output in projection layer")
    cache = FnoCache(u, records, z, _token(params), batched)
    return (out if batched else out[0]), cache


def fno_backward(params: Params, cfg: FnoConfig, cache: FnoCache, grad_out):
    """Reverse-mode gradients: returns ``(grad_params, grad_input)``."""
    if cache.token != _token(params):
        raise FnoError("stale cache: parameters changed since the forward pass")
    g = np.asarray(grad_out, dtype=float)
    if not cache.batched:
        g = g[None]
    if g.shape != cache.u.shape:
        raise FnoError(f"gradient shape {g.shape} does not match forward input {cache.u.shape}")
    _, dact = ACTIVATIONS[cfg.activation]
    nd = cfg.ndim
    red = (0,) + tuple(range(2, 2 + nd))
    grads: Params = {}
    B = g.shape[0]
    grads["proj.w"] = np.einsum("bn,bcn->c", g.reshape(B, -1), cache.z_out.reshape(B, cfg.channels, -1))
    grads["proj.b"] = np.array([g.sum()])
    gz = _bshape(params["proj.w"], nd) * g[:, None]
    for i in reversed(range(cfg.layers)):
        z_in, Xr, pre = cache.layers[i]
        gpre = gz * dact(pre)
        grads[f"layer{i}.B"] = gpre.sum(axis=red)
        gW, gz_conv = _conv_backward(params[f"layer{i}.W"], z_in, gpre, cfg)
        gR, gz_spec = _spectral_backward(_complex(params[f"layer{i}.R"]), Xr, gpre, cfg)
        grads[f"layer{i}.W"] = gW
        grads[f"layer{i}.R"] = gR
        gz = gz_conv + gz_spec
    grads["lift.w"] = np.einsum("bcn,bn->c", gz.reshape(B, cfg.channels, -1), cache.u.reshape(B, -1))
    grads["lift.b"] = gz.sum(axis=red)
    g_in = np.einsum("c,bc...->b...", params["lift.w"], gz)
    return grads, (g_in if cache.batched else g_in[0])


class FnoSmoother:
    """A configured network usable as a cycle smoother: ``smoother(u) -> output``."""

    def __init__(self, cfg: FnoConfig, params: Params):
        check_params(params, cfg)
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg: FnoConfig, rng: np.random.Generator) -> "FnoSmoother":
        return cls(cfg, init_params(cfg, rng))

    @property
    def shape(self) -> tuple:
        return self.cfg.size

    def __call__(self, u):
        return fno_forward(self.params, self.cfg, u)[0]

    def forward(self, u):
        return fno_forward(self.params, self.cfg, u)

    def backward(self, cache, grad_out):
        return fno_backward(self.params, self.cfg, cache, grad_out)

    def copy(self) -> "FnoSmoother":
        return FnoSmoother(self.cfg, {k: v.copy() for k, v in self.params.items()})


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(zeros_like_params(params), zeros_like_params(params))


def adam_step(state: AdamState, params: Params, grads: Params, lr: float):
    """Bias-corrected Adam update; updates ``state`` and ``params`` in place and returns both."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FnoError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state, params
