"""Per-channel colour converters between LDR and HDR.

Both converters run three independent small networks, one per colour channel,
evaluated together as a batched matmul over a leading channel axis.  Parameters
are plain numpy arrays keyed by name; pass a dict of taped tensors with the same
keys to differentiate through a forward pass.

LDR -> HDR (per channel, ``c`` the LDR value)::

    z = relu(W_in c + b_in)
    x = relu(X(z)),  s = relu(S(z)),  y = Y(z)
    hdr = act(x * s + y + c)

HDR -> LDR::

    z = relu(W_in h + b_in)
    d = relu(D(z)),  b = tanh(B(z))
    ldr = sigmoid(w_out * (d + b) + b_out)
"""
from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .camera import CameraParams
from .diffcore import Tensor

N_CH = 3


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _to_channel_major(c: Tensor) -> Tensor:
    n = c.shape[0]
    return dc.reshape(dc.transpose(c, (1, 0)), (N_CH, n, 1))


def _from_channel_major(v: Tensor) -> Tensor:
    n = v.shape[1]
    return dc.transpose(dc.reshape(v, (N_CH, n)), (1, 0))


def _linear(u: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = dc.matmul(u, w)
    return dc.add(out, dc.broadcast_to(b, out.shape))


class _ChannelNet:
    """Shared plumbing: parameter storage, binding to a tape, numpy forward."""

    param_names: tuple[str, ...] = ()

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def bind(self, tape: dc.Tape, prefix: str = "") -> dict[str, Tensor]:
        return {k: tape.param(v, prefix + k) for k, v in self.params.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def update(self, new: dict[str, np.ndarray]) -> None:
        for k, v in new.items():
            self.params[k] = np.asarray(v, dtype=np.float64)

    def __call__(self, c, p: dict[str, Tensor] | None = None) -> Tensor:
        c = dc.as_tensor(c)
        if c.data.ndim != 2 or c.shape[1] != N_CH:
            raise dc.ShapeError(f"{type(self).__name__}: expected (N, 3) colours, got {c.shape}")
        self._check_input(c.data)
        return self.forward(c, self.constants() if p is None else p)

    def apply_numpy(self, c) -> np.ndarray:
        """Forward on an array of any shape ending in 3 (images included)."""
        c = np.asarray(c, dtype=np.float64)
        return self(c.reshape(-1, N_CH)).data.reshape(c.shape)

    def _check_input(self, v: np.ndarray) -> None:  # pragma: no cover - overridden
        pass

    def forward(self, c: Tensor, p: dict[str, Tensor]) -> Tensor:  # pragma: no cover
        raise NotImplementedError

    def _lift(self, c: Tensor, p) -> tuple[Tensor, Tensor]:
        u = _to_channel_major(c)
        n = c.shape[0]
        w = p["in.W"]
        z = dc.add(dc.matmul(u, w), dc.broadcast_to(p["in.b"], (N_CH, n, w.shape[2])))
        return u, dc.relu(z)

    def _branch(self, z: Tensor, p, name: str, depth: int) -> Tensor:
        u = z
        for i in range(depth - 1):
            u = dc.relu(_linear(u, p[f"{name}.h{i}.W"], p[f"{name}.h{i}.b"]))
        return _linear(u, p[f"{name}.W"], p[f"{name}.b"])


def _branch_params(rng, name: str, hidden: int, depth: int, zero_bias: bool = False) -> dict:
    out = {}
    for i in range(depth - 1):
        out[f"{name}.h{i}.W"] = _uniform(rng, (N_CH, hidden, hidden), hidden)
        out[f"{name}.h{i}.b"] = _uniform(rng, (N_CH, 1, hidden), hidden)
    out[f"{name}.W"] = _uniform(rng, (N_CH, hidden, 1), hidden)
    out[f"{name}.b"] = np.zeros((N_CH, 1, 1)) if zero_bias else _uniform(rng, (N_CH, 1, 1), hidden)
    return out


class L2HConverter(_ChannelNet):
    """Learned LDR -> HDR lift with scale (X), correction (S) and noise (Y) branches."""

    def __init__(self, hidden: int = 16, depth: int = 1, output: str = "relu",
                 rng: np.random.Generator | None = None, params: dict | None = None):
        if hidden < 1 or depth < 1:
            raise ValueError("hidden and depth must be >= 1")
        if output not in ("relu", "softplus"):
            raise ValueError(f"unknown output activation {output!r}")
        self.hidden, self.depth, self.output = hidden, depth, output
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {"in.W": _uniform(rng, (N_CH, 1, hidden), hidden),
                      "in.b": _uniform(rng, (N_CH, 1, hidden), hidden)}
            params.update(_branch_params(rng, "x", hidden, depth))
            params.update(_branch_params(rng, "s", hidden, depth))
            params.update(_branch_params(rng, "y", hidden, depth, zero_bias=True))
            # start close to the identity so the output ReLU is live on all of [0, 1]:
            # x > 0 on average, s a small positive gate, y a small correction
            params["x.b"] = np.full((N_CH, 1, 1), 0.5)
            params["s.W"] = params["s.W"] * 1e-3
            params["s.b"] = np.full((N_CH, 1, 1), 1e-2)
            params["y.W"] = params["y.W"] * 1e-2
        super().__init__(params)

    def _check_input(self, v):
        if np.any(v < -1e-9) or np.any(v > 1 + 1e-9):
            raise ValueError("L2H input must lie in [0, 1]")

    def branches(self, c: Tensor, p: dict[str, Tensor]) -> dict[str, Tensor]:
        u, z = self._lift(c, p)
        x = dc.relu(self._branch(z, p, "x", self.depth))
        s = dc.relu(self._branch(z, p, "s", self.depth))
        y = self._branch(z, p, "y", self.depth)
        raw = dc.add(dc.add(dc.mul(x, s), y), u)
        return {"x": x, "s": s, "y": y, "raw": raw}

    def forward(self, c, p):
        raw = self.branches(c, p)["raw"]
        out = dc.relu(raw) if self.output == "relu" else dc.softplus(raw)
        return _from_channel_major(out)

    def config(self) -> dict:
        return {"kind": "l2h", "hidden": self.hidden, "depth": self.depth, "output": self.output}


class H2LConverter(_ChannelNet):
    """Learned HDR -> LDR map with scale (D) and offset (B) branches."""

    def __init__(self, hidden: int = 16, depth: int = 1,
                 rng: np.random.Generator | None = None, params: dict | None = None):
        if hidden < 1 or depth < 1:
            raise ValueError("hidden and depth must be >= 1")
        self.hidden, self.depth = hidden, depth
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {"in.W": _uniform(rng, (N_CH, 1, hidden), hidden),
                      "in.b": _uniform(rng, (N_CH, 1, hidden), hidden)}
            params.update(_branch_params(rng, "d", hidden, depth))
            params.update(_branch_params(rng, "b", hidden, depth))
            params["out.W"] = np.ones((N_CH, 1, 1))
            params["out.b"] = np.zeros((N_CH, 1, 1))
        super().__init__(params)

    def _check_input(self, v):
        if np.any(v < 0):
            raise ValueError("H2L input must be >= 0")

    def forward(self, c, p):
        _, z = self._lift(c, p)
        d = dc.relu(self._branch(z, p, "d", self.depth))
        b = dc.tanh(self._branch(z, p, "b", self.depth))
        pre = _linear(dc.add(d, b), p["out.W"], p["out.b"])
        return _from_channel_major(dc.sigmoid(pre))

    def config(self) -> dict:
        return {"kind": "h2l", "hidden": self.hidden, "depth": self.depth}


class PlainMLP(_ChannelNet):
    """Per-channel all-ReLU MLP without branches or residual (ablation stand-in)."""

    def __init__(self, widths=(16, 3), rng: np.random.Generator | None = None,
                 params: dict | None = None, input_range: str = "ldr"):
        self.widths = tuple(int(w) for w in widths)
        self.input_range = input_range
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {}
            fan = 1
            for i, w in enumerate(self.widths + (1,)):
                params[f"l{i}.W"] = _uniform(rng, (N_CH, fan, w), fan)
                params[f"l{i}.b"] = _uniform(rng, (N_CH, 1, w), fan)
                fan = w
        super().__init__(params)

    def _check_input(self, v):
        if self.input_range == "ldr" and (np.any(v < -1e-9) or np.any(v > 1 + 1e-9)):
            raise ValueError("input must lie in [0, 1]")
        if np.any(v < -1e-9):
            raise ValueError("input must be >= 0")

    def forward(self, c, p):
        u = _to_channel_major(c)
        for i in range(len(self.widths) + 1):
            u = dc.relu(_linear(u, p[f"l{i}.W"], p[f"l{i}.b"]))
        return _from_channel_major(u)

    def config(self) -> dict:
        return {"kind": "mlp", "widths": list(self.widths), "input_range": self.input_range}


def matched_mlp(n_params: int, rng=None, input_range: str = "ldr") -> PlainMLP:
    """Two-hidden-layer plain MLP whose size is closest to ``n_params``."""
    per_ch = n_params // N_CH
    best = None
    for a in range(2, 65):
        for b in range(1, 17):
            count = 2 * a + a * b + b + b + 1
            key = (abs(count - per_ch), -a)
            if best is None or key < best[0]:
                best = (key, (a, b))
    return PlainMLP(best[1], rng=rng, input_range=input_range)


def affine_inverse_l2h(camera: CameraParams, hidden: int = 16) -> L2HConverter:
    """Hand-set weights so the lift equals ``g/dt * (c - i0)`` for ``c >= i0``.

    Unit 0 of the latent carries ``c``; X is the constant ``g/dt``, S is
    ``c - i0`` and Y cancels the residual.
    """
    conv = L2HConverter(hidden=hidden, depth=1, output="relu")
    p = {k: np.zeros_like(v) for k, v in conv.params.items()}
    p["in.W"][:, 0, 0] = 1.0
    p["x.b"][:, 0, 0] = 1.0 / camera.gain
    p["s.W"][:, 0, 0] = 1.0
    p["s.b"][:, 0, 0] = -camera.i0
    p["y.W"][:, 0, 0] = -1.0
    conv.update(p)
    return conv


def build_converter(cfg: dict, params: dict | None = None):
    kind = cfg["kind"]
    if kind == "l2h":
        return L2HConverter(cfg["hidden"], cfg["depth"], cfg.get("output", "relu"), params=params)
    if kind == "h2l":
        return H2LConverter(cfg["hidden"], cfg["depth"], params=params)
    if kind == "mlp":
        return PlainMLP(cfg["widths"], params=params, input_range=cfg.get("input_range", "ldr"))
    if kind == "identity":
        return IdentityConverter()
    raise ValueError(f"unknown converter kind {kind!r}")


class IdentityConverter(_ChannelNet):
    """f(c) = c; useful for checking that the HDR path adds nothing of its own."""

    def __init__(self):
        super().__init__({})

    def forward(self, c, p):
        return c

    def config(self) -> dict:
        return {"kind": "identity"}
