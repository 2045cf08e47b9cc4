"""Tiny reverse-mode differentiation kernel for the neural disaggregators.

Tensors wrap float64 NumPy arrays. A forward pass records macro-operations
(one node per layer application) on a :class:`Tape`; :func:`backward`
replays the tape once in reverse order and accumulates exact gradients for
every parameter reachable from the loss. Recurrent cells are single fused
nodes per timestep, so tapes stay short.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")


class Tensor:
    """A value in the computation graph; parameters carry gradients."""

    __slots__ = ("data", "grad", "is_param", "needs_grad", "name")

    def __init__(self, data, is_param: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.is_param = is_param
        self.needs_grad = is_param
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.name or 'anon'}, shape={self.data.shape})"


class Tape:
    """Ordered record of forward macro-ops; append order is topological."""

    def __init__(self):
        self.nodes = []
        self.outputs = set()
        self.relu_margin = math.inf

    def record(self, outputs, parents, backward_fn):
        outputs = tuple(outputs)
        self.nodes.append((outputs, tuple(parents), backward_fn))
        for out in outputs:
            out.needs_grad = any(p.needs_grad for p in parents)
            self.outputs.add(id(out))


def _accumulate(grads: dict, tensor: Tensor, g):
    if g is None:
        return
    if id(tensor) in grads:
        grads[id(tensor)] += g
    else:
        grads[id(tensor)] = np.array(g, dtype=np.float64, copy=True)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Exact gradients of a scalar loss for every parameter on the tape.

    Also stores each gradient on the parameter's ``.grad``.
    """
    if loss.data.size != 1:
        raise DataError("loss must be scalar")
    if id(loss) not in tape.outputs:
        raise DataError("loss was not produced through this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    param_grads: dict[Tensor, np.ndarray] = {}
    for outputs, parents, backward_fn in reversed(tape.nodes):
        out_gs = [grads.pop(id(o), None) for o in outputs]
        if all(g is None for g in out_gs):
            continue
        out_gs = [np.zeros_like(o.data) if g is None else g
                  for o, g in zip(outputs, out_gs)]
        parent_gs = backward_fn(*out_gs)
        for p, pg in zip(parents, parent_gs):
            if p.needs_grad:
                _accumulate(grads, p, pg)
        for p in parents:
            if p.is_param and id(p) in grads:
                param_grads[p] = grads[id(p)]
    for p, g in param_grads.items():
        p.grad = g
    return param_grads


# ---------------------------------------------------------------------------
# primitive ops


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data)
    if tape is not None:
        def back(g):
            return (g @ b.data.T if a.needs_grad else None,
                    a.data.T @ g if b.needs_grad else None)
        tape.record([out], [a, b], back)
    return out


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a bias vector broadcast over leading axes."""
    out = Tensor(a.data + b.data)
    if tape is not None:
        def back(g):
            gb = g
            if b.data.ndim < g.ndim:
                gb = g.sum(axis=tuple(range(g.ndim - b.data.ndim)))
            return (g if a.needs_grad else None, gb if b.needs_grad else None)
        tape.record([out], [a, b], back)
    return out


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    if tape is not None:
        def back(g):
            return (g * b.data if a.needs_grad else None,
                    g * a.data if b.needs_grad else None)
        tape.record([out], [a, b], back)
    return out


def reshape(tape, x: Tensor, shape) -> Tensor:
    old = x.data.shape
    out = Tensor(x.data.reshape(shape))
    if tape is not None:
        tape.record([out], [x], lambda g: (g.reshape(old),))
    return out


def activate(tape, x: Tensor, kind: str) -> Tensor:
    if kind == "linear":
        return x
    if kind == "relu":
        out = Tensor(np.maximum(x.data, 0.0))
        if tape is not None:
            tape.relu_margin = min(tape.relu_margin, float(np.abs(x.data).min()))
            mask = x.data > 0
            tape.record([out], [x], lambda g: (g * mask,))
        return out
    if kind == "sigmoid":
        s = _sigmoid(x.data)
        out = Tensor(s)
        if tape is not None:
            tape.record([out], [x], lambda g: (g * s * (1.0 - s),))
        return out
    if kind == "tanh":
        t = np.tanh(x.data)
        out = Tensor(t)
        if tape is not None:
            tape.record([out], [x], lambda g: (g * (1.0 - t * t),))
        return out
    raise DataError(f"unknown activation {kind!r}")


def loss(kind: str, pred: Tensor, target: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean squared or mean absolute error over all elements.

    The mae subgradient at exact equality is zero.
    """
    if pred.data.shape != target.data.shape:
        raise DataError("loss: shape mismatch")
    diff = pred.data - target.data
    n = diff.size
    if kind == "mse":
        out = Tensor(np.mean(diff * diff))
        if tape is not None:
            tape.record([out], [pred, target],
                        lambda g: (g * 2.0 * diff / n, None))
        return out
    if kind == "mae":
        out = Tensor(np.mean(np.abs(diff)))
        if tape is not None:
            tape.record([out], [pred, target],
                        lambda g: (g * np.sign(diff) / n, None))
        return out
    raise DataError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------------------
# layers


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), is_param=True)


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng, name: str = "dense"):
        self.w = _uniform_init(rng, (in_dim, out_dim), in_dim)
        self.b = Tensor(np.zeros(out_dim), is_param=True)
        self.w.name, self.b.name = f"{name}.w", f"{name}.b"

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x: Tensor, tape, mode: str = "train", rng=None) -> Tensor:
        return add(tape, matmul(tape, x, self.w), self.b)


class Conv1d:
    """Cross-correlation along the middle axis of (batch, length, channels).

    ``padding='same'`` zero-pads to keep the length; ``'valid'`` shrinks it.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng,
                 padding: str = "same", name: str = "conv"):
        if padding not in ("same", "valid"):
            raise DataError(f"unknown padding {padding!r}")
        self.kernel = kernel
        self.in_channels = in_channels
        self.padding = padding
        self.w = _uniform_init(rng, (kernel * in_channels, out_channels),
                               kernel * in_channels)
        self.b = Tensor(np.zeros(out_channels), is_param=True)
        self.w.name, self.b.name = f"{name}.w", f"{name}.b"

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x: Tensor, tape, mode: str = "train", rng=None) -> Tensor:
        B, L, C = x.data.shape
        if C != self.in_channels:
            raise DataError("conv1d channel mismatch")
        K = self.kernel
        if self.padding == "same":
            left = (K - 1) // 2
            pad = (left, K - 1 - left)
        else:
            pad = (0, 0)
            if L < K:
                raise DataError("input shorter than kernel under valid padding")
        xp = np.pad(x.data, ((0, 0), pad, (0, 0)))
        lout = xp.shape[1] - K + 1
        patches = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)
        patches = np.ascontiguousarray(patches.transpose(0, 1, 3, 2)).reshape(B * lout, K * C)
        out_flat = patches @ self.w.data + self.b.data
        out = Tensor(out_flat.reshape(B, lout, -1))
        if tape is not None:
            w, b = self.w, self.b

            def back(g):
                gf = g.reshape(B * lout, -1)
                gw = patches.T @ gf if w.needs_grad else None
                gb = gf.sum(axis=0) if b.needs_grad else None
                gx = None
                if x.needs_grad:
                    gp = (gf @ w.data.T).reshape(B, lout, K, C)
                    gxp = np.zeros_like(xp)
                    for k in range(K):
                        gxp[:, k:k + lout, :] += gp[:, :, k, :]
                    gx = gxp[:, pad[0]:pad[0] + L, :]
                return (gx, gw, gb)

            tape.record([out], [x, self.w, self.b], back)
        return out


class Dropout:
    """Inverted dropout: kept units scale by 1/(1-p); identity in eval mode."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise DataError("dropout probability must be in [0, 1)")
        self.p = p

    @property
    def params(self):
        return []

    def forward(self, x: Tensor, tape, mode: str = "train", rng=None) -> Tensor:
        if mode != "train" or self.p == 0.0:
            return x
        if rng is None:
            raise DataError("dropout in train mode needs an rng")
        mask = (rng.random(x.data.shape) >= self.p) / (1.0 - self.p)
        out = Tensor(x.data * mask)
        if tape is not None:
            tape.record([out], [x], lambda g: (g * mask,))
        return out


class Activation:
    def __init__(self, kind: str):
        if kind not in ACTIVATIONS:
            raise DataError(f"unknown activation {kind!r}")
        self.kind = kind

    @property
    def params(self):
        return []

    def forward(self, x: Tensor, tape, mode: str = "train", rng=None) -> Tensor:
        return activate(tape, x, self.kind)


class GRUCell:
    """Fused gated recurrent unit step: one tape node per timestep."""

    def __init__(self, in_dim: int, units: int, rng, name: str = "gru"):
        self.units = units
        mk_w = lambda: _uniform_init(rng, (in_dim, units), in_dim)
        mk_u = lambda: _uniform_init(rng, (units, units), units)
        mk_b = lambda: Tensor(np.zeros(units), is_param=True)
        self.wz, self.uz, self.bz = mk_w(), mk_u(), mk_b()
        self.wr, self.ur, self.br = mk_w(), mk_u(), mk_b()
        self.wn, self.un, self.bn = mk_w(), mk_u(), mk_b()
        for attr in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"):
            getattr(self, attr).name = f"{name}.{attr}"

    @property
    def params(self):
        return [self.wz, self.uz, self.bz, self.wr, self.ur, self.br,
                self.wn, self.un, self.bn]

    def step(self, x: Tensor, h: Tensor, tape) -> Tensor:
        xd, hd = x.data, h.data
        z = _sigmoid(xd @ self.wz.data + hd @ self.uz.data + self.bz.data)
        r = _sigmoid(xd @ self.wr.data + hd @ self.ur.data + self.br.data)
        rh = r * hd
        n = np.tanh(xd @ self.wn.data + rh @ self.un.data + self.bn.data)
        out = Tensor(z * hd + (1.0 - z) * n)
        if tape is not None:
            cell = self

            def back(g):
                dz = g * (hd - n)
                dn = g * (1.0 - z)
                dh = g * z
                dan = dn * (1.0 - n * n)
                drh = dan @ cell.un.data.T
                dr = drh * hd
                dh = dh + drh * r
                dar = dr * r * (1.0 - r)
                daz = dz * z * (1.0 - z)
                dh = dh + dar @ cell.ur.data.T + daz @ cell.uz.data.T
                dx = None
                if x.needs_grad:
                    dx = dan @ cell.wn.data.T + dar @ cell.wr.data.T + daz @ cell.wz.data.T
                return (dx, dh,
                        xd.T @ daz, hd.T @ daz, daz.sum(0),
                        xd.T @ dar, hd.T @ dar, dar.sum(0),
                        xd.T @ dan, rh.T @ dan, dan.sum(0))

            tape.record([out], [x, h, self.wz, self.uz, self.bz,
                         self.wr, self.ur, self.br, self.wn, self.un, self.bn], back)
        return out


class LSTMCell:
    """Fused LSTM step; emits (hidden, cell) as a two-output tape node."""

    def __init__(self, in_dim: int, units: int, rng, name: str = "lstm"):
        self.units = units
        mk_w = lambda: _uniform_init(rng, (in_dim, units), in_dim)
        mk_u = lambda: _uniform_init(rng, (units, units), units)
        mk_b = lambda: Tensor(np.zeros(units), is_param=True)
        self.wi, self.ui, self.bi = mk_w(), mk_u(), mk_b()
        self.wf, self.uf, self.bf = mk_w(), mk_u(), mk_b()
        self.wo, self.uo, self.bo = mk_w(), mk_u(), mk_b()
        self.wg, self.ug, self.bg = mk_w(), mk_u(), mk_b()
        for attr in ("wi", "ui", "bi", "wf", "uf", "bf", "wo", "uo", "bo",
                     "wg", "ug", "bg"):
            getattr(self, attr).name = f"{name}.{attr}"

    @property
    def params(self):
        return [self.wi, self.ui, self.bi, self.wf, self.uf, self.bf,
                self.wo, self.uo, self.bo, self.wg, self.ug, self.bg]

    def step(self, x: Tensor, h: Tensor, c: Tensor, tape) -> tuple[Tensor, Tensor]:
        xd, hd, cd = x.data, h.data, c.data
        i = _sigmoid(xd @ self.wi.data + hd @ self.ui.data + self.bi.data)
        f = _sigmoid(xd @ self.wf.data + hd @ self.uf.data + self.bf.data)
        o = _sigmoid(xd @ self.wo.data + hd @ self.uo.data + self.bo.data)
        gt = np.tanh(xd @ self.wg.data + hd @ self.ug.data + self.bg.data)
        c_new = f * cd + i * gt
        tc = np.tanh(c_new)
        h_out, c_out = Tensor(o * tc), Tensor(c_new)
        if tape is not None:
            cell = self

            def back(gh, gc):
                do = gh * tc
                dc = gc + gh * o * (1.0 - tc * tc)
                df = dc * cd
                dc_prev = dc * f
                di = dc * gt
                dg = dc * i
                dai = di * i * (1.0 - i)
                daf = df * f * (1.0 - f)
                dao = do * o * (1.0 - o)
                dag = dg * (1.0 - gt * gt)
                dh = (dai @ cell.ui.data.T + daf @ cell.uf.data.T
                      + dao @ cell.uo.data.T + dag @ cell.ug.data.T)
                dx = None
                if x.needs_grad:
                    dx = (dai @ cell.wi.data.T + daf @ cell.wf.data.T
                          + dao @ cell.wo.data.T + dag @ cell.wg.data.T)
                return (dx, dh, dc_prev,
                        xd.T @ dai, hd.T @ dai, dai.sum(0),
                        xd.T @ daf, hd.T @ daf, daf.sum(0),
                        xd.T @ dao, hd.T @ dao, dao.sum(0),
                        xd.T @ dag, hd.T @ dag, dag.sum(0))

            tape.record([h_out, c_out],
                        [x, h, c, self.wi, self.ui, self.bi, self.wf, self.uf,
                         self.bf, self.wo, self.uo, self.bo, self.wg, self.ug,
                         self.bg], back)
        return h_out, c_out


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    """Adam / Nadam moment estimates, one slot per parameter."""

    variant: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in ("adam", "nadam"):
            raise DataError(f"unknown optimizer {self.variant!r}")


def optimizer_step(state: OptimizerState, params, grads=None):
    """One in-place update of every parameter from its gradient.

    Nadam applies a Nesterov-style lookahead to the bias-corrected first
    moment; with beta1 = 0 the two variants coincide.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise DataError("optimizer_step: parameter/gradient arity mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise DataError("optimizer_step: gradient shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        if state.variant == "nadam":
            m_hat = b1 * m_hat + (1.0 - b1) * g / bc1
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def grad_check(run, params, eps: float = 1e-5) -> float:
    """Max relative disagreement between tape gradients and central
    finite differences.

    ``run(tape)`` executes a deterministic eval-mode forward pass and
    returns the scalar loss tensor; with ``tape=None`` nothing is recorded.
    """
    tape = Tape()
    loss_t = run(tape)
    analytic = backward(tape, loss_t)
    worst = 0.0
    for p in params:
        a = analytic.get(p)
        a = np.zeros_like(p.data) if a is None else a
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = float(run(None).data)
            flat[j] = orig - eps
            down = float(run(None).data)
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(1e-8, abs(a_flat[j]) + abs(numeric))
            worst = max(worst, abs(a_flat[j] - numeric) / denom)
    return worst
