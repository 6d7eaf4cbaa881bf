"""Minimal reverse-mode tensor engine for the disparity network.

Exactly the layer set the network needs, nothing more: stride-1 convolution
(1x1 / 2x2 / 3x3), 2x2 stride-2 transposed convolution, 2x2 max-pooling,
batch normalization, ReLU, channel concatenation, nearest upsampling,
replicate padding and cropping, plus Adam and a finite-difference checker.

Tensors are float32 NCHW. Recording happens while a Tape is active as a
context manager; backward walks the recorded steps in exact reverse order and
writes gradients into every parameter's grad buffer. Forward passes are
deterministic for fixed inputs: reductions happen either in fixed sequential
numpy order or inside BLAS GEMM calls whose order is fixed for a given thread
count, so two identical runs produce bit-identical outputs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

_active_tape = None


class Tensor:
    """Float32 n-d array with an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.grad is not None

    def __repr__(self):
        return f"Tensor{self.data.shape}{' +grad' if self.requires_grad else ''}"


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class _Step:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed ops; backward visits them in reverse."""

    def __init__(self):
        self._steps: list[_Step] = []

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already recording")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def __len__(self):
        return len(self._steps)

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        """Propagate d(loss)/d(out) back to every recorded tensor.

        With seed=None, out must be scalar and is seeded with 1. Parameter
        tensors receive their gradient in .grad (overwritten, not accumulated);
        the tape is cleared afterwards.
        """
        if not self._steps:
            raise RuntimeError("backward called without a recorded tape")
        if seed is None:
            if out.data.size != 1:
                raise ValueError("backward without a seed needs a scalar output")
            seed = np.ones_like(out.data)
        seed = np.asarray(seed, dtype=np.float32)
        if seed.shape != out.data.shape:
            raise ValueError("seed gradient shape must match output shape")

        grads: dict[int, np.ndarray] = {id(out): seed}
        tensors: dict[int, Tensor] = {id(out): out}
        for step in reversed(self._steps):
            g = grads.pop(id(step.out), None)
            if g is None:
                continue
            for t, ig in zip(step.inputs, step.backward(g)):
                if ig is None:
                    continue
                tid = id(t)
                if tid in grads:
                    grads[tid] += ig
                else:
                    grads[tid] = ig
                    tensors[tid] = t
        for tid, g in grads.items():
            t = tensors[tid]
            if t.grad is not None:
                t.grad[...] = g
        self._steps.clear()


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    if _active_tape is not None:
        _active_tape._steps.append(_Step(out, tuple(inputs), backward_fn))
    return out


# ---------------------------------------------------------------------------
# ops


def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Read-only sliding (kh, kw) windows over the last two axes of NCHW."""
    n, c, h, w = x.shape
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        (n, c, h - kh + 1, w - kw + 1, kh, kw),
        (sn, sc, sh, sw, sh, sw),
        writeable=False,
    )


def _corr(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of NCHW with (Cout, Cin, kh, kw) via GEMM."""
    win = _windows(x, k.shape[2], k.shape[3])
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _same_pad(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k - (k - 1) // 2 - 1


def conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, pad: str = "same") -> Tensor:
    """Stride-1 cross-correlation; pad "same" (zeros) keeps spatial dims."""
    kh, kw = k.shape[2], k.shape[3]
    if kh not in (1, 2, 3) or kw not in (1, 2, 3):
        raise ValueError(f"unsupported kernel size {kh}x{kw}")
    if x.data.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape} vs kernel {k.shape}")
    if pad == "same":
        (pt, pb), (pl, pr) = _same_pad(kh), _same_pad(kw)
    elif pad == "none":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"pad must be 'same' or 'none', got {pad!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x.data
    y = _corr(xp, k.data)
    if b is not None:
        if b.shape != (k.shape[0],):
            raise ValueError("bias shape must be (out_channels,)")
        y += b.data[None, :, None, None]
    out = Tensor(y)

    def backward(g):
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        win = _windows(xp, kh, kw)
        dk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        # full correlation of the upstream gradient with the flipped kernel
        gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - pt, kh - 1 - pb), (kw - 1 - pl, kw - 1 - pr)))
        kt = np.ascontiguousarray(k.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = _corr(gp, kt)
        return (dx, dk, db) if b is not None else (dx, dk)

    return _record(out, (x, k, b) if b is not None else (x, k), backward)


def transposed_conv2x2(x: Tensor, k: Tensor) -> Tensor:
    """Stride-2 learned upsampling: each pixel scatters a weighted 2x2 block.

    Kernel shape is (in_channels, out_channels, 2, 2); output dims double.
    """
    if k.shape[2:] != (2, 2) or k.shape[0] != x.shape[1]:
        raise ValueError(f"kernel {k.shape} incompatible with input {x.shape}")
    n, c, h, w = x.shape
    co = k.shape[1]
    y = np.einsum("nchw,coab->nohawb", x.data, k.data, optimize=True)
    out = Tensor(y.reshape(n, co, 2 * h, 2 * w))

    def backward(g):
        g6 = g.reshape(n, co, h, 2, w, 2)
        dx = np.einsum("nohawb,coab->nchw", g6, k.data, optimize=True)
        dk = np.einsum("nchw,nohawb->coab", x.data, g6, optimize=True)
        return dx.astype(np.float32, copy=False), dk.astype(np.float32, copy=False)

    return _record(out, (x, k), backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 stride-2 max-pooling; gradient routes to the first block argmax."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    blocks = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = blocks.argmax(axis=-1)
    out = Tensor(np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0])

    def backward(g):
        g4 = np.zeros((n, c, ho, wo, 4), dtype=np.float32)
        np.put_along_axis(g4, idx[..., None], g[..., None], axis=-1)
        return (g4.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _record(out, (x,), backward)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes by batch statistics (population variance) and
    folds them into the running buffers with the given momentum; inference
    uses the running buffers and is a plain affine map.
    """
    c = x.shape[1]
    for p, nm in ((gamma, "gamma"), (beta, "beta"), (running_mean, "mean"), (running_var, "var")):
        if p.shape != (c,):
            raise ValueError(f"batchnorm {nm} must have shape ({c},)")
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_running:
            running_mean.data *= 1.0 - momentum
            running_mean.data += momentum * mu
            running_var.data *= 1.0 - momentum
            running_var.data += momentum * var
    else:
        mu, var = running_mean.data, running_var.data
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])

    def backward(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            nred = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = (inv[None, :, None, None] / nred) * (nred * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv[None, :, None, None]
        return dx.astype(np.float32, copy=False), dgamma, dbeta, None, None

    return _record(out, (x, gamma, beta, running_mean, running_var), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward(g):
        return ((x.data > 0.0) * g,)

    return _record(out, (x,), backward)


def concat_channels(*xs: Tensor) -> Tensor:
    """Stack inputs along the channel axis in argument order."""
    base = xs[0].shape
    for t in xs[1:]:
        if t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ValueError("concat inputs must share batch and spatial dims")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    sizes = [t.shape[1] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return _record(out, xs, backward)


def nearest_upsample2x(x: Tensor) -> Tensor:
    """Repeat every pixel into a 2x2 block."""
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(out, (x,), backward)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left (height, width) window (inverse of bottom/right pad)."""
    n, c, h, w = x.shape
    if height > h or width > w:
        raise ValueError("crop size exceeds input size")
    out = Tensor(x.data[:, :, :height, :width])

    def backward(g):
        dx = np.zeros((n, c, h, w), dtype=np.float32)
        dx[:, :, :height, :width] = g
        return (dx,)

    return _record(out, (x,), backward)


def pad_replicate(x: Tensor, pad_bottom: int, pad_right: int) -> Tensor:
    """Edge-replicate on bottom/right; paired with crop for exact inversion."""
    n, c, h, w = x.shape
    out = Tensor(np.pad(x.data, ((0, 0), (0, 0), (0, pad_bottom), (0, pad_right)), mode="edge"))

    def backward(g):
        dx = np.ascontiguousarray(g[:, :, :h, :w])
        if pad_right:
            dx[:, :, :, w - 1] += g[:, :, :h, w:].sum(axis=3)
        if pad_bottom:
            dx[:, :, h - 1, :] += g[:, :, h:, :w].sum(axis=2)
        if pad_bottom and pad_right:
            dx[:, :, h - 1, w - 1] += g[:, :, h:, w:].sum(axis=(2, 3))
        return (dx,)

    return _record(out, (x,), backward)


def identity(x: Tensor) -> Tensor:
    out = Tensor(x.data)

    def backward(g):
        return (g,)

    return _record(out, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    """Sum everything into a scalar; the usual loss head for tests."""
    out = Tensor(x.data.sum())

    def backward(g):
        return (np.full(x.shape, g, dtype=np.float32),)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; weight decay is decoupled."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One Adam update with bias correction.

    Decoupled weight decay shrinks parameters by lr * wd before the moment
    update, so a zero gradient with decay still decays the weights.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {name!r} has no gradient buffer")
        if state.weight_decay:
            p.data -= np.float32(state.lr * state.weight_decay) * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(np.float32)


# ---------------------------------------------------------------------------
# finite-difference checking


def _rel_err(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_check(
    forward,
    wrt: list[Tensor],
    rng: np.random.Generator,
    h: float = 1e-2,
    max_coords: int | None = None,
    state_tensors: tuple[Tensor, ...] = (),
    floor: float = 1e-2,
) -> float:
    """Worst relative error between tape gradients and central differences.

    forward() must rebuild the graph and return its output Tensor. The scalar
    under test is a fixed random weighting of the output, reduced in float64.
    Perturbations are written in float32 and the realized step is measured in
    float64, which keeps the check exact for linear ops.

    At f32, central differences through a deep ReLU network carry two error
    sources the analytic gradient does not: accumulated forward rounding, and
    kinks (ReLU / max-pool switches) inside the probed interval. Both make
    the FD estimate depend on the step size, so each coordinate is probed at
    four steps (4h, h, h/4, h/16) and the most mutually consistent adjacent
    pair is taken as the estimate, with the pair disagreement plus a rounding
    floor as its measured uncertainty. A kink-contaminated coordinate yields
    scattered estimates and a correspondingly wide uncertainty; a wrong
    backward formula shifts every step's estimate coherently and stays
    outside the uncertainty band, so it is still caught.

    A kink sitting exactly at the probed point (a ReLU input at 0, a tied
    max-pool block) makes the central difference report the average of the
    two one-sided slopes at every step, while any correct implementation
    returns one valid subgradient. Agreement with either one-sided
    difference is therefore also accepted.

    state_tensors are snapshotted and restored around every forward call so
    stateful ops (running statistics) do not drift during probing.
    """

    def snapshot():
        return [t.data.copy() for t in state_tensors]

    def restore(saved):
        for t, s in zip(state_tensors, saved):
            t.data[...] = s

    saved0 = snapshot()
    with Tape() as tape:
        out = forward()
        weights = rng.standard_normal(out.data.shape).astype(np.float32)
        tape.backward(out, weights)
    restore(saved0)

    def scalar_at():
        saved = snapshot()
        y = forward()
        restore(saved)
        return float(np.sum(y.data.astype(np.float64) * weights.astype(np.float64)))

    l0 = scalar_at()
    eps_abs = 32.0 * np.finfo(np.float32).eps * max(1.0, abs(l0))
    rungs = (4.0 * h, h, h / 4.0, h / 16.0)  # descending

    worst = 0.0
    for t in wrt:
        an = t.grad.copy()
        gscale = float(np.max(np.abs(an))) if an.size else 0.0
        denom_floor = max(floor * gscale, 1e-4)
        size = t.data.size
        flat = t.data.reshape(-1)
        if max_coords is None or size <= max_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords, replace=False)
        for i in coords:
            a = float(an.reshape(-1)[i])

            def probe(step):
                x0 = flat[i].item()
                flat[i] = np.float32(x0 + step)
                xp = flat[i].item()
                lp = scalar_at()
                flat[i] = np.float32(x0 - step)
                xm = flat[i].item()
                lm = scalar_at()
                flat[i] = np.float32(x0)
                central = (lp - lm) / (xp - xm)
                one_sided = ((lp - l0) / (xp - x0), (l0 - lm) / (x0 - xm))
                return central, xp - xm, one_sided

            fd_h, _, sided_h = probe(h)
            if _rel_err(fd_h, a, denom_floor) <= 1e-3:
                continue  # clean agreement at the nominal step
            fds = [probe(s) for s in rungs]
            best = math.inf
            for (fd1, sp1, _), (fd2, sp2, _) in zip(fds, fds[1:]):
                unc = abs(fd1 - fd2) + eps_abs / min(sp1, sp2)
                est = 0.5 * (fd1 + fd2)
                diff = max(0.0, abs(est - a) - 2.0 * unc)
                err = diff / max(abs(est), abs(a), denom_floor)
                best = min(best, err)
            for _, _, sided in fds:
                for fd1 in sided:
                    best = min(best, _rel_err(fd1, a, denom_floor))
            worst = max(worst, best)
    return worst


def _sep_values(rng: np.random.Generator, shape) -> np.ndarray:
    """Values with pairwise gaps >> the FD step, for kink-free max-pool probes."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n).astype(np.float32) - n / 2) * 0.25
    return vals.reshape(shape)


def op_gradcheck(seed: int = 0) -> dict[str, float]:
    """Finite-difference check every differentiable op; returns worst rel errors."""
    rng = np.random.default_rng(seed)

    def t(shape, scale=1.0):
        return Tensor(rng.standard_normal(shape).astype(np.float32) * scale, requires_grad=True)

    x = t((2, 2, 6, 6))
    k3 = t((3, 2, 3, 3), 0.4)
    k2 = t((3, 2, 2, 2), 0.4)
    k1 = t((3, 2, 1, 1), 0.6)
    b = t((3,), 0.1)
    kt = t((2, 3, 2, 2), 0.5)
    xm = Tensor(_sep_values(rng, (2, 2, 6, 6)), requires_grad=True)
    gamma, beta = t((2,), 1.0), t((2,), 0.5)
    rmean = Tensor(np.zeros(2, np.float32))
    rvar = Tensor(np.ones(2, np.float32))
    xr = Tensor(
        np.sign(rng.standard_normal((1, 2, 5, 5))).astype(np.float32)
        * (0.3 + np.abs(rng.standard_normal((1, 2, 5, 5))).astype(np.float32)),
        requires_grad=True,
    )
    x2 = t((2, 3, 6, 6))

    checks = {
        "identity": (lambda: identity(x), [x]),
        "conv2d_1x1": (lambda: conv2d(x, k1, b, "same"), [x, k1, b]),
        "conv2d_2x2": (lambda: conv2d(x, k2, b, "none"), [x, k2, b]),
        "conv2d_3x3_same": (lambda: conv2d(x, k3, b, "same"), [x, k3, b]),
        "conv2d_3x3_valid": (lambda: conv2d(x, k3, b, "none"), [x, k3, b]),
        "transposed_conv2x2": (lambda: transposed_conv2x2(x, kt), [x, kt]),
        "maxpool2x2": (lambda: maxpool2x2(xm), [xm]),
        "batchnorm_train": (
            lambda: batchnorm(x, gamma, beta, rmean, rvar, True),
            [x, gamma, beta],
            (rmean, rvar),
        ),
        "batchnorm_infer": (
            lambda: batchnorm(x, gamma, beta, rmean, rvar, False),
            [x, gamma, beta],
            (rmean, rvar),
        ),
        "relu": (lambda: relu(xr), [xr]),
        "concat_channels": (lambda: concat_channels(x, x2), [x, x2]),
        "nearest_upsample2x": (lambda: nearest_upsample2x(x), [x]),
        "crop": (lambda: crop(x, 4, 3), [x]),
        "pad_replicate": (lambda: pad_replicate(x, 3, 2), [x]),
        "sum": (lambda: tsum(x), [x]),
    }
    out = {}
    for name, entry in checks.items():
        forward, wrt = entry[0], entry[1]
        state = entry[2] if len(entry) > 2 else ()
        out[name] = finite_diff_check(forward, wrt, np.random.default_rng(seed + 1), state_tensors=state)
    return out
