"""Central finite-difference gradient checks.

The relative error of a parameter block is the largest absolute deviation
between analytic and numeric derivatives over the checked entries, divided by
the block's gradient scale: the largest analytic or numeric magnitude in the
block, floored at ``SCALE_FLOOR`` times the largest analytic magnitude across
all blocks of the check. The floor matters for blocks whose true gradient is
exactly zero (a conv bias feeding train-phase batchnorm), where both sides are
pure rounding noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import ops
from .errors import GradcheckError
from .tensor import default_dtype

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-2
SCALE_FLOOR = 0.1


@dataclass
class GradcheckReport:
    name: str
    errors: dict[str, float]
    tolerance: float
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> tuple[str, float]:
        return max(self.errors.items(), key=lambda kv: kv[1])

    def failing(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    def render(self) -> str:
        block, err = self.worst
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} {self.name}: max rel err {err:.2e} ({block}), tol {self.tolerance:g}"
        if not self.passed:
            line += f"; failing blocks: {', '.join(self.failing())}"
        return line


def gradcheck(
    loss_fn: Callable[[], float],
    blocks: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    max_checks: int | None = None,
    seed: int = 0,
    name: str = "gradcheck",
) -> GradcheckReport:
    """Compare ``analytic`` gradients against central differences of ``loss_fn``.

    ``loss_fn`` must read the arrays in ``blocks`` (they are perturbed in place
    and restored). At most ``max_checks`` seeded entries per block are probed.
    """
    rng = np.random.default_rng(seed)
    global_scale = max(float(np.abs(np.asarray(analytic[k])).max()) for k in blocks)
    floor = max(SCALE_FLOOR * global_scale, 1e-12)
    errors: dict[str, float] = {}
    checked: dict[str, int] = {}
    for key, arr in blocks.items():
        a = np.asarray(analytic[key], dtype=np.float64)
        if a.shape != arr.shape:
            raise GradcheckError(f"gradient for {key} has shape {a.shape}, parameter has {arr.shape}")
        if not np.all(np.isfinite(a)):
            raise GradcheckError(f"non-finite analytic gradient in block {key}")
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise GradcheckError(f"block {key} must be a contiguous array")
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_fn()
            flat[i] = orig - step
            minus = loss_fn()
            flat[i] = orig
            num[k] = (plus - minus) / (2 * step)
        if not np.all(np.isfinite(num)):
            raise GradcheckError(f"non-finite numeric gradient in block {key}")
        scale = max(np.abs(a).max(), np.abs(num).max(), floor)
        errors[key] = float(np.abs(a.reshape(-1)[idx] - num).max() / scale)
        checked[key] = int(idx.size)
    return GradcheckReport(name, errors, tolerance, checked)


def _flip(grads: dict[str, np.ndarray], fault: str | None) -> dict[str, np.ndarray]:
    if fault is None:
        return grads
    if fault not in grads:
        raise GradcheckError(f"cannot inject fault: no block {fault!r}; blocks are {', '.join(grads)}")
    grads = dict(grads)
    grads[fault] = -grads[fault]
    return grads


def _projected(out: np.ndarray, proj: np.ndarray) -> float:
    return float((out.astype(np.float64) * proj).sum())


def _away_from_zero(rng, shape, margin=0.1, dtype=None):
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x.astype(dtype or default_dtype())


def check_conv2d(rng, tol, step, fault=None) -> GradcheckReport:
    dt = default_dtype()
    x = rng.normal(size=(2, 3, 8, 8)).astype(dt)
    p = ops.ConvParams(rng.normal(0, 0.3, size=(4, 3, 3, 3)).astype(dt), rng.normal(size=4).astype(dt))
    out, cache = ops.conv2d_forward(x, p)
    proj = rng.normal(size=out.shape)
    dx, dw, db = ops.conv2d_backward(proj.astype(dt), cache)
    grads = _flip({"input": dx, "conv.weight": dw, "conv.bias": db}, fault)
    blocks = {"input": x, "conv.weight": p.weight, "conv.bias": p.bias}
    return gradcheck(lambda: _projected(ops.conv2d(x, p), proj), blocks, grads,
                     tolerance=tol, step=step, name="conv2d")


def check_batchnorm(rng, tol, step, fault=None) -> GradcheckReport:
    dt = default_dtype()
    x = rng.normal(1.0, 2.0, size=(4, 2, 4, 4)).astype(dt)
    p = ops.BatchNormParams.fresh(2, dt)
    p.gamma[...] = rng.uniform(0.5, 1.5, size=2)
    p.beta[...] = rng.normal(size=2)
    out, cache = ops.batchnorm_forward(x, p, "train", update_stats=False)
    proj = rng.normal(size=out.shape)
    dx, dg, dbt = ops.batchnorm_backward(proj.astype(dt), cache)
    grads = _flip({"input": dx, "bn.gamma": dg, "bn.beta": dbt}, fault)
    blocks = {"input": x, "bn.gamma": p.gamma, "bn.beta": p.beta}

    def loss():
        return _projected(ops.batchnorm_forward(x, p, "train", update_stats=False)[0], proj)

    return gradcheck(loss, blocks, grads, tolerance=tol, step=step, name="batchnorm")


def check_maxpool(rng, tol, step, fault=None) -> GradcheckReport:
    dt = default_dtype()
    shape = (2, 2, 6, 6)
    # distinct values spaced 0.1 apart keep every perturbation off an argmax tie
    x = (rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1).astype(dt)
    out, idx = ops.maxpool2x2(x)
    proj = rng.normal(size=out.shape)
    dx = ops.maxpool2x2_backward(proj.astype(dt), idx, x.shape)
    grads = _flip({"input": dx}, fault)
    return gradcheck(lambda: _projected(ops.maxpool2x2(x)[0], proj), {"input": x}, grads,
                     tolerance=tol, step=step, name="maxpool2x2")


def check_avgpool(rng, tol, step, fault=None) -> GradcheckReport:
    dt = default_dtype()
    x = rng.normal(size=(2, 2, 5, 6)).astype(dt)
    out = ops.avgpool2x2(x)
    proj = rng.normal(size=out.shape)
    grads = _flip({"input": ops.avgpool2x2_backward(proj.astype(dt), x.shape)}, fault)
    return gradcheck(lambda: _projected(ops.avgpool2x2(x), proj), {"input": x}, grads,
                     tolerance=tol, step=step, name="avgpool2x2")


def check_relu(rng, tol, step, fault=None) -> GradcheckReport:
    x = _away_from_zero(rng, (2, 3, 4, 4))
    proj = rng.normal(size=x.shape)
    grads = _flip({"input": ops.relu_backward(proj.astype(x.dtype), x)}, fault)
    return gradcheck(lambda: _projected(ops.relu(x), proj), {"input": x}, grads,
                     tolerance=tol, step=step, name="relu")


def check_dense(rng, tol, step, fault=None) -> GradcheckReport:
    dt = default_dtype()
    x = rng.normal(size=(3, 7)).astype(dt)
    p = ops.DenseParams(rng.normal(size=(5, 7)).astype(dt), rng.normal(size=5).astype(dt))
    out, cache = ops.dense_forward(x, p)
    proj = rng.normal(size=out.shape)
    dx, dw, db = ops.dense_backward(proj.astype(dt), cache)
    grads = _flip({"input": dx, "dense.weight": dw, "dense.bias": db}, fault)
    blocks = {"input": x, "dense.weight": p.weight, "dense.bias": p.bias}
    return gradcheck(lambda: _projected(ops.dense(x, p), proj), blocks, grads,
                     tolerance=tol, step=step, name="dense")


def check_sigmoid_bce(rng, tol, step, fault=None) -> GradcheckReport:
    z = rng.normal(0, 3, size=(6, 1)).astype(default_dtype())
    y = rng.integers(0, 2, size=(6, 1))
    _, dz = ops.sigmoid_bce(z, y)
    grads = _flip({"logits": dz}, fault)
    return gradcheck(lambda: ops.sigmoid_bce(z.astype(np.float64), y)[0], {"logits": z}, grads,
                     tolerance=tol, step=step, name="sigmoid_bce")


LAYER_CHECKS = {
    "conv2d": check_conv2d,
    "batchnorm": check_batchnorm,
    "maxpool2x2": check_maxpool,
    "avgpool2x2": check_avgpool,
    "relu": check_relu,
    "dense": check_dense,
    "sigmoid_bce": check_sigmoid_bce,
}


def layer_suite(
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    seed: int = 0,
    fault: tuple[str, str] | None = None,
    only: Iterable[str] | None = None,
) -> list[GradcheckReport]:
    """Run every primitive check. ``fault=(layer, block)`` sign-flips one analytic block."""
    reports = []
    for name, fn in LAYER_CHECKS.items():
        if only is not None and name not in only:
            continue
        block = fault[1] if fault and fault[0] == name else None
        reports.append(fn(np.random.default_rng([seed, len(reports)]), tolerance, step, block))
    return reports


def default_step(dtype=None) -> float:
    return DEFAULT_STEP if np.dtype(dtype or default_dtype()) == np.float32 else 1e-5


def network_check(
    spec,
    *,
    batch_size: int = 4,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float | None = None,
    max_checks: int | None = 24,
    seed: int = 0,
    fault: str | None = None,
) -> GradcheckReport:
    """Gradcheck every trainable block of ``spec`` on the train-phase mean BCE loss."""
    from .architecture import init_params, network_backward, network_forward

    dt = default_dtype()
    step = default_step(dt) if step is None else step
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed=seed, dtype=dt)
    # non-trivial BN affine parameters exercise every gradient term
    for key, arr in params.trainable().items():
        if key.endswith(".gamma"):
            arr[...] = rng.uniform(0.5, 1.5, size=arr.shape)
        elif key.endswith(".beta") or key.endswith(".bias"):
            arr[...] = rng.normal(0, 0.1, size=arr.shape)
    r = spec.input_resolution
    x = rng.uniform(0, 1, size=(batch_size, 1, r, r)).astype(dt)
    y = (np.arange(batch_size) % 2).reshape(-1, 1)

    logits, tape = network_forward(spec, params, x, "train")
    _, dz = ops.sigmoid_bce(logits, y)
    grads = _flip(network_backward(tape, dz), fault)
    blocks = params.trainable()

    # ReLU masks and pool argmaxes stay pinned to the base point, so the
    # differences follow the same smooth branch the backward pass differentiates
    def loss():
        z, _ = network_forward(spec, params, x, "train", freeze=tape)
        return ops.sigmoid_bce(z.astype(np.float64), y)[0]

    return gradcheck(loss, blocks, grads, tolerance=tolerance, step=step,
                     max_checks=max_checks, seed=seed, name=f"network {spec.name} R={r}")
