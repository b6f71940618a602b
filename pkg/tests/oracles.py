"""Independent oracles shared by the unit and acceptance tests.

These deliberately avoid the library's own code paths: the LoS oracle
samples points along the segment, and the gradient oracle re-implements the
network forward pass in float64 for central differences.
"""

from __future__ import annotations

import numpy as np

from risplan.geometry import Box3, Point3


def point_sampling_blocked(p: Point3, q: Point3, box: Box3, n: int = 10**4) -> bool:
    """Dense sampling of the open segment: blocked iff any interior sample
    lands inside the closed box."""
    t = (np.arange(n) + 0.5) / n
    pts = np.array(p.as_tuple())[None, :] + t[:, None] * (
        np.array(q.as_tuple()) - np.array(p.as_tuple())
    )[None, :]
    lo = np.array(box.min.as_tuple())
    hi = np.array(box.max.as_tuple())
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    return bool(inside.any())


def inflate_box(box: Box3, eps: float) -> Box3 | None:
    """Box grown (or shrunk, eps < 0) by eps on every face; None if empty."""
    lo = np.array(box.min.as_tuple()) - eps
    hi = np.array(box.max.as_tuple()) + eps
    if np.any(lo > hi):
        return None
    return Box3(Point3(*lo), Point3(*hi))


def random_los_cases(rng: np.random.Generator, n_cases: int):
    """Random (segment, boxes) cases mixing clear, grazing, and blocked setups."""
    cases = []
    for _ in range(n_cases):
        p = Point3(*rng.uniform(-10, 10, 3))
        q = Point3(*rng.uniform(-10, 10, 3))
        if p == q:
            q = Point3(q.x + 1.0, q.y, q.z)
        boxes = []
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(-10, 10, 3)
            half = rng.uniform(0.2, 4.0, 3)
            boxes.append(Box3(Point3(*(center - half)), Point3(*(center + half))))
        cases.append((p, q, tuple(boxes)))
    return cases


def segment_case_is_degenerate(p: Point3, q: Point3, box: Box3, eps: float = 1e-6) -> bool:
    """True when the blocked/clear decision flips within +-eps of the faces,
    i.e. the segment passes within eps of the decision boundary."""
    from risplan.geometry import segment_blocked

    grown = inflate_box(box, eps)
    shrunk = inflate_box(box, -eps)
    hit_grown = segment_blocked(p, q, grown) if grown is not None else False
    hit_shrunk = segment_blocked(p, q, shrunk) if shrunk is not None else False
    return hit_grown != hit_shrunk


def denoiser_loss_f64(params, y_t, t, cond, mask, eps, tensors64=None) -> float:
    """Float64 re-implementation of the denoiser + MSE loss for finite
    differences. Mirrors the architecture definition, not the library code."""
    p = tensors64 if tensors64 is not None else {
        k: v.astype(np.float64) for k, v in params.tensors.items()
    }

    def silu(x):
        return x / (1.0 + np.exp(-x))

    def layernorm(x):
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        return xc / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + 1e-5)

    half = params.time_dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    temb0 = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    temb = temb0 @ p["time.w"] + p["time.b"]
    a1 = silu(cond.astype(np.float64) @ p["cond1.w"] + p["cond1.b"])
    c2 = a1 @ p["cond2.w"] + p["cond2.b"]
    cemb = np.where(np.asarray(mask, dtype=bool)[:, None], c2, p["null_cond"][None, :])
    h = y_t.astype(np.float64) @ p["input.w"] + p["input.b"] + temb + cemb
    for j in range(params.n_blocks):
        u = silu(layernorm(h) @ p[f"block{j}.fc1.w"] + p[f"block{j}.fc1.b"])
        h = h + u @ p[f"block{j}.fc2.w"] + p[f"block{j}.fc2.b"]
    eps_hat = layernorm(h) @ p["head.w"] + p["head.b"]
    resid = eps_hat - eps.astype(np.float64)
    return float(np.mean(np.sum(resid * resid, axis=1)))


def finite_difference_grad(params, name: str, flat_index: int, y_t, t, cond, mask, eps,
                           h: float = 1e-3) -> float:
    """Central difference of the float64 loss w.r.t. one parameter entry."""
    p64 = {k: v.astype(np.float64) for k, v in params.tensors.items()}
    flat = p64[name].reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    lp = denoiser_loss_f64(params, y_t, t, cond, mask, eps, tensors64=p64)
    flat[flat_index] = orig - h
    lm = denoiser_loss_f64(params, y_t, t, cond, mask, eps, tensors64=p64)
    flat[flat_index] = orig
    return (lp - lm) / (2.0 * h)
