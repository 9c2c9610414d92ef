"""Finite-difference checks over every loss-bearing path, on tiny random instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from . import model as fm
from . import numerics as nx
from .numerics import Tensor, grad_check

T, D, B, C = 3, 4, 2, 3
FRAME = (2, 2)
LABELS = [0, 2]


@dataclass
class ComponentResult:
    name: str
    max_rel_error: float
    passed: bool


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted_sum(outputs, weights) -> Tensor:
    total = None
    for out, w in zip(outputs, weights):
        term = nx.sum(nx.mul(out, Tensor(w)))
        total = term if total is None else total + term
    return total


def _tiny_model(rng) -> fm.ModelParams:
    p = fm.init_params(C, FRAME, d=D, seed=int(rng.integers(2**31)))
    # unit-scale weights keep tokens distinct, so no gradient entry sits near the
    # finite-difference noise floor (~1e-10 absolute at h=1e-5)
    for t in (p.W_e, p.Wq, p.Wk, p.Wv):
        t.data[...] = rng.standard_normal(t.shape)
    for t in (p.b_e, p.text):
        t.data[...] = rng.standard_normal(t.shape) * 0.5
    return p


def _cases(rng):
    frames = rng.uniform(0, 1, size=(B, T) + FRAME)

    p = _tiny_model(rng)
    r = rng.standard_normal((B, T, D))
    yield "encoder", (lambda: nx.sum(nx.mul(fm.encode_frames(frames, p), Tensor(r)))), [p.W_e, p.b_e]

    v_c, v_f = _param(rng, B, T, D), _param(rng, B, T, D)
    w1, w2 = rng.standard_normal((2, B, T, D))
    yield "FAS", (lambda: _weighted_sum(fm.fog_aware_selection(v_c, v_f), (w1, w2))), [v_c, v_f]

    p = _tiny_model(rng)
    a_c, a_f = _param(rng, B, T, D), _param(rng, B, T, D)
    yield (
        "ME",
        lambda: _weighted_sum(fm.mutual_enhancement(a_c, a_f, p), (w1, w2)),
        [a_c, a_f, p.Wq, p.Wk, p.Wv],
    )

    d_f, d_c = _param(rng, B, T, D), _param(rng, B, T, D)
    yield "CSA+L_temp", (lambda: losses.temporal_loss(fm.consistency_matrix(d_f, d_c))), [d_f, d_c]

    logits = _param(rng, B, C, scale=2.0)
    yield "InfoNCE-T2V", (lambda: losses.infonce_t2v(logits, LABELS)), [logits]
    yield "InfoNCE-V2T", (lambda: losses.infonce_v2t(logits, LABELS)), [logits]

    p = _tiny_model(rng)
    foggy = rng.uniform(0, 1, size=(B, T) + FRAME)

    def full():
        return losses.total_loss(fm.forward_train(foggy, frames, p), LABELS)[0]

    yield "L_all", full, list(p.trainable().values())


def run_gradient_suite(seed: int = 0, tol: float = 1e-4, h: float = 1e-5) -> list[ComponentResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, f, params in _cases(rng):
        report = grad_check(f, params, h=h, tol=tol)
        results.append(ComponentResult(name, report.max_error, report.passed))
    return results


def format_table(results: list[ComponentResult], tol: float) -> str:
    lines = [f"{'component':<14} {'max rel err':>12}  status (tol {tol:g})"]
    for r in results:
        lines.append(f"{r.name:<14} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
