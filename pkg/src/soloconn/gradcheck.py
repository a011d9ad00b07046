"""Central finite-difference gradient checking.

This is the independent verification route for every analytic adjoint in
the package: it never calls backward formulas, only re-evaluates forward
passes at perturbed points. Relative error is normalized by
max(1, |analytic| + |numeric|) so tiny gradients do not blow up the metric.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor, backward, no_grad


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic) + abs(numeric))


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``point`` to a scalar Tensor and be deterministic across
    calls (fix any dropout rng inside ``f``).
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    point.requires_grad = True
    point.zero_grad()
    out = f(point)
    backward(out)
    analytic = np.zeros_like(point.data) if point.grad is None else point.grad.copy()
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError(f"non-finite analytic gradient at flat coordinate {bad}")

    flat = point.data.reshape(-1)
    aflat = analytic.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            fp = float(f(point).data.reshape(()))
            flat[i] = keep - eps
            fm = float(f(point).data.reshape(()))
            flat[i] = keep
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite forward value near flat coordinate {i}")
            numeric = (fp - fm) / (2.0 * eps)
            worst = max(worst, _rel_err(aflat[i], numeric))
    return worst


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Iterable[tuple[str, Tensor]],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Check ``loss_fn`` against every coordinate of every named parameter.

    The parameters are free variables captured by ``loss_fn``; each is
    perturbed in place. Returns per-parameter max relative error.
    """
    params = list(params)
    for _, p in params:
        p.zero_grad()
    out = loss_fn()
    backward(out)
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params
    }

    report: dict[str, float] = {}
    with no_grad():
        for name, p in params:
            flat = p.data.reshape(-1)
            aflat = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                fp = float(loss_fn().data.reshape(()))
                flat[i] = keep - eps
                fm = float(loss_fn().data.reshape(()))
                flat[i] = keep
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError(f"non-finite forward value perturbing {name}[{i}]")
                numeric = (fp - fm) / (2.0 * eps)
                worst = max(worst, _rel_err(aflat[i], numeric))
            report[name] = worst
    return report


def suite_max(report: dict[str, float]) -> float:
    return max(report.values()) if report else 0.0
