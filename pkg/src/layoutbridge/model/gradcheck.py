"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

import math
from typing import Callable, Dict, Mapping, Optional

import numpy as np

# denominator floor; some gradients (attention key biases) are identically zero
# and their central differences are pure round-off
GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|, GRAD_FLOOR)`` in the 2-norm over one tensor."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), GRAD_FLOOR)
    return diff / scale


def grad_check_fn(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    eps: float = 1e-3,
    names=None,
) -> Dict[str, float]:
    """Per-tensor relative error of ``grads`` against central differences.

    ``loss_fn`` must read ``params`` in place; each entry is perturbed and
    restored in turn.
    """
    errors = {}
    for name in names if names is not None else params:
        p = params[name]
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            plus = loss_fn()
            flat[i] = old - eps
            minus = loss_fn()
            flat[i] = old
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            nflat[i] = (plus - minus) / (2.0 * eps)
        errors[name] = relative_error(np.asarray(grads[name], dtype=float), numeric)
    return errors


def grad_check(model, batch, eps: float = 1e-3, grads: Optional[Mapping[str, np.ndarray]] = None) -> float:
    """Worst per-tensor relative error of the layout loss gradients.

    Pass ``grads`` to check a substitute gradient (used as a negative control).
    """
    (loss, _, _), analytic = model.loss_and_grads(batch)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    if grads is None:
        grads = analytic
    errors = grad_check_fn(lambda: model.loss(batch)[0], model.params, grads, eps)
    return max(errors.values())
