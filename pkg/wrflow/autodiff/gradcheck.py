"""
Central finite-difference verification of backward gradients.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from wrflow.autodiff.ops import DetachAnchors, anchored_detach
from wrflow.autodiff.tensor import Tensor, backward

DEFAULT_STEP = 1e-5
RELATIVE_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numerical_gradient(
    fn: Callable[[], Tensor],
    param: Tensor,
    h: float = DEFAULT_STEP,
    coords: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Central differences of ``fn`` with respect to ``param``.

    ``param.data`` is perturbed in place and restored. Coordinates not in
    ``coords`` (flat indices) are left at zero.
    """
    if not param.data.flags["C_CONTIGUOUS"]:
        param.data = np.ascontiguousarray(param.data)
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.size)
    indices = range(flat.size) if coords is None else coords
    for i in indices:
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * h)
    return grad.reshape(param.shape)


@dataclass
class GradcheckResult:
    """Outcome of comparing backward gradients with finite differences."""

    max_rel_error: float
    worst_parameter: str
    n_coordinates: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def check_gradients(
    fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    h: float = DEFAULT_STEP,
    tolerance: float = 1e-5,
    max_coordinates: Optional[int] = None,
    seed: int = 0,
) -> GradcheckResult:
    """
    Compare ``backward`` against central differences.

    Args:
        fn: Builds a fresh graph and returns a scalar loss
        params: Named parameters to check
        h: Finite-difference step
        tolerance: Maximum allowed relative error
        max_coordinates: Check a seeded random subset of this many
            coordinates instead of all of them
        seed: Seed for the subset

    Returns:
        GradcheckResult with the worst relative error found
    """
    names = list(params)
    analytic = backward(fn(), wrt=[params[n] for n in names])

    plan: List[Tuple[str, np.ndarray]] = []
    total = sum(params[n].size for n in names)
    if max_coordinates is None or max_coordinates >= total:
        plan = [(n, np.arange(params[n].size)) for n in names]
    else:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(total, size=max_coordinates, replace=False))
        offsets = np.cumsum([0] + [params[n].size for n in names])
        for k, n in enumerate(names):
            local = chosen[(chosen >= offsets[k]) & (chosen < offsets[k + 1])] - offsets[k]
            if local.size:
                plan.append((n, local))

    worst, worst_name, counted = 0.0, "", 0
    for name, coords in plan:
        param = params[name]
        numeric = numerical_gradient(fn, param, h=h, coords=coords).reshape(-1)[coords]
        exact = analytic[param].reshape(-1)[coords]
        err = relative_error(exact, numeric)
        counted += coords.size
        if err.size and err.max() > worst:
            worst, worst_name = float(err.max()), name

    return GradcheckResult(
        max_rel_error=worst,
        worst_parameter=worst_name,
        n_coordinates=counted,
        tolerance=tolerance,
    )


def detach_surrogate(fn: Callable[[], Tensor]) -> Callable[[], Tensor]:
    """
    Finite-difference target for a loss built with ``partial_detach``.

    Runs ``fn`` once to record every detached buffer, then returns a
    function whose forward holds each detached share at its recorded
    value (``alpha * reference + (1 - alpha) * x``). Its central
    differences equal the partial-detach backward of ``fn`` at the
    recorded point, so ``check_gradients(detach_surrogate(fn), ...)``
    verifies a surgery backward against an honest oracle.
    """
    anchors = DetachAnchors()
    with anchored_detach(anchors):
        fn()

    def surrogate() -> Tensor:
        with anchored_detach(anchors):
            return fn()

    return surrogate
