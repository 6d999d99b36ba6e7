"""Central-difference gradient checks for the engine's ops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import branch_tape
from .tensor import Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)

    def __str__(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: max rel err {self.max_rel_error:.2e} over {self.checked} entries (tol {self.tolerance:g})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor * max|a|)``.

    The floor keeps entries whose true gradient is ~0 from dominating with
    pure rounding noise.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float((np.abs(a - n) / denom).max())


def finite_diff_check(
    fn,
    wrt: list[Tensor],
    h: float = 1e-2,
    tolerance: float = 1e-3,
    name: str = "op",
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-2,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` takes no arguments and rebuilds the graph from the current values
    of the tensors in ``wrt``. Non-scalar outputs are contracted with a fixed
    random cotangent (in float64). ``max_entries`` subsamples the perturbed
    coordinates across all of ``wrt``. Activation branches are pinned to the
    base point during the perturbed evaluations. ``floor`` is passed to
    :func:`relative_error`; ``floor=1`` measures every entry against the
    largest gradient in the sample, which suits deep float32 graphs whose
    forward rounding puts a fixed absolute noise on each difference.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in wrt:
        t.requires_grad = True
        t.grad = None
    with branch_tape() as tape:
        out = fn()
    cot = None if out.size == 1 else rng.standard_normal(out.shape)

    def objective(o: Tensor) -> float:
        d = o.data.astype(np.float64)
        return float(d.sum()) if cot is None else float((d * cot).sum())

    seed = np.ones_like(out.data) if cot is None else cot.astype(out.data.dtype)
    out.backward(seed)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in wrt]

    coords = [(i, j) for i, t in enumerate(wrt) for j in range(t.size)]
    if max_entries is not None and len(coords) > max_entries:
        pick = rng.choice(len(coords), size=max_entries, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    a_vals, n_vals = [], []
    for i, j in coords:
        flat = wrt[i].data.reshape(-1)
        orig = flat[j]
        hi, lo = np.float32(orig + h), np.float32(orig - h)
        with branch_tape(tape):
            flat[j] = hi
            up = objective(fn())
        with branch_tape(tape):
            flat[j] = lo
            down = objective(fn())
        flat[j] = orig
        # divide by the step float32 actually took, not the nominal 2h
        n_vals.append((up - down) / (float(hi) - float(lo)))
        a_vals.append(analytic[i].reshape(-1)[j])
    err = relative_error(np.array(a_vals), np.array(n_vals), floor)
    return GradCheckReport(name=name, max_rel_error=err, checked=len(coords), tolerance=tolerance)
