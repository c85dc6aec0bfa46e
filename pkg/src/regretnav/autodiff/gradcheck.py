"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def failures(self):
        return {k: v for k, v in self.errors.items() if not v < self.tol}

    @property
    def passed(self):
        return not self.failures

    def __str__(self):
        lines = [f"{name:<28s} {err:.3e} {'ok' if err < self.tol else 'FAIL'}"
                 for name, err in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic, numeric, floor=1e-10, scale_floor=1e-3, atol=1e-10):
    """Max elementwise |a - n| / (|a| + |n|).

    The denominator is bounded below by ``floor`` and by ``scale_floor``
    times the largest analytic magnitude, so entries far below the
    tensor's gradient scale are judged against that scale instead of
    against finite-difference roundoff.  Entries with ``|a - n| <= atol``
    count as exact; this covers gradients that vanish identically.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if not analytic.size:
        return 0.0
    bound = max(floor, scale_floor * float(np.abs(analytic).max()))
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), bound)
    diff = np.abs(analytic - numeric)
    diff[diff <= atol] = 0.0
    return float(np.max(diff / denom))


def numeric_grad(f, tensor, step=1e-5, entries=None):
    """Central differences of scalar ``f()`` w.r.t. ``tensor.value``.

    ``entries`` optionally restricts the probe to a subset of flat indices;
    the returned array then holds only those entries.
    """
    flat = tensor.value.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2.0 * step))
    out = np.array(out)
    return out.reshape(tensor.shape) if entries is None else out


def _scalar(x):
    return float(np.asarray(getattr(x, "value", x)).reshape(-1)[0])


def grad_check(f, params, step=1e-5, tol=1e-4, max_entries=None, rng=None, scale_floor=1e-3, atol=1e-10):
    """Compare analytic and central-difference gradients of ``f``.

    ``f`` must be deterministic and return a scalar tensor; ``params`` maps
    names to parameter tensors.  With ``max_entries``, a random subset of
    each tensor's entries is probed.
    """
    params = dict(params)
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def value():
        return _scalar(f())

    rng = rng if rng is not None else np.random.default_rng(0)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        entries = None
        if max_entries is not None and p.value.size > max_entries:
            entries = np.sort(rng.choice(p.value.size, size=max_entries, replace=False))
        num = numeric_grad(value, p, step=step, entries=entries)
        ana = analytic[name] if entries is None else analytic[name].reshape(-1)[entries]
        report.errors[name] = relative_error(ana, num, scale_floor=scale_floor, atol=atol)
    return report
