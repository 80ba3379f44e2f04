"""Numerical checks of the hand-written backward passes.

Two estimators of d(loss)/d(theta) for the summed softmax cross-entropy:

``central``
    (L(theta + eps) - L(theta - eps)) / 2 eps.  The difference of the two
    losses is formed from the logits without subtracting two O(1) numbers,
    and samples whose perturbation flips a ReLU mask are redrawn.  Still
    limited to roughly 1e-13 absolute accuracy in float64.
``complex``
    Im L(theta + i h) / h with h = 1e-30.  No cancellation at all, so even
    1e-10-sized gradients deep inside the network are resolved to ~1e-12
    relative.  Requires every layer to be analytic in its inputs, which the
    layers here are (ReLU masks on the real part).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .layers import ReLU
from .losses import cross_entropy_grad, one_hot, softmax

COMPLEX_STEP = 1e-30
MAX_REDRAWS = 1000


class NonFiniteGradient(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    max_error: float
    per_kind: dict = field(default_factory=dict)
    checked: int = 0
    kinks_skipped: int = 0


def _relative(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-12)


def _loss_difference(Yp: np.ndarray, Ym: np.ndarray, L: np.ndarray) -> float:
    # lse(a) - lse(b) = log1p(sum_j softmax(b)_j * expm1(a_j - b_j))
    d = Yp - Ym
    p = softmax(Ym)
    return float((np.log1p((p * np.expm1(d)).sum(axis=1)) - (L * d).sum(axis=1)).sum())


def _complex_loss(Y: np.ndarray, L: np.ndarray) -> complex:
    z = Y - Y.real.max(axis=1, keepdims=True)
    return (-(L * (z - np.log(np.exp(z).sum(axis=1, keepdims=True))))).sum()


def _relu_masks(net) -> list[np.ndarray]:
    return [layer._mask.copy() for layer in net.walk() if isinstance(layer, ReLU)]


def _param_slots(net):
    slots = defaultdict(list)
    for layer in net.walk():
        for name, p in layer.params.items():
            g = layer.grads[name]
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"{layer.kind}.{name}")
            slots[layer.kind].append((layer, name, g.copy()))
    return slots


def grad_check_report(
    net,
    x: np.ndarray,
    labels,
    epsilon: float = 1e-6,
    per_kind: int = 200,
    seed: int = 0,
    check_input: bool = False,
    method: str = "central",
) -> GradCheckReport:
    """Compare analytic gradients with numerical ones on sampled entries.

    Up to ``per_kind`` parameter entries are drawn for each layer kind that
    owns parameters (plus ``per_kind`` input entries with ``check_input``).
    Dropout must be inactive, so the network runs in inference mode.
    """
    if method not in ("central", "complex"):
        raise ValueError("method must be 'central' or 'complex'")
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    Y = net.forward(x, train=False)
    L = one_hot(labels, Y.shape[1])
    dx = net.backward(cross_entropy_grad(Y, L))
    if not np.isfinite(dx).all():
        raise NonFiniteGradient("input")
    slots = _param_slots(net)

    errors: dict[str, float] = defaultdict(float)
    report = GradCheckReport(0.0)

    if method == "complex":
        saved = {}
        for layer in net.walk():
            for name, p in layer.params.items():
                saved[id(layer), name] = p
                layer.params[name] = p.astype(np.complex128)
        saved_dtype = getattr(net, "dtype", None)
        if saved_dtype is not None:
            net.dtype = np.dtype(np.complex128)
        xc = x.astype(np.complex128)
        try:

            def derivative(arr, idx):
                flat = arr.reshape(-1)
                old = flat[idx]
                flat[idx] = old + 1j * COMPLEX_STEP
                value = _complex_loss(net.forward(xc, train=False), L).imag / COMPLEX_STEP
                flat[idx] = old
                return value

            _sample(slots, lambda layer, name: layer.params[name], derivative, xc, dx,
                    per_kind, check_input, rng, errors, report)
        finally:
            for layer in net.walk():
                for name in layer.params:
                    layer.params[name] = saved[id(layer), name]
            if saved_dtype is not None:
                net.dtype = saved_dtype
    else:

        def derivative(arr, idx):
            flat = arr.reshape(-1)
            old = flat[idx]
            flat[idx] = old + epsilon
            Yp = net.forward(x, train=False)
            mask_p = _relu_masks(net)
            flat[idx] = old - epsilon
            Ym = net.forward(x, train=False)
            mask_m = _relu_masks(net)
            flat[idx] = old
            if any((a != b).any() for a, b in zip(mask_p, mask_m)):
                return None
            return _loss_difference(Yp, Ym, L) / (2 * epsilon)

        _sample(slots, lambda layer, name: layer.params[name], derivative, x, dx,
                per_kind, check_input, rng, errors, report)

    report.per_kind = dict(errors)
    report.max_error = max(errors.values(), default=0.0)
    return report


def _sample(slots, param_of, derivative, x, dx, per_kind, check_input, rng, errors, report):
    for kind, entries in slots.items():
        arrays = [(param_of(layer, name), g) for layer, name, g in entries]
        offsets = np.cumsum([0] + [g.size for _, g in arrays])
        total = int(offsets[-1])
        want = min(per_kind, total)
        done = redraws = 0
        seen = set()
        while done < want:
            k = int(rng.integers(total))
            if k in seen:
                continue
            seen.add(k)
            which = int(np.searchsorted(offsets, k, side="right")) - 1
            p, g = arrays[which]
            idx = k - int(offsets[which])
            numeric = derivative(p, idx)
            if numeric is None:
                report.kinks_skipped += 1
                redraws += 1
                if redraws > MAX_REDRAWS or len(seen) == total:
                    break
                continue
            errors[kind] = max(errors[kind], _relative(float(g.reshape(-1)[idx]), numeric))
            done += 1
            report.checked += 1

    if check_input:
        dflat = dx.reshape(-1)
        for idx in rng.choice(dflat.size, size=min(per_kind, dflat.size), replace=False):
            numeric = derivative(x, int(idx))
            if numeric is None:
                report.kinks_skipped += 1
                continue
            errors["input"] = max(errors["input"], _relative(float(dflat[idx]), numeric))
            report.checked += 1


def grad_check(
    net,
    x: np.ndarray,
    labels,
    epsilon: float = 1e-6,
    per_kind: int = 200,
    seed: int = 0,
    check_input: bool = False,
    method: str = "central",
) -> float:
    """Max relative error ``|a - n| / max(|a|, |n|, 1e-12)`` over the sampled entries."""
    return grad_check_report(net, x, labels, epsilon, per_kind, seed, check_input, method).max_error
