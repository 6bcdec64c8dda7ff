"""Central finite-difference gradient oracle shared by the suite.

The numeric side only ever calls the forward pass, so it stays
independent of the backward implementations it is checking.

For the deep networks a pinned step of 1e-4 can straddle ReLU/LReLU/
maxpool kinks somewhere among the ~1e5 piecewise-linear units, in which
case the difference quotient measures no derivative at all.  The
kink-aware helper records every branch decision at both endpoints and
rejects draws whose interval is not differentiability-safe; accepted
draws are then held to the full tolerance.
"""

import numpy as np

import voicemorph.autograd as ag

STEP = 1e-4
RTOL = 1e-3
ATOL = 1e-9


def numeric_gradient(forward, array, flat_indices, step=STEP):
    """Central differences of scalar-valued `forward` w.r.t. entries of `array`."""
    out = []
    for idx in flat_indices:
        orig = array.flat[idx]
        array.flat[idx] = orig + step
        hi = forward()
        array.flat[idx] = orig - step
        lo = forward()
        array.flat[idx] = orig
        out.append((hi - lo) / (2.0 * step))
    return np.asarray(out)


def assert_grad_close(analytic, numeric, rtol=RTOL, atol=ATOL):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.abs(analytic - numeric) > atol + rtol * denom
    assert not bad.any(), (
        f"gradient mismatch at {np.flatnonzero(bad)[:5]}: "
        f"analytic={analytic[bad][:5]} numeric={numeric[bad][:5]}"
    )


def sample_indices(rng, size, count):
    count = min(count, size)
    return rng.choice(size, size=count, replace=False)


def precondition_unet(gen, alpha=20.0):
    """Rescale every conv weight that feeds a batch norm.

    Batch norm makes the network function invariant to this rescaling in
    training mode, but it moves the batch variances to O(1), which kills
    the 1/sigma amplification that otherwise makes a pinned 1e-4 step
    cross activation kinks.  A pure reconditioning of the test point.
    """
    for name, p in gen.named_parameters():
        if ".conv1.weight" in name or ".conv2.weight" in name:
            p.data *= alpha


# Any real branch crossing biases a central difference by about half
# the unit's slope jump, regardless of how small the unit's value is,
# so flipped draws are rejected outright.  The only exemption is values
# at pure rounding-noise scale (e.g. a BN channel with ~zero batch
# variance amplifying machine epsilon), whose slope contribution is of
# the same immeasurable order.
_DEAD_UNIT_TOL = 1e-7


class BranchRecorder:
    """Monkeypatches the piecewise-linear ops to record branch decisions
    together with the values needed to judge whether a flip matters."""

    def __init__(self):
        self.patterns = None
        self._orig = (ag.relu, ag.leaky_relu, ag.maxpool2x2)

    def __enter__(self):
        orig_relu, orig_lrelu, orig_pool = self._orig

        def relu(x):
            self.patterns.append(
                ("relu", x.data > 0, np.abs(x.data).astype(np.float32)))
            return orig_relu(x)

        def leaky_relu(x, alpha=0.2):
            self.patterns.append(
                ("relu", x.data > 0, np.abs(x.data).astype(np.float32)))
            return orig_lrelu(x, alpha)

        def maxpool2x2(x):
            n, c, h, w = x.data.shape
            tiles = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
            tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
            part = np.partition(tiles, 2, axis=-1)
            gap = (part[..., 3] - part[..., 2]).astype(np.float32)
            self.patterns.append(
                ("pool", tiles.argmax(-1).astype(np.uint8), gap))
            return orig_pool(x)

        ag.relu, ag.leaky_relu, ag.maxpool2x2 = relu, leaky_relu, maxpool2x2
        return self

    def __exit__(self, *exc):
        ag.relu, ag.leaky_relu, ag.maxpool2x2 = self._orig
        return False

    def run(self, forward):
        self.patterns = []
        value = forward()
        captured = self.patterns
        self.patterns = None
        return value, captured


def _same_patterns(a, b):
    if len(a) != len(b):
        return False
    for (kind_a, branch_a, val_a), (_, branch_b, val_b) in zip(a, b):
        if branch_a.shape != branch_b.shape:
            return False
        flipped = branch_a != branch_b
        if not flipped.any():
            continue
        # a flip matters only if the unit carries numerically live values
        # (relu: |preactivation|; pool: top-2 gap) on either side
        live = np.maximum(val_a[flipped], val_b[flipped]) > _DEAD_UNIT_TOL
        if live.any():
            return False
    return True


def kink_safe_numeric_gradient(forward, array, candidates, need, step=STEP):
    """Central differences over kink-free intervals only.

    Walks `candidates` until `need` indices whose +/-step interval keeps
    every branch decision unchanged are found; straddling draws carry no
    gradient information and are skipped.  Returns (indices, numeric
    gradients, number rejected).
    """
    accepted, grads, rejected = [], [], 0
    with BranchRecorder() as rec:
        for idx in candidates:
            if len(accepted) == need:
                break
            orig = array.flat[idx]
            array.flat[idx] = orig + step
            hi, pat_hi = rec.run(forward)
            array.flat[idx] = orig - step
            lo, pat_lo = rec.run(forward)
            array.flat[idx] = orig
            if not _same_patterns(pat_hi, pat_lo):
                rejected += 1
                continue
            accepted.append(idx)
            grads.append((hi - lo) / (2.0 * step))
    if len(accepted) < need:
        raise AssertionError(
            f"only {len(accepted)} kink-free draws among {len(candidates)}")
    return accepted, np.asarray(grads), rejected
