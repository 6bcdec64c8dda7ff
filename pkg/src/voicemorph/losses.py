"""Training losses: total L1, identity cross-entropy, real/fake BCE."""

import numpy as np

from . import autograd as ag
from .errors import ShapeError


def _as_face_batch(face):
    if isinstance(face, ag.Tensor):
        return face if face.ndim == 4 else ag.reshape(face, (1, *face.shape))
    arr = np.asarray(face, dtype=np.float64)
    return ag.Tensor(arr[None] if arr.ndim == 3 else arr)


def l1_loss(f1, f2):
    """Total L1 norm of the error between two images (a sum, not a mean)."""
    a, b = ag.as_tensor(f1), ag.as_tensor(f2)
    return ag.l1_sum(a, b)


def classifier_loss(face, identity, critics):
    """Cross-entropy between the classifier output and one-hot `identity`."""
    identity = int(identity)
    if not 0 <= identity < critics.config.n_identities:
        raise ShapeError(
            f"identity {identity} out of range [0, {critics.config.n_identities})")
    logits = critics.classifier_logits(_as_face_batch(face))
    return ag.cross_entropy_logits(logits, [identity], reduction="sum")


def discriminator_loss(face, label, critics):
    """Binary cross-entropy of the discriminator against label 0/1,
    computed from the logit so saturation stays finite."""
    if label not in (0, 1, 0.0, 1.0):
        raise ShapeError(f"discriminator label must be 0 or 1, got {label!r}")
    logit = critics.discriminator_logit(_as_face_batch(face))
    return ag.bce_logits(logit, float(label))
