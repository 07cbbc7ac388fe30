"""Tiny models used by the saliency and acceptance tests."""

import numpy as np

from cose import autodiff as ad
from cose.autodiff import ComputeGraph, Tensor


class LinearModel:
    """logits = flatten(x) @ w + b over raw inputs; no conv layer."""

    gradcam_layer = None

    def __init__(self, w, b=None, input_shape=(8, 8, 3), dtype=np.float32):
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.num_classes = w.shape[1]
        self.w = Tensor(np.asarray(w), requires_grad=True, dtype=dtype)
        self.b = Tensor(np.asarray(b), requires_grad=True, dtype=dtype) if b is not None else None

    def _fn(self, x):
        flat = ad.reshape(x, (x.shape[0], -1))
        out = ad.dense(flat, self.w, self.b)
        out.name = "logits"
        return out

    def graph(self):
        return ComputeGraph(self._fn, self.input_shape, dtype=self.dtype)

    def predict(self, image):
        g = self.graph()
        logits = g.forward(np.asarray(image, dtype=self.dtype)[None], requires_input_grad=False).data[0]
        z = logits - logits.max()
        e = np.exp(z)
        return int(logits.argmax()), e / e.sum()


class ActivationSumModel:
    """One conv layer; the logit is the plain sum of the named activation,
    so its gradient w.r.t. the activation is uniformly 1."""

    gradcam_layer = "feat"

    def __init__(self, kernel, input_shape=(8, 8, 1), dtype=np.float32):
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.num_classes = 1
        self.w = Tensor(np.asarray(kernel), requires_grad=True, dtype=dtype)
        cout = kernel.shape[-1]
        h, wid, _ = input_shape
        self.proj = Tensor(np.ones((h * wid * cout, 1)), requires_grad=False, dtype=dtype)

    def _fn(self, x):
        a = ad.relu(ad.conv2d(x, self.w, padding=1))
        a.name = "feat"
        flat = ad.reshape(a, (a.shape[0], -1))
        return ad.dense(flat, self.proj)

    def graph(self):
        return ComputeGraph(self._fn, self.input_shape, dtype=self.dtype)


def mirror_model_weights(model):
    """Symmetrize a MicroModel in place so that logits are invariant under
    left-right flips: conv kernels mirrored along their column axis, the
    dense weights mirrored along the spatial column axis."""
    p = model.params
    for name in ("conv1_w", "conv2_w"):
        w = p[name].data
        p[name].data = 0.5 * (w + w[:, ::-1, :, :])
    side4 = model.input_side // 4
    c2 = model.conv_channels[1]
    dw = p["dense_w"].data.reshape(side4, side4, c2, model.num_classes)
    p["dense_w"].data = (0.5 * (dw + dw[:, ::-1])).reshape(side4 * side4 * c2, model.num_classes)
    return model
