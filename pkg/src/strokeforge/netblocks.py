"""Shared conv / dense stack builders used by the CNN decoder and the judge."""

import numpy as np

from . import autograd as ag


class ConvStack:
    """Six-ish conv layers with per-layer strides, ReLU activations.

    ``depths[i]`` is the output channel count of layer i; the input is
    expected to carry ``depths[0]`` channels (grayscale rasters are
    replicated up front when depths[0] > 1).
    """

    def __init__(self, rng, depths, strides, kernel=3, prefix="conv"):
        if len(depths) != len(strides):
            raise ag.ShapeError(f"conv stack: {len(depths)} depths vs {len(strides)} strides")
        self.depths = tuple(depths)
        self.strides = tuple(strides)
        self.kernel = kernel
        self.prefix = prefix
        self.kernels = []
        in_ch = depths[0]
        for out_ch in depths:
            self.kernels.append(ag.conv_init(rng, out_ch, in_ch, kernel, kernel))
            in_ch = out_ch

    def params(self):
        return {f"{self.prefix}{i}.kernels": k for i, k in enumerate(self.kernels)}

    def load(self, params):
        for i in range(len(self.kernels)):
            self.kernels[i] = params[f"{self.prefix}{i}.kernels"]

    def forward(self, x):
        """x: [B, depths[0], H, W] -> [B, depths[-1], H', W']."""
        for kernels, stride in zip(self.kernels, self.strides):
            x = ag.relu(ag.conv2d(x, kernels, stride=stride))
        return x


class DenseStack:
    """Dense layers with ELU activations; the final layer is linear."""

    def __init__(self, rng, widths, prefix="dense"):
        self.widths = tuple(widths)
        self.prefix = prefix
        self.layers = []
        for i in range(len(widths) - 1):
            self.layers.append(ag.dense_init(rng, widths[i], widths[i + 1]))

    def params(self):
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{self.prefix}{i}.weights"] = w
            out[f"{self.prefix}{i}.bias"] = b
        return out

    def load(self, params):
        for i in range(len(self.layers)):
            self.layers[i] = (params[f"{self.prefix}{i}.weights"], params[f"{self.prefix}{i}.bias"])

    def forward(self, x):
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            x = ag.dense(x, w, b)
            if i != last:
                x = ag.elu(x)
        return x


def replicate_channels(image_batch, channels):
    """[B, 1, H, W] -> [B, channels, H, W] by repetition (no-op for 1)."""
    if channels == 1:
        return image_batch
    return np.repeat(image_batch, channels, axis=1)


def freeze(params):
    for p in params.values():
        p.requires_grad = False
    return params
