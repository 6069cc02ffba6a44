"""Grayscale views of what an end-system's first block reveals about an image.

Three views of one input: (a) the original as luminance, (b) the block-1
convolution output, (c) the block-1 output after ReLU and 2x2 max-pool.
Activation views are the channel mean, min-max scaled to 0..255 per image;
a constant map becomes all zeros.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensor import ConvParams, conv2d_forward, maxpool2x2_forward, relu_forward

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)
VIEW_NAMES = ("a_original.pgm", "b_conv_l1.pgm", "c_block_l1.pgm")


def luminance_u8(image: np.ndarray) -> np.ndarray:
    lum = np.tensordot(LUMA, image, axes=1)
    return np.rint(np.clip(lum, 0, 1) * 255).astype(np.uint8)


def minmax_u8(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (values.astype(np.float64) - lo) / (hi - lo)
    return np.rint(scaled * 255).astype(np.uint8)


def activation_views(image: np.ndarray, block1: ConvParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(image[None], dtype=np.float32)
    conv = conv2d_forward(x, block1)
    pooled, _ = maxpool2x2_forward(relu_forward(conv))
    return (
        luminance_u8(image),
        minmax_u8(conv[0].mean(axis=0)),
        minmax_u8(pooled[0].mean(axis=0)),
    )


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    magic, dims, maxval, body = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError("not an 8-bit binary PGM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def dump_views(image: np.ndarray, block1: ConvParams, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, view in zip(VIEW_NAMES, activation_views(image, block1)):
        path = out_dir / name
        path.write_bytes(encode_pgm(view))
        paths.append(path)
    return paths
