"""Color-space conversions and the CIEDE2000 color difference.

Images are ``(3, H, W)`` float arrays with values in ``[0, 1]``; batches are
``(B, 3, H, W)``. YUV uses the same layout with Y in plane 0 and the
zero-centered U, V planes in 1 and 2 (full resolution, 4:4:4).

The ``*_t`` functions operate on :class:`~colorlic.tensor.Tensor` batches
and are differentiable; the plain functions take and return numpy arrays.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import conv2d
from .tensor import Tensor

# BT.601 full range
KR, KB = 0.299, 0.114
KG = 1.0 - KR - KB
RGB_TO_YUV = np.array(
    [
        [KR, KG, KB],
        [-0.5 * KR / (1.0 - KB), -0.5 * KG / (1.0 - KB), 0.5],
        [0.5, -0.5 * KG / (1.0 - KR), -0.5 * KB / (1.0 - KR)],
    ]
)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)

# sRGB primaries, D65 white
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_LAB_EPS = (6.0 / 29.0) ** 3
_LAB_SLOPE = 1.0 / (3.0 * (6.0 / 29.0) ** 2)


def rgb_to_yuv(img: np.ndarray) -> np.ndarray:
    """RGB ``(3, H, W)`` (or ``(B, 3, H, W)``) to full-range BT.601 YUV."""
    return np.einsum("ij,...jhw->...ihw", RGB_TO_YUV, img)


def yuv_to_rgb(img: np.ndarray, clamp: bool = True) -> np.ndarray:
    out = np.einsum("ij,...jhw->...ihw", YUV_TO_RGB, img)
    return np.clip(out, 0.0, 1.0) if clamp else out


def _matrix_t(x: Tensor, m: np.ndarray) -> Tensor:
    return conv2d(x, m.reshape(3, 3, 1, 1).astype(x.dtype), None, 1, padding=0)


def rgb_to_yuv_t(x: Tensor) -> Tensor:
    return _matrix_t(x, RGB_TO_YUV)


def yuv_to_rgb_t(x: Tensor) -> Tensor:
    """Differentiable inverse conversion. Not clamped, so gradients survive."""
    return _matrix_t(x, YUV_TO_RGB)


# -- CIELAB -------------------------------------------------------------------

def _srgb_to_linear_t(c: Tensor) -> Tensor:
    high = T.power((T.clamp(c, lo=0.04045) + 0.055) / 1.055, 2.4)
    return T.where(c.data > 0.04045, high, c / 12.92)


def _lab_f_t(t: Tensor) -> Tensor:
    cube = T.power(T.clamp(t, lo=_LAB_EPS), 1.0 / 3.0)
    return T.where(t.data > _LAB_EPS, cube, t * _LAB_SLOPE + 4.0 / 29.0)


def srgb_to_lab_t(r: Tensor, g: Tensor, b: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """sRGB components (any common shape) to CIELAB ``(L, a, b)`` under D65."""
    lin = [_srgb_to_linear_t(c) for c in (r, g, b)]
    f = []
    for row, white in zip(RGB_TO_XYZ, D65_WHITE):
        xyz = lin[0] * float(row[0]) + lin[1] * float(row[1]) + lin[2] * float(row[2])
        f.append(_lab_f_t(xyz * float(1.0 / white)))
    fx, fy, fz = f
    return fy * 116.0 - 16.0, (fx - fy) * 500.0, (fy - fz) * 200.0


def srgb_to_lab(rgb) -> np.ndarray:
    """sRGB triples ``(..., 3)`` in ``[0, 1]`` to CIELAB ``(..., 3)``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    with T.no_grad():
        lab = srgb_to_lab_t(*(T.Tensor(rgb[..., i]) for i in range(3)))
    return np.stack([c.data for c in lab], axis=-1)


# -- CIEDE2000 ------------------------------------------------------------------

_POW25_7 = 25.0**7


def _deg(x: Tensor) -> Tensor:
    return x * (180.0 / np.pi)


def _rad(x: Tensor) -> Tensor:
    return x * (np.pi / 180.0)


def _hue_deg(b: Tensor, a: Tensor) -> Tensor:
    h = _deg(T.atan2(b, a))
    return T.where(h.data < 0, h + 360.0, h)


def ciede2000_t(L1, a1, b1, L2, a2, b2, kL: float = 1.0, kC: float = 1.0, kH: float = 1.0) -> Tensor:
    """Elementwise CIEDE2000 between two sets of Lab components.

    Hue branches follow the published case analysis on degree-valued hues,
    with boundary cases (difference exactly 180) assigned to the first
    branch. Gradients through the case selection use the selected branch.
    """
    C1 = T.sqrt(T.square(a1) + T.square(b1))
    C2 = T.sqrt(T.square(a2) + T.square(b2))
    Cbar7 = T.power((C1 + C2) * 0.5, 7.0)
    G = (1.0 - T.sqrt(Cbar7 / (Cbar7 + _POW25_7))) * 0.5
    a1p = a1 * (G + 1.0)
    a2p = a2 * (G + 1.0)
    C1p = T.sqrt(T.square(a1p) + T.square(b1))
    C2p = T.sqrt(T.square(a2p) + T.square(b2))
    h1p = _hue_deg(b1, a1p)
    h2p = _hue_deg(b2, a2p)

    prod = C1p * C2p
    achromatic = prod.data == 0
    dh = h2p - h1p
    # wrap the hue difference into (-180, 180]
    dhp = T.where(
        np.abs(dh.data) <= 180.0,
        dh,
        T.where(dh.data > 180.0, dh - 360.0, dh + 360.0),
    )
    dhp = T.where(achromatic, 0.0 * dh, dhp)

    dLp = L2 - L1
    dCp = C2p - C1p
    dHp = T.sqrt(prod) * T.sin(_rad(dhp) * 0.5) * 2.0

    Lbar = (L1 + L2) * 0.5
    Cbarp = (C1p + C2p) * 0.5
    hsum = h1p + h2p
    hbar = T.where(
        np.abs(dh.data) <= 180.0,
        hsum * 0.5,
        T.where(hsum.data < 360.0, (hsum + 360.0) * 0.5, (hsum - 360.0) * 0.5),
    )
    hbar = T.where(achromatic, hsum, hbar)

    Tw = (
        1.0
        - T.cos(_rad(hbar - 30.0)) * 0.17
        + T.cos(_rad(hbar * 2.0)) * 0.24
        + T.cos(_rad(hbar * 3.0 + 6.0)) * 0.32
        - T.cos(_rad(hbar * 4.0 - 63.0)) * 0.20
    )
    dtheta = T.exp(-T.square((hbar - 275.0) / 25.0)) * 30.0
    Cbarp7 = T.power(Cbarp, 7.0)
    Rc = T.sqrt(Cbarp7 / (Cbarp7 + _POW25_7)) * 2.0
    Lm50 = T.square(Lbar - 50.0)
    Sl = 1.0 + Lm50 * 0.015 / T.sqrt(Lm50 + 20.0)
    Sc = 1.0 + Cbarp * 0.045
    Sh = 1.0 + Cbarp * Tw * 0.015
    Rt = -T.sin(_rad(dtheta * 2.0)) * Rc

    tl = dLp / (Sl * kL)
    tc = dCp / (Sc * kC)
    th = dHp / (Sh * kH)
    total = T.square(tl) + T.square(tc) + T.square(th) + Rt * tc * th
    return T.sqrt(T.clamp(total, lo=0.0))


def ciede2000(lab1, lab2, kL: float = 1.0, kC: float = 1.0, kH: float = 1.0) -> np.ndarray:
    """CIEDE2000 color difference between Lab triples ``(..., 3)``."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    with T.no_grad():
        comps = [T.Tensor(np.ascontiguousarray(arr[..., i])) for arr in (lab1, lab2) for i in range(3)]
        out = ciede2000_t(*comps, kL=kL, kC=kC, kH=kH)
    return out.data
