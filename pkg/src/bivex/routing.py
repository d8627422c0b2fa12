"""Direction decision, 90-degree routing of vertical inputs, and the
directional encoding mask that can ride along as a second input channel."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from bivex.tensor import Tensor

H_NET = 32
W_NET = 100


class Direction(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"

    def __str__(self) -> str:
        return self.value


@dataclass
class RoutedImage:
    """Network-ready grayscale image: (1, H_net, W_net), values in [-0.5, 0.5]."""

    pixels: Tensor
    direction: Direction
    original_shape: tuple[int, int]  # (h, w) before routing


def decide_direction(width: int, height: int) -> Direction:
    """Horizontal iff width > height; squares fall to the vertical branch."""
    if width < 1 or height < 1:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    return Direction.HORIZONTAL if width > height else Direction.VERTICAL


def rotate_ccw(image: np.ndarray) -> np.ndarray:
    """90-degree counterclockwise rotation: the top edge becomes the left edge,
    so the top character of vertical text ends up leftmost."""
    return np.rot90(image, 1)


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    img = img.astype(np.float64, copy=False)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.intp), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.intp), w - 1)
    return img[ys][:, xs].astype(np.float64)


def route(image: np.ndarray, target: tuple[int, int] = (H_NET, W_NET), interp: str = "bilinear") -> RoutedImage:
    """Decide direction from the raw aspect ratio, rotate vertical inputs
    counterclockwise, resize to the network grid, and normalize pixel values
    from [0, 255] to [-0.5, 0.5]."""
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"route expects a nonempty 2-D grayscale image, got shape {img.shape}")
    h, w = img.shape
    direction = decide_direction(w, h)
    if direction is Direction.VERTICAL:
        img = rotate_ccw(img)
    h_net, w_net = target
    if interp == "bilinear":
        resized = _resize_bilinear(img, h_net, w_net)
    elif interp == "nearest":
        resized = _resize_nearest(img, h_net, w_net)
    else:
        raise ValueError(f"unknown interpolation {interp!r}")
    pixels = resized / 255.0 - 0.5
    return RoutedImage(pixels=Tensor(pixels[None]), direction=direction, original_shape=(h, w))


def dem_mask(direction: Direction, h_net: int = H_NET, w_net: int = W_NET, swap: bool = False) -> Tensor:
    """Directional encoding mask: one [0,1] ramp value per column.

    Column x carries k(0.5*u*pi) with u = x/(w_net-1); k is sin for
    horizontal and cos for vertical. ``swap=True`` exchanges the kernels
    (the mirror-image convention).
    """
    if h_net < 1 or w_net < 1:
        raise ValueError(f"mask extents must be positive, got {h_net}x{w_net}")
    if w_net == 1:
        u = np.zeros(1)
    else:
        u = np.arange(w_net) / (w_net - 1)
    use_sin = direction is Direction.HORIZONTAL
    if swap:
        use_sin = not use_sin
    row = np.sin(0.5 * u * np.pi) if use_sin else np.cos(0.5 * u * np.pi)
    return Tensor(np.broadcast_to(row, (1, h_net, w_net)).copy())


def concat_dem(image: RoutedImage, swap: bool = False) -> Tensor:
    """Stack the directional mask under the image as a second channel."""
    _, h, w = image.pixels.shape
    mask = dem_mask(image.direction, h, w, swap=swap)
    return Tensor(np.concatenate([image.pixels.data, mask.data], axis=0))
