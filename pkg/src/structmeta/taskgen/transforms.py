"""Image transformations used to build domain-shifted variants of a dataset.

Images are float arrays in [0, 1] shaped (H, W, C). Geometric transforms use
bilinear resampling about the image centre with zero fill; filters pad by
clamping to the edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, ShapeError

FAMILIES = ("rotation", "flip", "affine", "color", "filter")
COLOR_PARAMS = ("brightness", "saturation", "contrast", "hue")

_LUMA = np.array([0.299, 0.587, 0.114])
_RGB2YIQ = np.array(
    [[0.299, 0.587, 0.114], [0.595716, -0.274453, -0.321263], [0.211456, -0.522591, 0.311135]]
)
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)


@dataclass(frozen=True)
class TransformSpec:
    family: str
    params: dict = field(default_factory=dict)

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    @property
    def name(self) -> str:
        p = self.params
        if self.family == "rotation":
            return f"rotation-{p['degrees']:g}"
        if self.family == "flip":
            return f"flip-{p['axis']}"
        if self.family == "affine":
            return f"affine-scale{p['scale']:g}-shear{p.get('shear', 0.0):g}"
        if self.family == "color":
            return f"color-{p['param']}-{p['value']:g}"
        if p["kind"] == "box":
            return f"filter-box-r{p['radius']}"
        return f"filter-gaussian-s{p['sigma']:g}"

    def validate(self) -> None:
        p = self.params
        try:
            if self.family == "rotation":
                _check(0 <= p["degrees"] <= 90, "rotation degrees must lie in [0, 90]")
            elif self.family == "flip":
                _check(p["axis"] in ("horizontal", "vertical"), "flip axis must be horizontal or vertical")
            elif self.family == "affine":
                _check(0.25 <= p["scale"] <= 4.0, "affine scale must lie in [0.25, 4]")
                _check(-1.0 <= p.get("shear", 0.0) <= 1.0, "affine shear must lie in [-1, 1]")
            elif self.family == "color":
                _check(p["param"] in COLOR_PARAMS, f"color param must be one of {COLOR_PARAMS}")
                if p["param"] == "hue":
                    _check(-0.5 <= p["value"] <= 0.5, "hue shift must lie in [-0.5, 0.5] turns")
                else:
                    _check(0 < p["value"] <= 4.0, f"{p['param']} factor must lie in (0, 4]")
            elif self.family == "filter":
                if p["kind"] == "box":
                    _check(int(p["radius"]) == p["radius"] and 1 <= p["radius"] <= 10, "box radius must be an integer in [1, 10]")
                elif p["kind"] == "gaussian":
                    _check(0 < p["sigma"] <= 10, "gaussian sigma must lie in (0, 10]")
                else:
                    raise ConfigError(f"unknown filter kind {p['kind']!r}")
            else:
                raise ConfigError(f"unknown transform family {self.family!r}")
        except KeyError as exc:
            raise ConfigError(f"{self.family} transform missing parameter {exc}") from exc


def _check(cond, message):
    if not cond:
        raise ConfigError(message)


def default_specs() -> list[TransformSpec]:
    """The 53 domain shifts: 7 rotation, 2 flip, 14 affine, 20 color, 10 filter."""
    specs = [TransformSpec("rotation", {"degrees": float(a)}) for a in range(0, 91, 15)]
    specs += [TransformSpec("flip", {"axis": a}) for a in ("horizontal", "vertical")]
    for scale in np.linspace(0.5, 2.0, 7):
        for shear in (0.0, 0.3):
            specs.append(TransformSpec("affine", {"scale": round(float(scale), 4), "shear": shear}))
    levels = {
        "brightness": (0.3, 0.6, 1.4, 1.8, 2.5),
        "saturation": (0.2, 0.5, 1.5, 2.0, 3.0),
        "contrast": (0.3, 0.6, 1.4, 1.8, 2.5),
        "hue": (0.1, 0.2, 0.3, 0.4, 0.5),
    }
    for param in COLOR_PARAMS:
        specs += [TransformSpec("color", {"param": param, "value": v}) for v in levels[param]]
    specs += [TransformSpec("filter", {"kind": "box", "radius": r}) for r in range(1, 6)]
    specs += [TransformSpec("filter", {"kind": "gaussian", "sigma": s}) for s in (0.5, 1.0, 1.5, 2.0, 2.5)]
    return specs


def _resample(image: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """Apply the 2x2 (row, col) map ``forward`` about the image centre."""
    h, w, _ = image.shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    inv = np.linalg.inv(forward)
    offset = centre - inv @ centre
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[:, :, c] = ndimage.affine_transform(
            image[:, :, c], inv, offset=offset, order=1, mode="grid-constant", cval=0.0
        )
    return out


def apply_transform(image, spec: TransformSpec) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) image, got shape {image.shape}", spec.family)
    spec.validate()
    p = spec.params
    if spec.family == "rotation":
        deg = p["degrees"]
        if deg % 90 == 0:
            return np.rot90(image, k=int(deg // 90), axes=(0, 1)).copy()
        t = np.deg2rad(deg)
        # counter-clockwise in (row, col) with rows pointing down
        rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        return _resample(image, rot)
    if spec.family == "flip":
        return image[:, ::-1].copy() if p["axis"] == "horizontal" else image[::-1].copy()
    if spec.family == "affine":
        s, sh = p["scale"], p.get("shear", 0.0)
        if s == 1.0 and sh == 0.0:
            return image.copy()
        forward = np.array([[s, 0.0], [0.0, s]]) @ np.array([[1.0, 0.0], [sh, 1.0]])
        return _resample(image, forward)
    if spec.family == "color":
        return _color(image, p["param"], p["value"])
    if p["kind"] == "box":
        size = 2 * int(p["radius"]) + 1
        return ndimage.uniform_filter(image, size=(size, size, 1), mode="nearest")
    return ndimage.gaussian_filter(image, sigma=(p["sigma"], p["sigma"], 0), mode="nearest")


def _color(image: np.ndarray, param: str, value: float) -> np.ndarray:
    if param == "brightness":
        if value == 1.0:
            return image.copy()
        return np.clip(image * value, 0.0, 1.0)
    if image.shape[2] != 3:
        raise ShapeError(f"{param} needs an RGB image", "color")
    if param == "hue":
        t = 2 * np.pi * value
        rot = np.array([[1, 0, 0], [0, np.cos(t), -np.sin(t)], [0, np.sin(t), np.cos(t)]])
        m = _YIQ2RGB @ rot @ _RGB2YIQ
        return np.clip(image @ m.T, 0.0, 1.0)
    luma = image @ _LUMA
    if param == "saturation":
        gray = luma[:, :, None]
    else:
        gray = luma.mean()
    return np.clip(gray + value * (image - gray), 0.0, 1.0)
