"""Equi-distance fisheye camera model and perspective-view frame math.

Coordinate conventions used throughout the package:

* Image frames (fisheye and patch) use continuous pixel coordinates where
  pixel (i, j) has its center at (i + 0.5, j + 0.5); x runs along columns
  (rightward), y along rows (downward).
* The 3D camera frame is right-handed: x_c/y_c coincide with the fisheye
  image axes and z_c points along the optical axis into the scene (for a
  ceiling-mounted camera, straight down).
* A perspective view (patch) is described by its view frame, whose z axis
  is tilted by ``phi1`` from the optical axis toward azimuth ``phi2``, and
  by the horizontal/vertical view angles ``alpha_x``/``alpha_y``.
* Relative patch coordinates map patch pixel centers linearly onto
  [-1, 1] x [-1, 1]: the first pixel center sits at -1, the last at +1.

All functions broadcast over numpy arrays; scalars in, scalars out.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

_MIN_PHI1 = np.radians(0.5)  # view frame degenerates as phi1 -> 0 or pi

LUT_MAGIC = b"FPLUT1"


class DegenerateFrameError(ValueError):
    """View axis too close to the optical axis to define a frame."""


@dataclass(frozen=True)
class FisheyeCamera:
    """Equi-distance camera: incidence angle grows linearly with radius."""

    center_x: float
    center_y: float
    radius: float
    max_angle: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0 < self.max_angle <= np.pi:
            raise ValueError(f"max_angle must be in (0, pi], got {self.max_angle}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.center_x, self.center_y])


@dataclass(frozen=True, eq=False)
class ViewFrame:
    """Orthonormal right-handed frame of a perspective view."""

    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Rows are x, y, z axes; maps camera-frame vectors to view frame."""
        return np.stack([self.x_axis, self.y_axis, self.z_axis])


@dataclass(frozen=True)
class PatchSpec:
    """Orientation, field of view, and pixel dimensions of one patch."""

    phi1: float
    phi2: float
    alpha_x: float
    alpha_y: float
    width_px: int
    height_px: int

    def __post_init__(self):
        if not 0 < self.phi1 < np.pi:
            raise ValueError(f"phi1 must be in (0, pi), got {self.phi1}")
        if not 0 < self.alpha_x < np.pi:
            raise ValueError(f"alpha_x must be in (0, pi), got {self.alpha_x}")
        if not 0 < self.alpha_y < np.pi:
            raise ValueError(f"alpha_y must be in (0, pi), got {self.alpha_y}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("patch dimensions must be positive")

    @cached_property
    def frame(self) -> ViewFrame:
        return view_frame(self.phi1, self.phi2)


def incidence_angle(r, cam: FisheyeCamera):
    """Angle between a scene ray and the optical axis for image radius ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > cam.radius):
        raise ValueError(f"radial distance outside [0, {cam.radius}]")
    theta = cam.max_angle * r / cam.radius
    return float(theta) if theta.ndim == 0 else theta


def view_frame(phi1: float, phi2: float) -> ViewFrame:
    """Build the view frame whose z axis points at angles (phi1, phi2).

    The x axis is horizontal (perpendicular to the optical axis), the y axis
    completes the right-handed frame and tilts toward the optical axis, so
    that radially outward in the fisheye image is "up" in the patch.
    """
    if not _MIN_PHI1 <= phi1 <= np.pi - _MIN_PHI1:
        raise DegenerateFrameError(
            f"phi1={phi1!r} too close to 0 or pi; view frame undefined"
        )
    s1, c1 = np.sin(phi1), np.cos(phi1)
    s2, c2 = np.sin(phi2), np.cos(phi2)
    z = np.array([s1 * c2, s1 * s2, c1])
    # z_c x z_m, normalized; norm is sin(phi1) which is bounded away from 0
    x = np.array([-s2, c2, 0.0])
    y = np.cross(z, x)
    return ViewFrame(x_axis=x, y_axis=y, z_axis=z)


def patch_pixel_to_ray(xp, yp, spec: PatchSpec) -> np.ndarray:
    """Ray direction (not normalized) for relative patch coordinates."""
    f = spec.frame
    xp = np.asarray(xp, dtype=float)[..., None]
    yp = np.asarray(yp, dtype=float)[..., None]
    pc = f.z_axis + xp * np.tan(spec.alpha_x / 2) * f.x_axis \
        + yp * np.tan(spec.alpha_y / 2) * f.y_axis
    return pc


def ray_to_fisheye(pc, cam: FisheyeCamera) -> np.ndarray:
    """Project ray directions to fisheye pixel coordinates.

    Returns an (..., 2) array; rays whose incidence angle exceeds the
    camera's max_angle come back as NaN pairs (out of range).  Raises on
    zero-length rays.
    """
    pc = np.asarray(pc, dtype=float)
    px, py, pz = pc[..., 0], pc[..., 1], pc[..., 2]
    t = np.hypot(px, py)
    if np.any((t == 0) & (pz == 0)):
        raise ValueError("zero ray direction")
    theta = np.arctan2(t, pz)
    rad = cam.radius * theta / cam.max_angle
    # azimuth from the normalized transverse component: the image point lies
    # at distance exactly R from the center even at the circle boundary
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(t > 0, px / np.where(t > 0, t, 1.0), 0.0)
        uy = np.where(t > 0, py / np.where(t > 0, t, 1.0), 0.0)
    x = cam.center_x + rad * ux
    y = cam.center_y + rad * uy
    out = np.stack([x, y], axis=-1)
    # theta > max_angle: out of range; theta > 0 with no transverse component
    # happens only for the exact backward ray, whose azimuth is undefined
    bad = (theta > cam.max_angle) | ((t == 0) & (theta > 0))
    out[bad] = np.nan
    return out


def fisheye_to_ray(x, y, cam: FisheyeCamera) -> np.ndarray:
    """Unit ray direction for a fisheye image point; inverse of ray_to_fisheye."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - cam.center_x
    dy = y - cam.center_y
    r = np.hypot(dx, dy)
    if np.any(r > cam.radius * (1 + 1e-9)):
        raise ValueError("point outside the fisheye circle")
    theta = cam.max_angle * np.minimum(r, cam.radius) / cam.radius
    psi = np.arctan2(dy, dx)
    st = np.sin(theta)
    return np.stack([st * np.cos(psi), st * np.sin(psi), np.cos(theta)], axis=-1)


def ray_to_patch_pixel(pc, spec: PatchSpec) -> np.ndarray:
    """Relative patch coordinates of ray directions.

    Returns (..., 2); rays behind the view plane (non-positive component
    along the view axis) come back as NaN pairs.  Coordinates outside
    [-1, 1] indicate the ray misses the patch.
    """
    pc = np.asarray(pc, dtype=float)
    f = spec.frame
    dz = pc @ f.z_axis
    with np.errstate(invalid="ignore", divide="ignore"):
        xp = (pc @ f.x_axis) / dz / np.tan(spec.alpha_x / 2)
        yp = (pc @ f.y_axis) / dz / np.tan(spec.alpha_y / 2)
    out = np.stack([xp, yp], axis=-1)
    out[dz <= 0] = np.nan
    return out


def in_patch(rel: np.ndarray) -> np.ndarray:
    """Mask of relative coordinates that land inside the patch."""
    rel = np.asarray(rel)
    with np.errstate(invalid="ignore"):
        return (np.abs(rel[..., 0]) <= 1) & (np.abs(rel[..., 1]) <= 1)


def rel_from_patch_px(u, n_px: int):
    """Continuous patch pixel coordinate -> relative coordinate in [-1, 1]."""
    return (np.asarray(u, dtype=float) - 0.5) * (2.0 / (n_px - 1)) - 1.0


def patch_px_from_rel(rel, n_px: int):
    """Relative coordinate -> continuous patch pixel coordinate."""
    return (np.asarray(rel, dtype=float) + 1.0) * ((n_px - 1) / 2.0) + 0.5


@dataclass(frozen=True, eq=False)
class WarpLut:
    """Per patch-pixel source coordinates in the fisheye image.

    ``coords`` has shape (height, width, 2), float32; NaN pairs mark patch
    pixels whose rays leave the fisheye circle.
    """

    coords: np.ndarray
    camera: FisheyeCamera

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]

    @cached_property
    def _sampler(self) -> dict:
        valid = np.isfinite(self.coords[..., 0]).ravel()
        gx = self.coords[..., 0].ravel()[valid].astype(np.float64) - 0.5
        gy = self.coords[..., 1].ravel()[valid].astype(np.float64) - 0.5
        i0 = np.floor(gx).astype(np.int64)
        j0 = np.floor(gy).astype(np.int64)
        return {
            "valid": np.flatnonzero(valid),
            "i0": i0,
            "j0": j0,
            "fx": (gx - i0).astype(np.float32),
            "fy": (gy - j0).astype(np.float32),
        }


def build_warp_lut(spec: PatchSpec, cam: FisheyeCamera) -> WarpLut:
    """Precompute fisheye source coordinates for every patch pixel."""
    xs = rel_from_patch_px(np.arange(spec.width_px) + 0.5, spec.width_px)
    ys = rel_from_patch_px(np.arange(spec.height_px) + 0.5, spec.height_px)
    rel_x, rel_y = np.meshgrid(xs, ys)
    rays = patch_pixel_to_ray(rel_x, rel_y, spec)
    coords = ray_to_fisheye(rays, cam).astype(np.float32)
    return WarpLut(coords=coords, camera=cam)


def warp_patch(image: np.ndarray, lut: WarpLut) -> np.ndarray:
    """Resample a fisheye image into a patch via bilinear interpolation.

    Invalid LUT entries render black.  Deterministic: the output depends
    only on the image and LUT contents.
    """
    cam = lut.camera
    h_img, w_img = image.shape[:2]
    if (cam.center_x + cam.radius > w_img + 1e-6
            or cam.center_y + cam.radius > h_img + 1e-6
            or cam.center_x - cam.radius < -1e-6
            or cam.center_y - cam.radius < -1e-6):
        raise ValueError(
            f"image {w_img}x{h_img} does not contain the fisheye circle "
            f"of the camera this LUT was built for"
        )
    s = lut._sampler
    # clamp neighbor indices so boundary samples reuse in-image pixels
    i0 = np.clip(s["i0"], 0, w_img - 1)
    i1 = np.clip(s["i0"] + 1, 0, w_img - 1)
    j0 = np.clip(s["j0"], 0, h_img - 1)
    j1 = np.clip(s["j0"] + 1, 0, h_img - 1)
    fx, fy = s["fx"], s["fy"]

    flat = image.reshape(h_img * w_img, -1).astype(np.float32)
    w00 = ((1 - fx) * (1 - fy))[:, None]
    w10 = (fx * (1 - fy))[:, None]
    w01 = ((1 - fx) * fy)[:, None]
    w11 = (fx * fy)[:, None]
    vals = (w00 * flat[j0 * w_img + i0] + w10 * flat[j0 * w_img + i1]
            + w01 * flat[j1 * w_img + i0] + w11 * flat[j1 * w_img + i1])

    n_chan = flat.shape[1]
    out_shape = (lut.height * lut.width, n_chan)
    out = np.zeros(out_shape, dtype=np.float32)
    out[s["valid"]] = vals
    if np.issubdtype(image.dtype, np.integer):
        out = np.clip(np.rint(out), 0, np.iinfo(image.dtype).max)
    out = out.astype(image.dtype)
    final_shape = (lut.height, lut.width) if image.ndim == 2 \
        else (lut.height, lut.width, image.shape[2])
    return out.reshape(final_shape)


def save_lut(lut: WarpLut, path) -> None:
    """Write a LUT cache file (little-endian, NaN pair = invalid entry)."""
    cam = lut.camera
    header = LUT_MAGIC + struct.pack(
        "<II4d", lut.width, lut.height,
        cam.center_x, cam.center_y, cam.radius, cam.max_angle,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(lut.coords, dtype="<f4").tobytes())


def load_lut(path) -> WarpLut:
    """Read a LUT cache file written by save_lut."""
    with open(path, "rb") as f:
        magic = f.read(len(LUT_MAGIC))
        if magic != LUT_MAGIC:
            raise ValueError(f"not a LUT cache file: bad magic {magic!r}")
        w, h, cx, cy, radius, max_angle = struct.unpack("<II4d", f.read(40))
        data = np.frombuffer(f.read(h * w * 2 * 4), dtype="<f4")
    if data.size != h * w * 2:
        raise ValueError("truncated LUT cache file")
    coords = data.reshape(h, w, 2).copy()
    cam = FisheyeCamera(center_x=cx, center_y=cy, radius=radius, max_angle=max_angle)
    return WarpLut(coords=coords, camera=cam)
