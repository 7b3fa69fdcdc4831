"""Axis-aligned slice extraction, colormap application and PPM output.

A slice through the element box is sampled by tensor-product Legendre
interpolation at pixel centers, mapped through a fixed 256-entry
blue-white-red colormap, and written as binary PPM (P6). Frame bytes are a
pure function of (snapshot, spec): rasterization can be split over element
footprints, but assembly, range normalization and encoding are serial.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spectral import Basis1D, legendre_table

AXES = {"x": 0, "y": 1, "z": 2}


class SliceConfigError(ValueError):
    """Slice or image parameters outside the domain."""


@dataclass(frozen=True)
class ImageSpec:
    axis: str = "z"
    slice_position: float = 0.5
    width: int = 256
    height: int = 256
    value_range: Optional[tuple[float, float]] = None  # None -> per-frame min/max
    field: str = "vel_mag"

    def __post_init__(self):
        if self.axis not in AXES:
            raise SliceConfigError(f"axis must be one of x/y/z, got {self.axis!r}")
        if not (0.0 <= self.slice_position <= 1.0):
            raise SliceConfigError(
                f"slice_position must be in [0, 1], got {self.slice_position}")
        if self.width < 1 or self.height < 1:
            raise SliceConfigError("width and height must be >= 1")
        if self.value_range is not None and self.value_range[0] >= self.value_range[1]:
            raise SliceConfigError(f"empty value_range {self.value_range}")


def blue_white_red_colormap() -> np.ndarray:
    """Fixed 256-entry colormap: blue -> white -> red, shape (256, 3) uint8."""
    t = np.linspace(0.0, 1.0, 256)
    lo = np.clip(2.0 * t, 0.0, 1.0)         # ramp for the blue half
    hi = np.clip(2.0 * (1.0 - t), 0.0, 1.0)  # ramp for the red half
    rgb = np.stack([lo, np.minimum(lo, hi), hi], axis=1)
    return np.round(rgb * 255.0).astype(np.uint8)


_COLORMAP = blue_white_red_colormap()


def _interp_matrix(basis: Basis1D, ref_coords: np.ndarray) -> np.ndarray:
    """Lagrange interpolation matrix from GLL nodal values to ref_coords."""
    p_tab = legendre_table(basis.order, ref_coords)  # (m, p+1)
    return p_tab @ basis.inverse_vandermonde


def _sample_field(snapshot_fields: dict, name: str) -> np.ndarray:
    if name == "vel_mag":
        return np.sqrt(snapshot_fields["vel_x"] ** 2
                       + snapshot_fields["vel_y"] ** 2
                       + snapshot_fields["vel_z"] ** 2)
    if name not in snapshot_fields:
        raise SliceConfigError(f"unknown field {name!r}")
    return snapshot_fields[name]


def sample_slice(fields: dict, elements_per_axis: tuple[int, int, int],
                 basis: Basis1D, spec: ImageSpec,
                 executor=None, workers: int = 1) -> np.ndarray:
    """Interpolate the sliced field on the pixel grid: (height, width) floats.

    Row 0 is the top of the image (largest vertical coordinate). For a
    slice normal to z the horizontal axis is x and vertical is y; normal
    to y: x/z; normal to x: y/z.
    """
    values = _sample_field(fields, spec.field)
    ax = AXES[spec.axis]
    ex, ey, ez = elements_per_axis
    extents = (ex, ey, ez)
    # in-plane axes in (horizontal, vertical) order
    h_ax, v_ax = {0: (1, 2), 1: (0, 2), 2: (0, 1)}[ax]
    # tensor axis in values[e, z, y, x]: physical axis 0(x)->3, 1(y)->2, 2(z)->1
    t_of = {0: 3, 1: 2, 2: 1}

    # element and reference coordinate along the slice normal
    n_ax = extents[ax]
    pos = min(spec.slice_position, np.nextafter(1.0, 0.0))
    e_slice = min(int(pos * n_ax), n_ax - 1)
    xi_slice = 2.0 * (pos * n_ax - e_slice) - 1.0
    w_slice = _interp_matrix(basis, np.array([xi_slice]))[0]  # (p+1,)

    frame = np.empty((spec.height, spec.width))
    h_cent = (np.arange(spec.width) + 0.5) / spec.width
    v_cent = (np.arange(spec.height - 1, -1, -1) + 0.5) / spec.height  # top row first

    tiles = list(iter_slice_tiles(extents[h_ax], extents[v_ax], h_cent, v_cent))

    def raster(tile):
        eh, ev, pix_h, pix_v = tile
        return tile, _raster_tile(values, basis, extents, ax, h_ax, v_ax, t_of,
                                  e_slice, w_slice, eh, ev,
                                  h_cent[pix_h], v_cent[pix_v])

    if executor is not None and workers > 1:
        chunks = [tiles[i::workers] for i in range(workers)]
        results = [blk for part in executor.map(
            lambda ch: [raster(t) for t in ch], chunks) for blk in part]
    else:
        results = [raster(t) for t in tiles]

    # assembly is deliberately serial: this is the poorly scaling gather stage
    for (eh, ev, pix_h, pix_v), block in results:
        frame[np.ix_(pix_v, pix_h)] = block
    return frame


def iter_slice_tiles(n_h: int, n_v: int, h_cent: np.ndarray, v_cent: np.ndarray):
    """Yield (eh, ev, horizontal pixel indices, vertical pixel indices)."""
    h_elem = np.minimum((h_cent * n_h).astype(int), n_h - 1)
    v_elem = np.minimum((v_cent * n_v).astype(int), n_v - 1)
    for ev in range(n_v):
        pix_v = np.nonzero(v_elem == ev)[0]
        if not pix_v.size:
            continue
        for eh in range(n_h):
            pix_h = np.nonzero(h_elem == eh)[0]
            if pix_h.size:
                yield eh, ev, pix_h, pix_v


def _raster_tile(values, basis, extents, ax, h_ax, v_ax, t_of, e_slice, w_slice,
                 eh, ev, h_coords, v_coords):
    """Interpolate one element's footprint on the pixel grid."""
    idx3 = [0, 0, 0]
    idx3[ax] = e_slice
    idx3[h_ax] = eh
    idx3[v_ax] = ev
    ix, iy, iz = idx3
    ex, ey, _ = extents
    elem_id = (iz * ey + iy) * ex + ix
    cube = values[elem_id]  # (z, y, x) nodal

    # collapse the normal axis at the slice reference coordinate
    plane = np.tensordot(w_slice, cube, axes=(0, t_of[ax] - 1))
    # remaining tensor axes of `plane` are the surviving (z, y, x) order
    rem = [a for a in (2, 1, 0) if a != ax]  # physical axes, tensor order
    if rem[0] == v_ax:
        plane_vh = plane                      # (vertical nodes, horizontal nodes)
    else:
        plane_vh = plane.T

    xi_h = 2.0 * (h_coords * extents[h_ax] - eh) - 1.0
    xi_v = 2.0 * (v_coords * extents[v_ax] - ev) - 1.0
    bh = _interp_matrix(basis, xi_h)
    bv = _interp_matrix(basis, xi_v)
    return bv @ plane_vh @ bh.T


def colorize(frame: np.ndarray,
             value_range: Optional[tuple[float, float]] = None) -> np.ndarray:
    """Map a float frame to RGB via the fixed colormap: (h, w, 3) uint8."""
    if value_range is None:
        lo, hi = float(frame.min()), float(frame.max())
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = value_range
    t = np.clip((frame - lo) / (hi - lo), 0.0, 1.0)
    idx = np.round(t * 255.0).astype(np.intp)
    return _COLORMAP[idx]


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary PPM (P6), 8-bit."""
    h, w, c = rgb.shape
    if c != 3 or rgb.dtype != np.uint8:
        raise ValueError("rgb must be (h, w, 3) uint8")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def render_slice_ppm(path, fields: dict, elements_per_axis, basis: Basis1D,
                     spec: ImageSpec) -> bytes:
    """Full pipeline: sample, colorize, write; returns the PPM bytes."""
    frame = sample_slice(fields, elements_per_axis, basis, spec)
    rgb = colorize(frame, spec.value_range)
    h, w, _ = rgb.shape
    data = f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data
