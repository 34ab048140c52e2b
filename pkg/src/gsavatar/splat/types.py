"""Gaussian scene containers, cameras, and the scene-dump format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericsError, ShapeError

SCENE_MAGIC = b"GSAVSCN1"


@dataclass
class Gaussians:
    """Structure-of-arrays batch of 3D Gaussians.

    x: (N,3) positions [m]; q: (N,4) unit quaternions (scalar first);
    s: (N,3) positive scales [m]; o: (N,) opacity in (0,1); c: (N,3) RGB in [0,1].
    """

    x: np.ndarray
    q: np.ndarray
    s: np.ndarray
    o: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32).reshape(-1, 3)
        n = self.x.shape[0]
        self.q = np.asarray(self.q, dtype=np.float32).reshape(n, 4)
        self.s = np.asarray(self.s, dtype=np.float32).reshape(n, 3)
        self.o = np.asarray(self.o, dtype=np.float32).reshape(n)
        self.c = np.asarray(self.c, dtype=np.float32).reshape(n, 3)

    def __len__(self):
        return self.x.shape[0]

    def validate(self):
        if len(self) == 0:
            return
        for name in ("x", "q", "s", "o", "c"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr).reshape(len(self), -1).all(axis=1)
            if bad.any():
                raise NumericsError(
                    f"gaussian {int(np.nonzero(bad)[0][0])}: non-finite '{name}'")
        qn = np.linalg.norm(self.q, axis=1)
        if len(self) and np.abs(qn - 1.0).max() > 1e-5:
            raise ShapeError("gaussian quaternions must be unit length")
        if np.any(self.s <= 0):
            raise ShapeError("gaussian scales must be positive")
        if np.any((self.o <= 0) | (self.o >= 1)):
            raise ShapeError("gaussian opacity must lie in (0,1)")
        if np.any((self.c < 0) | (self.c > 1)):
            raise ShapeError("gaussian colors must lie in [0,1]")

    def save(self, path):
        with open(path, "wb") as f:
            f.write(SCENE_MAGIC)
            f.write(struct.pack("<I", len(self)))
            rec = np.concatenate(
                [self.x, self.q, self.s, self.o[:, None], self.c], axis=1
            ).astype("<f4")
            f.write(rec.tobytes())

    @classmethod
    def load(cls, path) -> "Gaussians":
        with open(path, "rb") as f:
            if f.read(8) != SCENE_MAGIC:
                raise DataError(f"{path}: not a gaussian scene file")
            (n,) = struct.unpack("<I", f.read(4))
            rec = np.frombuffer(f.read(n * 14 * 4), dtype="<f4").reshape(n, 14)
        return cls(rec[:, 0:3], rec[:, 3:7], rec[:, 7:10], rec[:, 10], rec[:, 11:14])


@dataclass
class Camera:
    """Pinhole camera: intrinsics in pixels, world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray          # (3,3) world-to-camera rotation
    t: np.ndarray          # (3,) world-to-camera translation
    width: int
    height: int

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ShapeError("camera: focal lengths must be positive")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise ShapeError("camera: rotation must be orthonormal")

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": self.R.tolist(), "t": self.t.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], np.array(d["R"]),
                   np.array(d["t"]), d["width"], d["height"])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), fov_deg: float = 45.0,
                width: int = 256, height: int = 256) -> "Camera":
        """Camera at `eye` looking towards `target`; +z is the view direction."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])         # rows: camera axes in world
        t = -R @ eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) * 0.5)
        return cls(f, f, width * 0.5, height * 0.5, R, t, width, height)


def save_cameras(path, cameras: list[Camera]):
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cameras], f, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path) as f:
        return [Camera.from_dict(d) for d in json.load(f)]


@dataclass
class RenderTarget:
    """Composited image: rgb (H,W,3) and alpha (H,W), both in [0,1]."""

    rgb: np.ndarray
    alpha: np.ndarray

    saved: dict = field(default_factory=dict, repr=False)
