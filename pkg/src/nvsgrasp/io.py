"""Reading and writing pipeline artifacts: cameras, view sets, posed RGB-D
frame directories (PNG) and scene specs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .geometry import PinholeCamera
from .synthscene import RenderedFrame, SceneSpec

FRAMES_INDEX = "frames.json"
ROLES = ("real", "novel")


class MissingArtifactError(FileNotFoundError):
    pass


def dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=False)
        f.write("\n")


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path) as f:
        return json.load(f)


# images ---------------------------------------------------------------------

def write_color_png(path, color: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(color) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)


def read_color_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def write_depth_png(path, depth: np.ndarray) -> None:
    """16-bit PNG in millimeters; 0 stays 'no return'."""
    mm = np.clip(np.rint(np.asarray(depth) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_depth_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 1000.0


def write_label_png(path, label: np.ndarray) -> None:
    Image.fromarray(np.asarray(label).astype(np.uint8), mode="L").save(path)


def read_label_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.int64)


# cameras and view sets -----------------------------------------------------

@dataclass
class View:
    view_id: int
    role: str
    camera: PinholeCamera

    def to_dict(self) -> dict:
        d = self.camera.to_dict()
        d.update(view_id=self.view_id, role=self.role)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "View":
        if d["role"] not in ROLES:
            raise ValueError(f"unknown view role {d['role']!r}")
        return cls(int(d["view_id"]), d["role"], PinholeCamera.from_dict(d))


def save_views(path, views: Sequence[View]) -> None:
    dump_json({"views": [v.to_dict() for v in views]}, path)


def load_views(path) -> List[View]:
    return [View.from_dict(d) for d in load_json(path)["views"]]


def save_scene(path, scene: SceneSpec) -> None:
    dump_json(scene.to_dict(), path)


def load_scene(path) -> SceneSpec:
    return SceneSpec.from_dict(load_json(path))


# posed frame directories ---------------------------------------------------

def save_frames(directory, views: Sequence[View], frames: Sequence[RenderedFrame]) -> None:
    """Write ``frames.json`` plus color/depth(/label) PNGs per view."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for view, fr in zip(views, frames):
        stem = f"{view.role}_{view.view_id:03d}"
        write_color_png(directory / f"{stem}_color.png", fr.color)
        write_depth_png(directory / f"{stem}_depth.png", fr.depth)
        e = view.to_dict()
        e.update(color=f"{stem}_color.png", depth=f"{stem}_depth.png")
        if fr.label is not None:
            write_label_png(directory / f"{stem}_label.png", fr.label)
            e["label"] = f"{stem}_label.png"
        entries.append(e)
    dump_json({"frames": entries}, directory / FRAMES_INDEX)


def load_frames(directory, role: Optional[str] = None):
    """Posed frames from a directory: list of (View, RenderedFrame)."""
    directory = Path(directory)
    out = []
    for e in load_json(directory / FRAMES_INDEX)["frames"]:
        view = View.from_dict(e)
        if role is not None and view.role != role:
            continue
        color = read_color_png(directory / e["color"])
        depth = read_depth_png(directory / e["depth"])
        label = read_label_png(directory / e["label"]) if e.get("label") else None
        if depth.shape != (view.camera.height, view.camera.width):
            raise ValueError(f"{e['depth']}: size does not match its camera")
        out.append((view, RenderedFrame(color, depth, label)))
    return out
