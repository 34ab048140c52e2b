"""Procedural synthetic-human corpus: bodies, oracle renders, datasets."""

from .body import ProceduralBodySpec, generate_subject
from .corpus import (camera_ring, generate_corpus, load_poses, pose_sequence,
                     save_poses)
from .meshrender import render_ground_truth, render_mesh

__all__ = [
    "ProceduralBodySpec", "camera_ring", "generate_corpus", "generate_subject",
    "load_poses", "pose_sequence", "render_ground_truth", "render_mesh",
    "save_poses",
]
