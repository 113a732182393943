from .clips import sample_clip, eval_windows
from .frames import read_frames, write_frames
from .manifest import Manifest, Record, load_manifest, save_manifest
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Manifest", "Record", "load_manifest", "save_manifest",
    "read_frames", "write_frames", "sample_clip", "eval_windows",
    "save_checkpoint", "load_checkpoint",
]
