"""
Mask propagators: the seam where a video object segmentation model plugs into the
annotation pipeline.

Built-ins:
    static                copy the reference mask to every target
    transform:<fixture>   warp the reference mask with per-frame affine poses
    exec:<command>        run an external program through a JSON request file
"""
import json
import shlex
import subprocess
import tempfile
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from src.config import PROPAGATOR_TIMEOUT
from src.errors import PropagatorError, RasterError
from src.mask_core import BinaryMask, load_mask, save_mask
from src.models import Direction
from src.utils import setup_logger

logger = setup_logger()

PathLike = Union[str, Path]


@dataclass(frozen=True)
class FrameSource:
    index: int
    image: Path


class Propagator(ABC):
    """
    Given a reference frame and its mask, produce one mask per target frame.
    Targets arrive in propagation order (ascending for forward, descending for backward).
    """

    name = "propagator"
    # False serializes spans in the pipeline
    thread_safe = True

    @abstractmethod
    def propagate(self, reference: FrameSource, reference_mask: BinaryMask,
                  targets: Sequence[FrameSource], direction: Direction) -> List[BinaryMask]:
        ...


class StaticPropagator(Propagator):
    name = "static"

    def propagate(self, reference, reference_mask, targets, direction):
        return [reference_mask for _ in targets]


class TransformPropagator(Propagator):
    """
    Poses are absolute 2x3 affine matrices in (x, y) pixel coordinates, one per frame.
    A target mask is the reference mask warped by pose_target . inverse(pose_reference),
    nearest-neighbour sampled, zero outside the frame.
    """

    name = "transform"

    def __init__(self, poses: Dict[int, np.ndarray]):
        self.poses = {int(k): self._homogeneous(v) for k, v in poses.items()}

    @staticmethod
    def _homogeneous(matrix) -> np.ndarray:
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise PropagatorError(f"pose must be a 2x3 matrix, got shape {m.shape}")
        return np.vstack([m, [0.0, 0.0, 1.0]])

    @classmethod
    def from_fixture(cls, path: PathLike) -> "TransformPropagator":
        """Fixture JSON: {"poses": {"<frame index>": [[a, b, tx], [c, d, ty]], ...}}"""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls({int(k): v for k, v in data["poses"].items()})
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise PropagatorError(f"bad transform fixture {path}: {e}") from e

    def _pose(self, index: int) -> np.ndarray:
        if index not in self.poses:
            raise PropagatorError(f"no pose for frame {index}")
        return self.poses[index]

    def warp(self, mask: BinaryMask, reference_index: int, target_index: int) -> BinaryMask:
        relative = self._pose(target_index) @ np.linalg.inv(self._pose(reference_index))
        inverse = np.linalg.inv(relative)
        # scipy samples input = matrix @ output + offset in (row, col) order
        matrix = inverse[:2, :2][::-1, ::-1]
        offset = inverse[:2, 2][::-1]
        warped = ndimage.affine_transform(mask.bits.astype(np.uint8), matrix, offset=offset,
                                          output_shape=mask.shape, order=0, mode="constant", cval=0)
        return BinaryMask(warped > 0)

    def propagate(self, reference, reference_mask, targets, direction):
        return [self.warp(reference_mask, reference.index, t.index) for t in targets]


class SubprocessPropagator(Propagator):
    """
    Runs `<command> <request.json>`. The request holds
        {"direction", "reference_image", "reference_mask",
         "frames": [{"index", "image", "output"}, ...]}
    and the program must write one PNG mask (nonzero = foreground) to every "output".
    """

    name = "exec"

    def __init__(self, command: Union[str, Sequence[str]], timeout: Optional[int] = None,
                 thread_safe: bool = True):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise PropagatorError("empty propagator command")
        self.timeout = timeout or PROPAGATOR_TIMEOUT
        self.thread_safe = thread_safe

    def propagate(self, reference, reference_mask, targets, direction):
        if not targets:
            return []
        with tempfile.TemporaryDirectory(prefix="vcod_prop_") as tmp:
            tmp = Path(tmp)
            ref_mask_path = save_mask(tmp / "reference_mask.png", reference_mask)
            outputs = [tmp / f"mask_{t.index:06d}.png" for t in targets]
            request = {
                "direction": direction.value,
                "reference_image": str(Path(reference.image).resolve()),
                "reference_mask": str(ref_mask_path),
                "frames": [
                    {"index": t.index, "image": str(Path(t.image).resolve()), "output": str(out)}
                    for t, out in zip(targets, outputs)
                ],
            }
            request_path = tmp / "request.json"
            request_path.write_text(json.dumps(request, indent=2), encoding="utf-8")

            cmd = self.command + [str(request_path)]
            logger.debug(f"[Propagator] running {' '.join(cmd)}")
            try:
                result = subprocess.run(cmd, capture_output=True, text=True, timeout=self.timeout)
            except subprocess.TimeoutExpired as e:
                raise PropagatorError(f"propagator timed out after {self.timeout}s") from e
            except OSError as e:
                raise PropagatorError(f"cannot start propagator {self.command[0]}: {e}") from e
            if result.returncode != 0:
                raise PropagatorError(
                    f"propagator exited with code {result.returncode}: {result.stderr.strip()[-500:]}"
                )

            masks = []
            for target, out in zip(targets, outputs):
                if not out.is_file():
                    raise PropagatorError(f"propagator wrote no mask for frame {target.index}")
                try:
                    masks.append(load_mask(out, threshold=1))
                except RasterError as e:
                    raise PropagatorError(f"unreadable propagated mask for frame {target.index}: {e}") from e
            return masks


def parse_propagator(spec: str) -> Propagator:
    """
    static | transform:<fixture.json> | exec:<command line> | exec1:<command line>

    exec1 runs the same external program one span at a time, for models that
    cannot share a device between processes.
    """
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "static" and not arg:
        return StaticPropagator()
    if kind == "transform" and arg:
        return TransformPropagator.from_fixture(arg)
    if kind == "exec" and arg:
        return SubprocessPropagator(arg)
    if kind == "exec1" and arg:
        return SubprocessPropagator(arg, thread_safe=False)
    raise ValueError(f"unknown propagator '{spec}' "
                     "(expected static, transform:<fixture>, exec:<command> or exec1:<command>)")
