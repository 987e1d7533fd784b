import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.common.errors import InputFormatError, InvalidArgumentError


FRAMES_PER_SECOND = 25.0
HEADER_PREFIX = "# tau="
DIGITS = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class Trace:
    """Per-slot arrival volumes in bits, replayed cyclically."""
    volumes: np.ndarray
    tau: Optional[float] = None
    name: str = "trace"

    def __post_init__(self):
        volumes = np.asarray(self.volumes, dtype=np.int64).reshape(-1)
        if volumes.size == 0:
            raise InvalidArgumentError(f"trace '{self.name}' is empty")
        if np.any(volumes < 0):
            raise InvalidArgumentError(f"trace '{self.name}' has negative volumes")
        volumes.setflags(write=False)
        object.__setattr__(self, "volumes", volumes)

    def __len__(self) -> int:
        return int(self.volumes.size)

    @property
    def mean_rate(self) -> float:
        if self.tau is None:
            raise InvalidArgumentError("trace has no slot length")
        return float(self.volumes.mean()) / self.tau


def read_trace(path: Union[str, Path]) -> Trace:
    """
    One non-negative decimal integer per line (bits in that slot) with an
    optional leading '# tau=<seconds>' header. Blank lines are not allowed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot read trace: {e}", path=str(path)) from e
    tau = None
    volumes = []
    lines = text.split("\n")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if lineno == 1 and line.startswith("#"):
            if not line.startswith(HEADER_PREFIX):
                raise InputFormatError(f"malformed header {line!r}", path=str(path), line=lineno)
            try:
                tau = float(line[len(HEADER_PREFIX):])
            except ValueError:
                raise InputFormatError(f"malformed header {line!r}", path=str(path), line=lineno) from None
            if not tau > 0:
                raise InputFormatError("tau in header must be > 0", path=str(path), line=lineno)
            continue
        if line == "" and lineno == len(lines):
            # trailing newline
            continue
        if not DIGITS.fullmatch(line):
            raise InputFormatError(f"expected a non-negative integer, got {line!r}", path=str(path), line=lineno)
        volumes.append(int(line))
    if not volumes:
        raise InputFormatError("trace contains no volumes", path=str(path))
    return Trace(volumes=np.array(volumes, dtype=np.int64), tau=tau, name=path.stem)


def write_trace(path: Union[str, Path], trace: Trace) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if trace.tau is not None:
        lines.append(f"{HEADER_PREFIX}{trace.tau!r}")
    lines.extend(str(int(v)) for v in trace.volumes)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def generate_pseudo_trace(mean_rate: float, tau: float, n_slots: int, seed: int,
                          frame_sigma: float = 0.8, name: str = "pseudo") -> Trace:
    """
    Seeded stand-in for an MPEG video trace: lognormal frame sizes at 25 frames/s,
    frames binned into slots by their emission time.
    """
    if tau <= 0 or n_slots < 1 or mean_rate < 0:
        raise InvalidArgumentError("pseudo trace needs tau > 0, n_slots >= 1 and mean_rate >= 0")
    rng = np.random.default_rng(seed)
    n_frames = int(np.ceil(n_slots * tau * FRAMES_PER_SECOND))
    mean_frame_bits = mean_rate / FRAMES_PER_SECOND
    # lognormal with E[X] = mean_frame_bits
    mu = np.log(max(mean_frame_bits, 1e-12)) - frame_sigma ** 2 / 2
    frames = rng.lognormal(mean=mu, sigma=frame_sigma, size=n_frames) if mean_rate > 0 else np.zeros(n_frames)
    slots = np.minimum((np.arange(n_frames) / FRAMES_PER_SECOND / tau).astype(np.int64), n_slots - 1)
    volumes = np.bincount(slots, weights=frames, minlength=n_slots)
    return Trace(volumes=np.rint(volumes).astype(np.int64), tau=tau, name=name)
