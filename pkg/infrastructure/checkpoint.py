"""
Binary checkpoints: little-endian float64 payload plus a plain-text manifest
"""
from pathlib import Path
from typing import Dict, List, Tuple, Union
import logging

import numpy as np

from models import ValidationError
from infrastructure.optim import ModelParams

logger = logging.getLogger(__name__)

FORMAT_HEADER = "# format=f64-le version=1"
DTYPE = np.dtype('<f8')

PathLike = Union[str, Path]


def _paths(base: PathLike) -> Tuple[Path, Path]:
    base = Path(base)
    return base.with_suffix('.bin'), base.with_suffix('.manifest')


def save_checkpoint(params: ModelParams, base: PathLike, meta: Dict[str, str] = None) -> Path:
    """Write <base>.bin and <base>.manifest; arrays are packed in name order"""
    bin_path, manifest_path = _paths(base)
    bin_path.parent.mkdir(parents=True, exist_ok=True)

    lines = [FORMAT_HEADER]
    for key, value in sorted((meta or {}).items()):
        lines.append(f"# {key}={value}")

    offset = 0
    with open(bin_path, 'wb') as f:
        for name, array in params.items():
            shape = ",".join(str(s) for s in array.shape)
            lines.append(f"{name}\t{shape}\t{offset}")
            payload = np.ascontiguousarray(array, dtype=DTYPE).tobytes()
            f.write(payload)
            offset += len(payload)

    manifest_path.write_text("\n".join(lines) + "\n")
    logger.info(f"Checkpoint saved: {bin_path} ({len(params)} arrays, {offset} bytes)")
    return bin_path


def read_manifest(manifest_path: Path) -> Tuple[Dict[str, str], List[Tuple[str, Tuple[int, ...], int]]]:
    if not manifest_path.exists():
        raise ValidationError(f"missing checkpoint manifest: {manifest_path}")
    lines = manifest_path.read_text().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValidationError(f"{manifest_path}: unsupported manifest header")
    meta, entries = {}, []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith('# '):
            key, _, value = line[2:].partition('=')
            meta[key] = value
            continue
        parts = line.split('\t')
        if len(parts) != 3:
            raise ValidationError(f"{manifest_path}:{lineno}: malformed entry")
        name, shape, offset = parts
        dims = tuple(int(s) for s in shape.split(',')) if shape else ()
        entries.append((name, dims, int(offset)))
    return meta, entries


def load_checkpoint(base: PathLike) -> Tuple[ModelParams, Dict[str, str]]:
    """Read a checkpoint written by save_checkpoint"""
    bin_path, manifest_path = _paths(base)
    meta, entries = read_manifest(manifest_path)
    raw = bin_path.read_bytes()
    arrays = {}
    for name, dims, offset in entries:
        count = int(np.prod(dims)) if dims else 1
        end = offset + count * DTYPE.itemsize
        if end > len(raw):
            raise ValidationError(f"{bin_path}: array '{name}' extends past end of file")
        arrays[name] = np.frombuffer(raw[offset:end], dtype=DTYPE).reshape(dims).astype(np.float64)
    logger.info(f"Checkpoint loaded: {bin_path} ({len(arrays)} arrays)")
    return ModelParams(arrays), meta
