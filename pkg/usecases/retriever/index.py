"""
Latent retrieval index: mean directions of the training examples, queried by
the closed-form vMF KL distance
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from models import Example, RetrievalMode, ValidationError
from infrastructure.checkpoint import DTYPE, FORMAT_HEADER
from infrastructure.optim import ModelParams
from infrastructure.vmf import LatentCode, c_kappa
from usecases.retriever.model import ContextAwareRetriever

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class Neighbour:
    rank: int
    example_id: str
    distance: float


class RetrievalIndex:
    """Rows are [mu_x; mu_c] of indexed examples, parallel to `ids`"""

    def __init__(self, matrix: np.ndarray, ids: Sequence[str], kappa: float, dim: int):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != 2 * dim:
            raise ValidationError(f"index matrix of shape {matrix.shape} does not hold two halves of dimension {dim}")
        if matrix.shape[0] != len(ids):
            raise ValidationError(f"{matrix.shape[0]} index rows but {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise ValidationError("index ids must be unique")
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self.ids: List[str] = list(ids)
        self.kappa = float(kappa)
        self.dim = int(dim)
        self._positions = {example_id: i for i, example_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, example_id: str) -> bool:
        return example_id in self._positions

    def code(self, example_id: str) -> LatentCode:
        row = self.matrix[self._positions[example_id]]
        return LatentCode(mu_x=row[:self.dim].copy(), mu_c=row[self.dim:].copy(), kappa=self.kappa)

    def distances(self, code: LatentCode, mode: RetrievalMode = RetrievalMode.CONTEXT_AWARE) -> np.ndarray:
        """Latent distance from `code` to every row"""
        if code.kappa != self.kappa or code.dim != self.dim:
            raise ValidationError(f"query code (d={code.dim}, kappa={code.kappa}) does not match the index "
                                  f"(d={self.dim}, kappa={self.kappa})")
        scale = c_kappa(self.dim, self.kappa)
        dx = self.matrix[:, :self.dim] - code.mu_x
        total = np.sum(dx * dx, axis=1)
        if mode == RetrievalMode.CONTEXT_AWARE:
            dc = self.matrix[:, self.dim:] - code.mu_c
            total = total + np.sum(dc * dc, axis=1)
        return scale * total

    def nearest(self, code: LatentCode, k: int, mode: RetrievalMode = RetrievalMode.CONTEXT_AWARE,
                exclude: Optional[str] = None) -> List[Neighbour]:
        """K nearest rows by ascending distance, ties by ascending id, `exclude` never returned"""
        if len(self) == 0:
            raise ValidationError("cannot retrieve from an empty index")
        if k < 1:
            raise ValidationError(f"K must be >= 1, got {k}")
        distances = self.distances(code, mode)
        order = sorted(
            (float(d), example_id) for d, example_id in zip(distances, self.ids) if example_id != exclude
        )
        return [Neighbour(rank, example_id, d) for rank, (d, example_id) in enumerate(order[:k], start=1)]

    def save(self, base: PathLike):
        """<base>.bin holds the packed rows, <base>.manifest the metadata and ids"""
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix('.bin').write_bytes(np.ascontiguousarray(self.matrix, dtype=DTYPE).tobytes())
        lines = [
            FORMAT_HEADER,
            f"# kappa={self.kappa!r}",
            f"# d={self.dim}",
            f"# rows={self.matrix.shape[0]}",
            f"# columns={self.matrix.shape[1]}",
        ] + self.ids
        base.with_suffix('.manifest').write_text("\n".join(lines) + "\n")
        logger.info(f"Index saved: {base.with_suffix('.bin')} ({len(self)} rows)")

    @classmethod
    def load(cls, base: PathLike) -> 'RetrievalIndex':
        base = Path(base)
        manifest = base.with_suffix('.manifest')
        if not manifest.exists():
            raise ValidationError(f"missing index manifest: {manifest}")
        lines = manifest.read_text().splitlines()
        if not lines or lines[0] != FORMAT_HEADER:
            raise ValidationError(f"{manifest}: unsupported manifest header")
        meta: Dict[str, str] = {}
        ids = []
        for line in lines[1:]:
            if line.startswith('# '):
                key, _, value = line[2:].partition('=')
                meta[key] = value
            elif line:
                ids.append(line)
        try:
            rows, columns = int(meta['rows']), int(meta['columns'])
            kappa, dim = float(meta['kappa']), int(meta['d'])
        except (KeyError, ValueError) as e:
            raise ValidationError(f"{manifest}: incomplete index metadata ({e})")
        matrix = np.frombuffer(base.with_suffix('.bin').read_bytes(), dtype=DTYPE)
        if matrix.size != rows * columns:
            raise ValidationError(f"{base.with_suffix('.bin')}: expected {rows * columns} values, got {matrix.size}")
        return cls(matrix.reshape(rows, columns).astype(np.float64), ids, kappa, dim)


def build_index(examples: Sequence[Example], model: ContextAwareRetriever, params: ModelParams) -> RetrievalIndex:
    """One row of mean directions per supervised example; no sampling"""
    indexed = [e for e in examples if e.is_supervised]
    codes = [model.latent_code(params, e) for e in indexed]
    dim = model.config.latent_dim
    matrix = np.vstack([c.vector for c in codes]) if codes else np.zeros((0, 2 * dim))
    logger.info(f"Built retrieval index over {len(indexed)} examples")
    return RetrievalIndex(matrix, [e.id for e in indexed], model.config.kappa, dim)


def retrieve(index: RetrievalIndex, query: Example, model: ContextAwareRetriever, params: ModelParams,
             k: int, mode: RetrievalMode = RetrievalMode.CONTEXT_AWARE) -> List[Neighbour]:
    """K nearest indexed examples of a query; the query's own id is excluded"""
    return index.nearest(model.latent_code(params, query), k, mode, exclude=query.id)


def retrieval_accuracy(index: RetrievalIndex, queries: Sequence[Example], pool: Mapping[str, Example],
                       model: ContextAwareRetriever, params: ModelParams,
                       mode: RetrievalMode = RetrievalMode.CONTEXT_AWARE) -> float:
    """Fraction of supervised queries whose top-1 neighbour has the same gold pattern"""
    scored = [q for q in queries if q.is_supervised]
    if not scored:
        raise ValidationError("retrieval accuracy needs supervised queries")
    hits = 0
    for query in scored:
        code = index.code(query.id) if query.id in index else model.latent_code(params, query)
        top = index.nearest(code, 1, mode, exclude=query.id)
        if top and pool[top[0].example_id].pattern == query.pattern:
            hits += 1
    return hits / len(scored)


def ambiguous_queries(examples: Sequence[Example]) -> List[Example]:
    """Supervised examples whose utterance occurs with more than one gold pattern"""
    patterns: Dict[Tuple[str, ...], set] = {}
    for e in examples:
        if e.is_supervised:
            patterns.setdefault(tuple(e.utterance), set()).add(e.pattern)
    return [e for e in examples if e.is_supervised and len(patterns[tuple(e.utterance)]) > 1]
