"""Hierarchical navigable small-world index over unit vectors, from scratch.

Layered proximity graph: sparse upper layers route a greedy descent, the
dense ground layer carries an ef-bounded best-first search. Vectors live in
one contiguous float32 matrix so distance evaluations are numpy-batched.
Includes binary persistence with a CRC-checked on-disk format.
"""

from __future__ import annotations

import heapq
import math
import os
import struct
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

MAGIC = b"KTHN"
FORMAT_VERSION = 1

# Below this node count, inserts precompute all distances with one matvec
# (cheaper than per-expansion batches at desk scale); beyond it they fall
# back to batched evaluation so memory and per-insert cost stay bounded.
DENSE_BUILD_LIMIT = 200_000

# Level-draw conventions. "exp_tail" gives P(level >= l) = exp(-l * lambda);
# "mult_factor" is the common draw level = floor(-ln(u) * lambda).
LEVEL_RULES = ("exp_tail", "mult_factor")


class HnswError(Exception):
    """Invalid operation on the index (duplicate id, dimension mismatch, ...)."""


class IndexFormatError(Exception):
    """The on-disk index file is malformed; reports the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class HnswParams:
    M: int = 8
    M0: int = 16
    l_max: int = 64
    lam: float | None = None  # level-probability factor; defaults to 1/ln(M)
    ef_construction: int = 200
    ef_search: int = 64
    rng_seed: int = 0
    level_rule: str = "exp_tail"

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.M0 < self.M:
            raise ValueError("M0 must be >= M")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")
        if self.ef_construction < self.M:
            raise ValueError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")
        if self.level_rule not in LEVEL_RULES:
            raise ValueError(f"level_rule must be one of {LEVEL_RULES}")
        if self.lam is None:
            object.__setattr__(self, "lam", 1.0 / math.log(self.M))
        if self.lam <= 0:
            raise ValueError("lam must be > 0")


def level_from_uniform(u: float, params: HnswParams) -> int:
    """Map a uniform draw u in (0, 1] to a node level, clamped to l_max."""
    if not (0.0 < u <= 1.0):
        raise ValueError("u must be in (0, 1]")
    if params.level_rule == "exp_tail":
        raw = -math.log(u) / params.lam
    else:
        raw = -math.log(u) * params.lam
    return min(int(raw), params.l_max)


def sample_level(rng: np.random.Generator, params: HnswParams) -> int:
    # 1 - random() lies in (0, 1]: u == 1 maps to level 0, u == 0 cannot occur.
    return level_from_uniform(1.0 - rng.random(), params)


def _heuristic_scan(dists: list[float], pair: np.ndarray, cap: int) -> list[int]:
    """Shared core of the diversity rule, over candidate positions.

    `dists[i]` is candidate i's distance to the target; `pair` the candidate
    pairwise distance matrix. Admits i iff every admitted j has
    pair[i][j] > dists[i]; stops at `cap`; nearest rejected backfill.
    """
    admitted: list[int] = []
    rejected: list[int] = []
    min_to_admitted: np.ndarray | None = None
    for i, d in enumerate(dists):
        if len(admitted) >= cap:
            break
        if admitted and not (min_to_admitted[i] > d):
            rejected.append(i)
            continue
        admitted.append(i)
        if min_to_admitted is None:
            min_to_admitted = pair[i].copy()
        else:
            np.minimum(min_to_admitted, pair[i], out=min_to_admitted)
    if len(admitted) < cap:
        for i in rejected:
            admitted.append(i)
            if len(admitted) == cap:
                break
    return admitted


def select_neighbors_heuristic(
    candidates: list[tuple[int, float]],
    vectors,
    cap: int,
) -> list[int]:
    """Diversity-preserving neighbor selection.

    Scans candidates (already ascending by distance to the target) and admits
    one iff it is strictly farther from every admitted neighbor than from the
    target. Stops once `cap` are admitted; if the scan runs out first, the
    nearest rejected candidates backfill in distance order.

    `vectors` maps id -> unit vector (any indexable / callable mapping).
    """
    if not candidates or cap < 1:
        return []
    if len(candidates) == 1:
        return [candidates[0][0]]
    getv = vectors if callable(vectors) else vectors.__getitem__
    ids = [cid for cid, _ in candidates]
    dists = [float(d) for _, d in candidates]
    rows = np.stack([np.asarray(getv(i), dtype=np.float32).ravel() for i in ids])
    pair = 1.0 - rows @ rows.T
    return [ids[i] for i in _heuristic_scan(dists, pair, cap)]


class _RWLock:
    """Many readers or one writer."""

    def __init__(self) -> None:
        self._readers = 0
        self._gate = threading.Lock()
        self._wlock = threading.Lock()

    @contextmanager
    def read(self):
        with self._gate:
            self._readers += 1
            if self._readers == 1:
                self._wlock.acquire()
        try:
            yield
        finally:
            with self._gate:
                self._readers -= 1
                if self._readers == 0:
                    self._wlock.release()

    @contextmanager
    def write(self):
        with self._wlock:
            yield


class HnswIndex:
    """Mutable HNSW graph over unit vectors with cosine distance (1 - dot)."""

    def __init__(self, dim: int, params: HnswParams | None = None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.params = params or HnswParams()
        self._dim = dim
        self._rng = np.random.Generator(np.random.PCG64(self.params.rng_seed))
        self._lock = _RWLock()
        cap = 1024
        self._matrix = np.zeros((cap, dim), dtype=np.float32)
        self._ext_ids: list[int] = []  # slot -> external id
        self._slots: dict[int, int] = {}  # external id -> slot
        self._levels: list[int] = []  # slot -> level
        self._links: list[list[list[int]]] = []  # slot -> layer -> neighbor slots
        self._entry: int | None = None  # slot of the entry point

    # ------------------------------------------------------------------ basics

    def __len__(self) -> int:
        return len(self._ext_ids)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def count(self) -> int:
        return len(self._ext_ids)

    @property
    def entry_point(self) -> int | None:
        return None if self._entry is None else self._ext_ids[self._entry]

    def ids(self) -> list[int]:
        return list(self._ext_ids)

    def node_level(self, ext_id: int) -> int:
        return self._levels[self._slots[ext_id]]

    def node_neighbors(self, ext_id: int, layer: int) -> list[int]:
        slot = self._slots[ext_id]
        if layer > self._levels[slot]:
            return []
        return [self._ext_ids[s] for s in self._links[slot][layer]]

    def vector(self, ext_id: int) -> np.ndarray:
        return self._matrix[self._slots[ext_id]].copy()

    # ------------------------------------------------------------------ internals

    def _alloc(self, ext_id: int, vec: np.ndarray, level: int) -> int:
        slot = len(self._ext_ids)
        if slot >= self._matrix.shape[0]:
            grown = np.zeros(
                (max(slot + 1, int(self._matrix.shape[0] * 1.5)), self._dim),
                dtype=np.float32,
            )
            grown[:slot] = self._matrix[:slot]
            self._matrix = grown
        self._matrix[slot] = vec
        self._ext_ids.append(ext_id)
        self._slots[ext_id] = slot
        self._levels.append(level)
        self._links.append([[] for _ in range(level + 1)])
        return slot

    def _search_layer(
        self,
        q: np.ndarray,
        entry_slots: list[int],
        layer: int,
        ef: int,
        dall: list[float] | None = None,
    ) -> list[tuple[float, int]]:
        """Best-first search bounded by `ef`; returns (distance, slot) ascending.

        Stops when the nearest unexpanded candidate is farther than the worst
        member of a full result set. When `dall` (distances to every existing
        slot, precomputed at insert time) is given, the loop runs without any
        per-expansion numpy work; the expansion order is identical either way.
        """
        visited = set(entry_slots)
        if dall is not None:
            pairs = [(dall[s], s) for s in entry_slots]
        else:
            pairs = list(zip((1.0 - self._matrix[entry_slots] @ q).tolist(), entry_slots))
        cand = list(pairs)
        heapq.heapify(cand)
        best = [(-d, s) for d, s in pairs]
        heapq.heapify(best)
        links = self._links
        matrix = self._matrix
        while cand:
            d, slot = heapq.heappop(cand)
            if d > -best[0][0] and len(best) >= ef:
                break
            worst = -best[0][0]
            nbest = len(best)
            if dall is not None:
                for n in links[slot][layer]:
                    if n in visited:
                        continue
                    visited.add(n)
                    dn = dall[n]
                    if nbest < ef:
                        heapq.heappush(best, (-dn, n))
                        heapq.heappush(cand, (dn, n))
                        nbest += 1
                        worst = -best[0][0]
                    elif dn < worst:
                        heapq.heapreplace(best, (-dn, n))
                        heapq.heappush(cand, (dn, n))
                        worst = -best[0][0]
            else:
                fresh = [n for n in links[slot][layer] if n not in visited]
                if not fresh:
                    continue
                visited.update(fresh)
                for n, dn in zip(fresh, (1.0 - matrix[fresh] @ q).tolist()):
                    if nbest < ef:
                        heapq.heappush(best, (-dn, n))
                        heapq.heappush(cand, (dn, n))
                        nbest += 1
                        worst = -best[0][0]
                    elif dn < worst:
                        heapq.heapreplace(best, (-dn, n))
                        heapq.heappush(cand, (dn, n))
                        worst = -best[0][0]
        out = [(-d, s) for d, s in best]
        out.sort(key=lambda t: (t[0], self._ext_ids[t[1]]))
        return out

    def _select(self, cands: list[tuple[float, int]], cap: int) -> list[int]:
        """Diversity selection over (distance, slot) pairs sorted ascending."""
        if not cands:
            return []
        if len(cands) == 1:
            return [cands[0][1]]
        slots = [s for _, s in cands]
        dists = [d for d, _ in cands]
        rows = self._matrix[slots]
        pair = 1.0 - rows @ rows.T
        return [slots[i] for i in _heuristic_scan(dists, pair, cap)]

    def _reprune(self, slot: int, layer: int, cap: int) -> None:
        nbrs = self._links[slot][layer]
        if len(nbrs) <= cap:
            return
        dists = (1.0 - self._matrix[nbrs] @ self._matrix[slot]).tolist()
        cands = sorted(zip(dists, nbrs), key=lambda t: (t[0], self._ext_ids[t[1]]))
        keep = self._select(cands, cap)
        dropped = set(nbrs) - set(keep)
        self._links[slot][layer] = keep
        # symmetric removal keeps the adjacency bidirectional
        for other in dropped:
            try:
                self._links[other][layer].remove(slot)
            except ValueError:
                pass

    # ------------------------------------------------------------------ mutation

    def insert(self, ext_id: int, vec) -> None:
        """Insert a unit vector under a new id, wiring bidirectional links."""
        with self._lock.write():
            if ext_id in self._slots:
                raise HnswError(f"id {ext_id} already present")
            v = np.asarray(vec, dtype=np.float32).ravel()
            if v.size != self._dim:
                raise HnswError(f"vector dim {v.size} != index dim {self._dim}")
            level = sample_level(self._rng, self.params)
            slot = self._alloc(ext_id, v, level)
            if self._entry is None:
                self._entry = slot
                return
            ep = self._entry
            top = self._levels[ep]
            # one BLAS pass against every existing node keeps the layer
            # searches free of per-expansion numpy overhead; queries never
            # do this, only the build does, and only below the size cutoff
            ncur = slot  # existing slots are 0..slot-1
            dall: list[float] | None = None
            if ncur <= DENSE_BUILD_LIMIT:
                dall = (1.0 - self._matrix[:ncur] @ v).tolist()
            # greedy descent on the layers above the new node's level
            for layer in range(top, level, -1):
                ep = self._search_layer(v, [ep], layer, 1, dall)[0][1]
            eps = [ep]
            for layer in range(min(level, top), -1, -1):
                cands = self._search_layer(
                    v, eps, layer, self.params.ef_construction, dall
                )
                cap = self.params.M0 if layer == 0 else self.params.M
                chosen = self._select(cands, cap)
                self._links[slot][layer] = list(chosen)
                for n in chosen:
                    self._links[n][layer].append(slot)
                    if len(self._links[n][layer]) > cap:
                        self._reprune(n, layer, cap)
                eps = [s for _, s in cands]
            if level > top:
                self._entry = slot

    # ------------------------------------------------------------------ search

    def search(self, query, topk: int, ef: int | None = None) -> list[tuple[int, float]]:
        """The `topk` nearest stored vectors as (id, distance), ascending.

        Ties break toward the smaller id. Empty index gives an empty list.
        """
        if topk < 1:
            raise ValueError("topk must be >= 1")
        with self._lock.read():
            if self._entry is None:
                return []
            q = np.asarray(query, dtype=np.float32).ravel()
            if q.size != self._dim:
                raise HnswError(f"query dim {q.size} != index dim {self._dim}")
            ef_eff = max(ef if ef is not None else self.params.ef_search, topk)
            ep = self._entry
            for layer in range(self._levels[ep], 0, -1):
                ep = self._search_layer(q, [ep], layer, 1)[0][1]
            found = self._search_layer(q, [ep], 0, ef_eff)
            return [
                (self._ext_ids[s], min(max(float(d), 0.0), 2.0))
                for d, s in found[:topk]
            ]

    # ------------------------------------------------------------------ persistence

    def save(self, path: str | os.PathLike) -> None:
        """Write the index; little-endian, CRC32-tailed. Atomic via tmp+rename."""
        with self._lock.read():
            buf = bytearray()
            buf += MAGIC
            buf += struct.pack("<II", FORMAT_VERSION, self._dim)
            p = self.params
            buf += struct.pack(
                "<IIIIdQ", p.M, p.M0, p.l_max, p.ef_construction, p.lam, p.rng_seed
            )
            entry_ext = -1 if self._entry is None else self._ext_ids[self._entry]
            buf += struct.pack("<Qq", len(self._ext_ids), entry_ext)
            order = sorted(self._slots)  # by external id, for a canonical file
            for ext_id in order:
                slot = self._slots[ext_id]
                level = self._levels[slot]
                buf += struct.pack("<QI", ext_id, level)
                for layer in range(level + 1):
                    nbrs = self._links[slot][layer]
                    buf += struct.pack("<I", len(nbrs))
                    for n in nbrs:
                        buf += struct.pack("<Q", self._ext_ids[n])
            for ext_id in order:
                buf += self._matrix[self._slots[ext_id]].astype("<f4").tobytes()
            buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
        tmp = os.fspath(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(buf)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "HnswIndex":
        """Read an index file; any malformation raises with no partial index."""
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 8:
            raise IndexFormatError("file truncated", offset=len(data))
        if data[:4] != MAGIC:
            raise IndexFormatError(f"bad magic {data[:4]!r}", offset=0)
        (version,) = struct.unpack_from("<I", data, 4)
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"unsupported format version {version}", offset=4)
        if len(data) < 12:
            raise IndexFormatError("file truncated", offset=len(data))
        (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
        if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
            raise IndexFormatError("CRC mismatch, file corrupted", offset=len(data) - 4)
        off = 8

        def take(fmt: str):
            nonlocal off
            size = struct.calcsize(fmt)
            if off + size > len(data) - 4:
                raise IndexFormatError("file truncated", offset=off)
            vals = struct.unpack_from(fmt, data, off)
            off += size
            return vals

        (dim,) = take("<I")
        m, m0, l_max, ef_c, lam, rng_seed = take("<IIIIdQ")
        count, entry_ext = take("<Qq")
        try:
            params = HnswParams(
                M=m, M0=m0, l_max=l_max, lam=lam, ef_construction=ef_c, rng_seed=rng_seed
            )
            index = cls(dim=dim, params=params)
        except ValueError as exc:
            raise IndexFormatError(f"invalid parameters: {exc}", offset=12) from exc
        raw_links: list[list[list[int]]] = []
        ext_order: list[int] = []
        for _ in range(count):
            ext_id, level = take("<QI")
            if level > l_max:
                raise IndexFormatError(f"node level {level} exceeds l_max", offset=off)
            layers: list[list[int]] = []
            for _ in range(level + 1):
                (n_nbrs,) = take("<I")
                if n_nbrs > count:
                    raise IndexFormatError("neighbor count exceeds node count", offset=off)
                nbrs = list(take(f"<{n_nbrs}Q")) if n_nbrs else []
                layers.append(nbrs)
            ext_order.append(ext_id)
            index._alloc(ext_id, np.zeros(dim, dtype=np.float32), level)
            raw_links.append(layers)
        vec_bytes = count * dim * 4
        if off + vec_bytes > len(data) - 4:
            raise IndexFormatError("vector section truncated", offset=off)
        vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
        off += vec_bytes
        if off != len(data) - 4:
            raise IndexFormatError("trailing bytes after vector section", offset=off)
        if count:
            index._matrix[:count] = vectors.reshape(count, dim)
        for slot, layers in enumerate(raw_links):
            for layer, nbr_ext in enumerate(layers):
                try:
                    index._links[slot][layer] = [index._slots[e] for e in nbr_ext]
                except KeyError as exc:
                    raise IndexFormatError(
                        f"adjacency references unknown id {exc.args[0]}", offset=off
                    ) from exc
        if entry_ext >= 0:
            if entry_ext not in index._slots:
                raise IndexFormatError(f"entry point {entry_ext} not present", offset=off)
            index._entry = index._slots[entry_ext]
        elif count:
            raise IndexFormatError("missing entry point for non-empty index", offset=off)
        return index
