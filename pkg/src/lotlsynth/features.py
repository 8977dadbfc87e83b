"""Encoders from token lists to model-ready feature matrices.

Tabular kinds (``onehot``, ``tfidf``) produce sparse CSR matrices over the
vocabulary, ``minhash`` a dense ``uint64`` sketch matrix and ``token_ids`` a
dense, tail-padded id matrix.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .textproc import OOV_ID, PAD_ID, Vocabulary

KINDS = ("onehot", "tfidf", "minhash", "token_ids")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
MASK64 = (1 << 64) - 1
_MAGIC = b"LSFM"
_FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# hashing for min-hash sketches
# --------------------------------------------------------------------------

def token_hash64(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def _seed_keys(k: int, seed: int) -> np.ndarray:
    """One 64-bit key per hash function, derived from ``seed``."""
    ss = np.random.SeedSequence([seed, 0x6D68])
    return ss.generate_state(k, dtype=np.uint64)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@dataclass
class EncoderSpec:
    kind: str
    vocabulary: Vocabulary
    minhash_k: int = 64
    max_len: int = 256
    seed: int = 0
    idf: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {KINDS}")
        if self.minhash_k < 1:
            raise ValueError("minhash_k must be at least 1")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")
        self._keys = _seed_keys(self.minhash_k, self.seed)
        self._hash_cache: dict[str, int] = {}

    @property
    def dims(self) -> int:
        if self.kind in ("onehot", "tfidf"):
            return len(self.vocabulary)
        if self.kind == "minhash":
            return self.minhash_k
        return self.max_len

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "minhash_k": self.minhash_k,
            "max_len": self.max_len,
            "seed": self.seed,
            "idf": None if self.idf is None else [float(v) for v in self.idf],
            "vocab_hash": self.vocabulary.hash(),
        }

    @classmethod
    def from_dict(cls, d: dict, vocabulary: Vocabulary) -> "EncoderSpec":
        if d.get("vocab_hash") not in (None, vocabulary.hash()):
            raise ValueError("encoder was fitted with a different vocabulary")
        idf = None if d.get("idf") is None else np.asarray(d["idf"], dtype=np.float64)
        return cls(kind=d["kind"], vocabulary=vocabulary, minhash_k=d["minhash_k"],
                   max_len=d["max_len"], seed=d.get("seed", 0), idf=idf)

    def _base_hashes(self, tokens: Iterable[str]) -> np.ndarray:
        cache = self._hash_cache
        out = []
        for t in tokens:
            h = cache.get(t)
            if h is None:
                h = cache[t] = token_hash64(t)
            out.append(h)
        return np.asarray(out, dtype=np.uint64)


def fit_encoder(
    kind: str,
    corpus: Sequence[Sequence[str]],
    vocabulary: Vocabulary,
    minhash_k: int = 64,
    max_len: int = 256,
    seed: int = 0,
) -> EncoderSpec:
    """Fit encoder statistics; only TF-IDF needs any (smoothed idf)."""
    spec = EncoderSpec(kind=kind, vocabulary=vocabulary, minhash_k=minhash_k, max_len=max_len, seed=seed)
    if kind == "tfidf":
        if len(corpus) == 0:
            raise ValueError("cannot fit tfidf on an empty corpus")
        df = np.zeros(len(vocabulary), dtype=np.float64)
        for toks in corpus:
            df[np.unique(np.asarray(vocabulary.ids(toks), dtype=np.int64))] += 1
        n = len(corpus)
        spec.idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    return spec


@dataclass
class FeatureMatrix:
    kind: str
    data: sp.csr_matrix | np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.data.shape[0] != len(self.labels):
            raise ValueError(f"{self.data.shape[0]} rows but {len(self.labels)} labels")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.data)

    def model_input(self) -> sp.csr_matrix | np.ndarray:
        """Float view for classifiers: sketches are scaled into [0, 1)."""
        if self.is_sparse:
            return self.data
        if self.kind == "minhash":
            return self.data.astype(np.float64) / float(2**64)
        return self.data.astype(np.float64)


def _sparse_rows(token_lists: Sequence[Sequence[str]], spec: EncoderSpec) -> sp.csr_matrix:
    vocab = spec.vocabulary
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for toks in token_lists:
        ids = vocab.ids(toks)
        if spec.kind == "onehot":
            u = sorted(set(ids))
            indices.extend(u)
            values.extend([1.0] * len(u))
        else:
            u, c = np.unique(np.asarray(ids, dtype=np.int64), return_counts=True)
            indices.extend(u.tolist())
            values.extend((c * spec.idf[u]).tolist())
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int64)),
        shape=(len(token_lists), spec.dims),
    )


def _minhash_rows(token_lists: Sequence[Sequence[str]], spec: EncoderSpec) -> np.ndarray:
    out = np.full((len(token_lists), spec.minhash_k), np.uint64(MASK64), dtype=np.uint64)
    keys = spec._keys[None, :]
    for i, toks in enumerate(token_lists):
        uniq = sorted(set(toks))
        if not uniq:
            continue
        base = spec._base_hashes(uniq)[:, None]
        out[i] = _mix64(base ^ keys).min(axis=0)
    return out


def _token_id_rows(token_lists: Sequence[Sequence[str]], spec: EncoderSpec) -> np.ndarray:
    out = np.full((len(token_lists), spec.max_len), PAD_ID, dtype=np.int32)
    for i, toks in enumerate(token_lists):
        ids = spec.vocabulary.ids(toks[: spec.max_len])
        out[i, : len(ids)] = ids
    return out


def encode_batch(token_lists: Sequence[Sequence[str]], spec: EncoderSpec, labels: Sequence[int] | None = None) -> FeatureMatrix:
    if spec.kind == "tfidf" and spec.idf is None:
        raise ValueError("tfidf encoder has not been fitted")
    if spec.kind in ("onehot", "tfidf"):
        data = _sparse_rows(token_lists, spec)
    elif spec.kind == "minhash":
        data = _minhash_rows(token_lists, spec)
    else:
        data = _token_id_rows(token_lists, spec)
    if labels is None:
        labels = np.zeros(len(token_lists), dtype=np.int8)
    return FeatureMatrix(kind=spec.kind, data=data, labels=np.asarray(labels))


def encode(tokens: Sequence[str], spec: EncoderSpec) -> np.ndarray:
    """Encode a single command as a dense row."""
    row = encode_batch([tokens], spec).data
    return row.toarray()[0] if sp.issparse(row) else row[0]


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def save_feature_matrix(fm: FeatureMatrix, path: str | Path) -> None:
    """Binary container: header, labels, then sparse triplets or dense rows (little endian)."""
    dense = not fm.is_sparse
    header = struct.pack("<4sHBBQQ", _MAGIC, _FORMAT_VERSION, _KIND_CODE[fm.kind], int(dense), fm.rows, fm.dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(fm.labels.astype("<i1").tobytes())
        if dense:
            dtype = "<u8" if fm.kind == "minhash" else "<i4"
            fh.write(np.ascontiguousarray(fm.data, dtype=dtype).tobytes())
        else:
            coo = fm.data.tocoo()
            order = np.lexsort((coo.col, coo.row))
            fh.write(struct.pack("<Q", coo.nnz))
            fh.write(coo.row[order].astype("<i8").tobytes())
            fh.write(coo.col[order].astype("<i8").tobytes())
            fh.write(coo.data[order].astype("<f8").tobytes())


def load_feature_matrix(path: str | Path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    magic, version, kind_code, dense, rows, dims = struct.unpack_from("<4sHBBQQ", blob, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a feature matrix file")
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported feature matrix version {version}")
    kind = KINDS[kind_code]
    off = struct.calcsize("<4sHBBQQ")
    labels = np.frombuffer(blob, dtype="<i1", count=rows, offset=off).astype(np.int8)
    off += rows
    if dense:
        dtype = "<u8" if kind == "minhash" else "<i4"
        data = np.frombuffer(blob, dtype=dtype, count=rows * dims, offset=off).reshape(rows, dims).copy()
        data = data.astype(np.uint64 if kind == "minhash" else np.int32)
    else:
        (nnz,) = struct.unpack_from("<Q", blob, off)
        off += 8
        r = np.frombuffer(blob, dtype="<i8", count=nnz, offset=off); off += 8 * nnz
        c = np.frombuffer(blob, dtype="<i8", count=nnz, offset=off); off += 8 * nnz
        v = np.frombuffer(blob, dtype="<f8", count=nnz, offset=off)
        data = sp.csr_matrix((v.astype(np.float64), (r, c)), shape=(rows, dims))
    return FeatureMatrix(kind=kind, data=data, labels=labels)


def feature_matrix_to_json(fm: FeatureMatrix) -> str:
    doc: dict = {"version": _FORMAT_VERSION, "kind": fm.kind, "rows": fm.rows, "dims": fm.dims,
                 "labels": fm.labels.tolist()}
    if fm.is_sparse:
        coo = fm.data.tocoo()
        order = np.lexsort((coo.col, coo.row))
        doc["triplets"] = [[int(r), int(c), float(v)] for r, c, v in
                           zip(coo.row[order], coo.col[order], coo.data[order])]
    else:
        doc["dense"] = [[int(v) for v in row] for row in fm.data]
    return json.dumps(doc, sort_keys=True)


def feature_matrix_from_json(text: str) -> FeatureMatrix:
    doc = json.loads(text)
    if doc.get("version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported feature matrix version {doc.get('version')!r}")
    rows, dims, kind = doc["rows"], doc["dims"], doc["kind"]
    if "triplets" in doc:
        t = np.asarray(doc["triplets"], dtype=np.float64).reshape(-1, 3)
        data = sp.csr_matrix((t[:, 2], (t[:, 0].astype(np.int64), t[:, 1].astype(np.int64))), shape=(rows, dims))
    else:
        dtype = np.uint64 if kind == "minhash" else np.int32
        data = np.asarray(doc["dense"], dtype=dtype).reshape(rows, dims)
    return FeatureMatrix(kind=kind, data=data, labels=np.asarray(doc["labels"]))
