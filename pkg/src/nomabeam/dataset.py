"""Dataset generation, CO labelling, JSONL persistence and k-means feature quantization."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ber import ModulationSpec, ber_pair
from .beamformer import BeamParams
from .channel import (BasisProjections, LinkBudget, Scenario, extract_features, sample_scenario,
                      scenario_projections)
from .optimizer import CoConfig, co_solve_many

SCHEMA_VERSION = 1
JSONL_FIELDS = ("nt", "seed", "h1_re", "h1_im", "h2_re", "h2_im", "d1_m", "d2_m",
                "features", "label", "psi_co", "version")

log = logging.getLogger(__name__)


def record_seed(seed: int, nt: int, index: int) -> int:
    """64-bit seed of record ``index`` of antenna scheme ``nt``."""
    ss = np.random.SeedSequence([int(seed), int(nt), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    nt: int
    seed: int
    h1: np.ndarray
    h2: np.ndarray
    d1_m: float
    d2_m: float
    features: np.ndarray
    label: BeamParams | None = None
    psi_co: float | None = None
    version: int = SCHEMA_VERSION
    error: str | None = field(default=None, compare=False)   # set when labelling failed

    @property
    def labeled(self) -> bool:
        return self.label is not None

    @property
    def key(self) -> tuple:
        return (self.nt, self.seed)

    def scenario(self) -> Scenario:
        return Scenario(nt=self.nt, h1=self.h1, h2=self.h2, d1_m=self.d1_m, d2_m=self.d2_m,
                        beta1=float("nan"), beta2=float("nan"), seed=self.seed)

    def projections(self) -> BasisProjections:
        return scenario_projections(self.scenario())[1]

    def to_json(self) -> dict:
        return {
            "nt": self.nt, "seed": self.seed,
            "h1_re": self.h1.real.tolist(), "h1_im": self.h1.imag.tolist(),
            "h2_re": self.h2.real.tolist(), "h2_im": self.h2.imag.tolist(),
            "d1_m": self.d1_m, "d2_m": self.d2_m,
            "features": np.asarray(self.features, dtype=float).tolist(),
            "label": None if self.label is None else self.label.to_array().tolist(),
            "psi_co": self.psi_co, "version": self.version,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetRecord":
        missing = [k for k in JSONL_FIELDS if k not in doc]
        if missing:
            raise ValueError(f"record is missing fields {missing}")
        if doc["version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported record version {doc['version']!r}")
        h1 = np.array(doc["h1_re"], dtype=float) + 1j * np.array(doc["h1_im"], dtype=float)
        h2 = np.array(doc["h2_re"], dtype=float) + 1j * np.array(doc["h2_im"], dtype=float)
        label = None if doc["label"] is None else BeamParams.from_array(doc["label"])
        return cls(nt=int(doc["nt"]), seed=int(doc["seed"]), h1=h1, h2=h2,
                   d1_m=float(doc["d1_m"]), d2_m=float(doc["d2_m"]),
                   features=np.array(doc["features"], dtype=float), label=label,
                   psi_co=None if doc["psi_co"] is None else float(doc["psi_co"]),
                   version=int(doc["version"]))


def make_record(scenario: Scenario, xi: float = 1e6) -> DatasetRecord:
    _, proj = scenario_projections(scenario)
    return DatasetRecord(nt=scenario.nt, seed=int(scenario.seed), h1=scenario.h1, h2=scenario.h2,
                         d1_m=scenario.d1_m, d2_m=scenario.d2_m,
                         features=extract_features(proj, xi).values)


def generate_dataset(nt_list, count_per_nt: int, budget: LinkBudget | None = None, seed: int = 0,
                     xi: float = 1e6):
    """Yield unlabeled records, ``count_per_nt`` per antenna count, in ``nt_list`` order.

    Record ``i`` of scheme ``nt`` depends only on ``(seed, nt, i)``, so a
    larger count extends a smaller one.
    """
    if count_per_nt < 1:
        raise ValueError("count_per_nt must be >= 1")
    nts = [int(n) for n in nt_list]
    if not nts:
        raise ValueError("nt_list is empty")
    for nt in nts:
        for i in range(count_per_nt):
            sc = sample_scenario(nt, budget=budget, seed=record_seed(seed, nt, i))
            yield make_record(sc, xi)


def label_dataset(records, mods: ModulationSpec, cfg: CoConfig = CoConfig(), n0_eff=None,
                  chunk_size: int = 250, on_chunk=None) -> list[DatasetRecord]:
    """Attach CO labels to every unlabeled record (labeled ones pass through).

    The starts of each record are seeded by ``(cfg.seed, record seed)``.
    Records whose solve fails keep ``label=None`` and carry ``error``.
    ``on_chunk(list_of_new_records)`` is called after each batch, which lets
    callers append results to disk and resume after an interruption.
    """
    n0_eff = LinkBudget().effective_noise_watt if n0_eff is None else n0_eff
    out = list(records)
    todo = [i for i, r in enumerate(out) if not r.labeled]
    for start in range(0, len(todo), chunk_size):
        idx = todo[start:start + chunk_size]
        projs = [out[i].projections() for i in idx]
        seeds = [(cfg.seed, out[i].seed) for i in idx]
        try:
            sols = co_solve_many(projs, mods, n0_eff, cfg, seeds=seeds)
        except Exception:   # fall back to per-record solves to isolate the failure
            sols = []
            for p, s in zip(projs, seeds):
                try:
                    sols.append(co_solve_many([p], mods, n0_eff, cfg, seeds=[s])[0])
                except Exception as exc:    # noqa: BLE001 - recorded on the record
                    sols.append(exc)
        new = []
        for i, sol in zip(idx, sols):
            if isinstance(sol, Exception):
                log.warning("labelling record %s failed: %s", out[i].key, sol)
                out[i] = replace(out[i], error=str(sol))
            else:
                out[i] = replace(out[i], label=sol.params, psi_co=sol.psi_value)
            new.append(out[i])
        if on_chunk is not None:
            on_chunk(new)
    return out


def relabel_psi(record: DatasetRecord, mods: ModulationSpec, n0_eff=None) -> float:
    n0_eff = LinkBudget().effective_noise_watt if n0_eff is None else n0_eff
    return ber_pair(record.label, record.projections(), mods, n0_eff).psi


def write_jsonl(records, path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_jsonl(path) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(DatasetRecord.from_json(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def label_file(src, dst, mods: ModulationSpec, cfg: CoConfig = CoConfig(), n0_eff=None,
               chunk_size: int = 250) -> list[DatasetRecord]:
    """Label ``src`` into ``dst``; records already labeled in ``dst`` are reused."""
    done = {}
    if os.path.exists(dst):
        done = {r.key: r for r in read_jsonl(dst) if r.labeled}
    records = [done.get(r.key, r) for r in read_jsonl(src)]
    with open(dst, "w", encoding="utf-8") as fh:
        for r in records:
            if r.labeled:
                fh.write(json.dumps(r.to_json()) + "\n")

    def flush(chunk):
        write_jsonl([r for r in chunk if r.labeled], dst, append=True)

    return label_dataset(records, mods, cfg, n0_eff, chunk_size, on_chunk=flush)


def feature_matrix(records) -> np.ndarray:
    return np.array([np.asarray(r.features, dtype=float) for r in records])


def label_matrix(records) -> np.ndarray:
    missing = [r.key for r in records if not r.labeled]
    if missing:
        raise ValueError(f"{len(missing)} records are unlabeled")
    return np.array([r.label.to_array() for r in records])


@dataclass(frozen=True, eq=False)
class Codebook:
    k: int
    centroids: np.ndarray
    distortion: float
    history: tuple = ()     # distortion after every assignment step

    def __post_init__(self):
        if self.k < 1 or self.centroids.shape[0] != self.k:
            raise ValueError("centroid count must equal k >= 1")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")


def _sq_dists(x, c):
    # exact differences (no |x|^2 - 2xc + |c|^2 expansion) so equal points give 0
    out = np.empty((x.shape[0], c.shape[0]))
    for j0 in range(0, c.shape[0], 256):
        diff = x[:, None, :] - c[None, j0:j0 + 256, :]
        out[:, j0:j0 + 256] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[centers])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point already coincides with a centre: take unused indices in order
            unused = np.setdiff1d(np.arange(n), centers)
            centers.append(int(unused[0]))
        else:
            centers.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, _sq_dists(x, x[centers[-1:]])[:, 0])
    return x[centers].copy()


def kmeans_fit(features, k: int, seed: int = 0, max_iters: int = 100, tol: float = 0.0) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is re-seeded with the point farthest from its current
    centroid.  Stops when assignments no longer change, the distortion drop
    is at most ``tol``, or after ``max_iters`` iterations.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("features must be a non-empty 2-D array")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k must lie in [1, n={x.shape[0]}], got {k}")
    rng = np.random.default_rng(seed)
    cent = _kmeanspp(x, k, rng)
    history = []
    assign = None
    for _ in range(max_iters):
        d = _sq_dists(x, cent)
        new_assign = np.argmin(d, axis=1)
        dist = d[np.arange(len(x)), new_assign]
        history.append(float(dist.mean()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        if len(history) > 1 and history[-2] - history[-1] <= tol and tol > 0:
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(cent)
        np.add.at(sums, assign, x)
        filled = counts > 0
        cent[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(dist))
            cent[j] = x[far]
            dist[far] = 0.0
    d = _sq_dists(x, cent)
    final = float(d.min(axis=1).mean())
    if not history or final != history[-1]:
        history.append(final)
    return Codebook(k=k, centroids=cent, distortion=final, history=tuple(history))


def quantize_features(features, codebook: Codebook) -> np.ndarray:
    """Nearest centroid per row (Euclidean); ties go to the lowest index."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    idx = np.argmin(_sq_dists(x, codebook.centroids), axis=1)
    out = codebook.centroids[idx]
    return out[0] if single else out


class FeatureQuantizer(TransformerMixin, BaseEstimator):
    """Replace each feature row by its nearest k-means centroid."""

    def __init__(self, k=128, seed=0, max_iters=100):
        self.k = k
        self.seed = seed
        self.max_iters = max_iters

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.codebook_ = kmeans_fit(X, self.k, self.seed, self.max_iters)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return quantize_features(X, self.codebook_)
