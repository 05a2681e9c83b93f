"""Genotype containers, parsers and the marker-level transforms.

Genotypes are held as a float matrix coded 0/1/2 with ``nan`` marking a
missing call. Kinship and principal components work on the allele
frequency centered matrix (missing calls mean-imputed); the rule engine
always receives the raw codes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

MISSING = np.nan
_MISSING_TOKENS = {"", "NA", "na", "NaN", "nan", "."}


class GenotypeParseError(ValueError):
    """A genotype cell that is not 0, 1, 2 or a missing token."""

    def __init__(self, row, col, value):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"invalid genotype code {value!r} at ({row},{col})")


class DegenerateKinshipError(ValueError):
    pass


def _chrom_key(chrom):
    try:
        return (0, int(chrom), "")
    except (TypeError, ValueError):
        return (1, 0, str(chrom))


@dataclass
class MarkerMatrix:
    """Genotype calls for ``n`` samples at ``m`` mapped markers.

    Parameters
    ----------
    values : ndarray of shape (n, m)
        Codes in {0, 1, 2}; ``nan`` for a missing call.
    marker_ids : list of str
    sample_ids : list of str
    chromosomes : list of str
        Chromosome of each marker.
    positions : ndarray of int
        Base-pair position of each marker.
    """

    values: np.ndarray
    marker_ids: list
    sample_ids: list
    chromosomes: list = None
    positions: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("genotype matrix must be 2-dimensional")
        n, m = self.values.shape
        self.marker_ids = [str(x) for x in self.marker_ids]
        self.sample_ids = [str(x) for x in self.sample_ids]
        if self.chromosomes is None:
            self.chromosomes = ["1"] * m
        self.chromosomes = [str(c) for c in self.chromosomes]
        if self.positions is None:
            self.positions = np.arange(1, m + 1)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if len(self.marker_ids) != m or len(self.chromosomes) != m or len(self.positions) != m:
            raise ValueError("marker annotations do not match the number of columns")
        if len(self.sample_ids) != n:
            raise ValueError("sample_ids do not match the number of rows")
        _check_unique(self.marker_ids, "marker")
        _check_unique(self.sample_ids, "sample")
        observed = self.values[~np.isnan(self.values)]
        if not np.isin(observed, (0.0, 1.0, 2.0)).all():
            raise ValueError("genotype codes must be 0, 1, 2 or missing")
        keys = [(_chrom_key(c), p) for c, p in zip(self.chromosomes, self.positions)]
        if any(a > b for a, b in zip(keys, keys[1:])):
            raise ValueError("markers must be sorted by (chromosome, position)")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_markers(self):
        return self.values.shape[1]

    def subset_samples(self, rows):
        rows = np.asarray(rows)
        return MarkerMatrix(
            self.values[rows],
            self.marker_ids,
            [self.sample_ids[i] for i in rows],
            self.chromosomes,
            self.positions,
        )

    @classmethod
    def from_array(cls, values, marker_ids=None, sample_ids=None, chromosomes=None, positions=None):
        values = np.asarray(values, dtype=float)
        n, m = values.shape
        if marker_ids is None:
            marker_ids = [f"m{j + 1}" for j in range(m)]
        if sample_ids is None:
            sample_ids = [f"s{i + 1}" for i in range(n)]
        return cls(values, marker_ids, sample_ids, chromosomes, positions)


def _check_unique(ids, what):
    seen = set()
    for x in ids:
        if x in seen:
            raise ValueError(f"duplicate {what} id {x!r}")
        seen.add(x)


@dataclass
class PhenotypeTable:
    """Trait values plus the fixed-effect design (intercept first)."""

    y: np.ndarray
    covariates: np.ndarray
    sample_ids: list = None
    covariate_names: list = field(default_factory=lambda: ["intercept"])

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if self.covariates.shape[0] != self.y.shape[0]:
            raise ValueError("covariates and y have different numbers of rows")
        if np.isnan(self.y).any():
            raise ValueError("missing trait values are not allowed in training rows")
        if np.linalg.matrix_rank(self.covariates) < self.covariates.shape[1]:
            raise ValueError("covariate matrix is not of full column rank")

    @classmethod
    def from_arrays(cls, y, covariates=None, sample_ids=None, names=None):
        y = np.asarray(y, dtype=float)
        X = np.ones((y.shape[0], 1))
        cov_names = ["intercept"]
        if covariates is not None:
            covariates = np.asarray(covariates, dtype=float).reshape(y.shape[0], -1)
            X = np.column_stack([X, covariates])
            cov_names += list(names) if names is not None else [f"cov{i + 1}" for i in range(covariates.shape[1])]
        return cls(y, X, sample_ids, cov_names)


@dataclass
class RegionPartition:
    """Disjoint contiguous marker ranges; ``regions[i] = (start, stop)`` half-open."""

    regions: list
    provenance: str = "equal-count"

    def __len__(self):
        return len(self.regions)

    def region_of(self, m):
        lookup = np.empty(m, dtype=int)
        for i, (a, b) in enumerate(self.regions):
            lookup[a:b] = i
        return lookup

    def validate(self, markers: MarkerMatrix):
        expected = 0
        for a, b in self.regions:
            if a != expected or b <= a:
                raise ValueError("regions must be contiguous, ordered and non-empty")
            if len(set(markers.chromosomes[a:b])) != 1:
                raise ValueError(f"region [{a},{b}) spans more than one chromosome")
            expected = b
        if expected != markers.n_markers:
            raise ValueError("regions do not cover all markers")


@dataclass
class PrincipalComponents:
    scores: np.ndarray
    loadings: np.ndarray
    explained_variance: np.ndarray
    # per-marker allele frequencies used for centering; needed to project new rows
    frequencies: np.ndarray = None

    @property
    def n_components(self):
        return self.scores.shape[1]

    def project(self, values):
        """Scores for new genotype rows (missing calls mean-imputed)."""
        centered = _center_with(np.asarray(values, dtype=float), self.frequencies)
        return centered @ self.loadings


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows


def load_markers(path, map_path=None):
    """Read a marker CSV (header of marker ids, first column sample id).

    Cells hold 0, 1, 2 or ``NA``/empty for a missing call. When
    ``map_path`` is given the columns are reordered by (chromosome,
    position); otherwise every marker is placed on chromosome ``1`` in
    file order.
    """
    rows = _read_csv_rows(path)
    header = [h.strip() for h in rows[0][1:]]
    m = len(header)
    sample_ids = []
    values = np.empty((len(rows) - 1, m))
    codes = {"0": 0.0, "1": 1.0, "2": 2.0}
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != m + 1:
            raise ValueError(f"{path}: row {i} has {len(row) - 1} genotype cells, expected {m}")
        sample_ids.append(row[0].strip())
        for j, cell in enumerate(row[1:], start=1):
            cell = cell.strip()
            if cell in codes:
                values[i - 1, j - 1] = codes[cell]
            elif cell in _MISSING_TOKENS:
                values[i - 1, j - 1] = MISSING
            else:
                try:
                    as_float = float(cell)
                except ValueError:
                    raise GenotypeParseError(i, j, cell) from None
                if as_float not in (0.0, 1.0, 2.0):
                    raise GenotypeParseError(i, j, cell)
                values[i - 1, j - 1] = as_float
    chromosomes = positions = None
    if map_path is not None:
        chromosomes, positions, order = _read_map(map_path, header)
        values = values[:, order]
        header = [header[k] for k in order]
    return MarkerMatrix(values, header, sample_ids, chromosomes, positions)


def _read_map(path, marker_ids):
    rows = _read_csv_rows(path)
    if rows[0][0].strip().lower() in ("marker_id", "marker", "id", "snp"):
        rows = rows[1:]
    info = {}
    for k, row in enumerate(rows, start=1):
        if len(row) < 3:
            raise ValueError(f"{path}: line {k} needs marker_id, chromosome, position")
        info[row[0].strip()] = (row[1].strip(), int(row[2]))
    missing = [mid for mid in marker_ids if mid not in info]
    if missing:
        raise ValueError(f"{path}: no map entry for markers {missing[:5]}")
    order = sorted(range(len(marker_ids)), key=lambda j: (_chrom_key(info[marker_ids[j]][0]), info[marker_ids[j]][1]))
    chromosomes = [info[marker_ids[j]][0] for j in order]
    positions = [info[marker_ids[j]][1] for j in order]
    return chromosomes, positions, order


def load_hotspots(path):
    rows = _read_csv_rows(path)
    if rows[0][0].strip().lower() in ("chromosome", "chr", "chrom"):
        rows = rows[1:]
    return [(r[0].strip(), int(r[1])) for r in rows]


def load_phenotypes(path, covariates=None, sample_order=None):
    """Read ``sample_id, trait[, covariates...]``.

    ``covariates`` names the covariate columns to include (all extra
    columns when ``None``). With ``sample_order`` the rows are aligned
    to those ids; samples without a phenotype raise.
    """
    rows = _read_csv_rows(path)
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    extra = header[2:]
    use = extra if covariates is None else list(covariates)
    unknown = [c for c in use if c not in extra]
    if unknown:
        raise ValueError(f"{path}: unknown covariate columns {unknown}")
    idx = [header.index(c) for c in use]
    ids = [r[0].strip() for r in body]
    y = np.array([float(r[1]) if r[1].strip() not in _MISSING_TOKENS else np.nan for r in body])
    cov = np.array([[float(r[k]) for k in idx] for r in body]).reshape(len(body), len(idx))
    if sample_order is not None:
        pos = {s: i for i, s in enumerate(ids)}
        lost = [s for s in sample_order if s not in pos]
        if lost:
            raise ValueError(f"{path}: no phenotype for samples {lost[:5]}")
        sel = [pos[s] for s in sample_order]
        ids = [ids[i] for i in sel]
        y, cov = y[sel], cov[sel]
    return PhenotypeTable.from_arrays(y, cov if idx else None, ids, use)


def allele_frequencies(values):
    values = np.asarray(values, dtype=float)
    observed = ~np.isnan(values)
    counts = observed.sum(axis=0)
    if (counts == 0).any():
        bad = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"marker {bad} has no observed genotypes")
    return np.where(observed, values, 0.0).sum(axis=0) / (2.0 * counts)


def _center_with(values, freqs):
    centered = values - 2.0 * freqs
    centered[np.isnan(centered)] = 0.0
    return centered


def center_markers(M):
    """Return ``(C, p)``: codes minus ``2p`` per marker, missing cells set to 0."""
    values = M.values if isinstance(M, MarkerMatrix) else np.asarray(M, dtype=float)
    freqs = allele_frequencies(values)
    return _center_with(values, freqs), freqs


def kinship_scale(freqs):
    """Twice the summed heterozygosity, ``2 * sum(2 p (1 - p))``."""
    return 2.0 * float(np.sum(2.0 * freqs * (1.0 - freqs)))


def compute_grm(M):
    """Genomic relationship matrix ``C C' / k``."""
    C, freqs = center_markers(M)
    k = kinship_scale(freqs)
    # all-heterozygous columns have k > 0 but carry no variation either
    if k <= 0 or not np.any(C):
        raise DegenerateKinshipError("all markers are monomorphic; kinship is undefined")
    G = C @ C.T / k
    return (G + G.T) / 2.0


def compute_pcs(M, c=3):
    """Top-``c`` principal components of the centered marker matrix.

    Each component is oriented so that its largest-magnitude loading is
    positive.
    """
    values = M.values if isinstance(M, MarkerMatrix) else np.asarray(M, dtype=float)
    n, m = values.shape
    if c < 0 or c > min(n, m):
        raise ValueError(f"cannot extract {c} components from a {n}x{m} matrix")
    C, freqs = center_markers(values)
    if c == 0:
        return PrincipalComponents(np.zeros((n, 0)), np.zeros((m, 0)), np.zeros(0), freqs)
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    loadings = Vt[:c].T.copy()
    scores = U[:, :c] * s[:c]
    for k in range(c):
        j = np.argmax(np.abs(loadings[:, k]))
        if loadings[j, k] < 0:
            loadings[:, k] *= -1
            scores[:, k] *= -1
    explained = s[:c] ** 2 / max(n - 1, 1)
    return PrincipalComponents(scores, loadings, explained, freqs)


def partition_equal(M, nsplits):
    """Split every chromosome into ``nsplits`` contiguous blocks.

    Block sizes differ by at most one; the earliest blocks take the
    remainder markers.
    """
    if nsplits < 1:
        raise ValueError("nsplits must be >= 1")
    regions = []
    for chrom, a, b in _chromosome_runs(M.chromosomes):
        size = b - a
        if nsplits > size:
            raise ValueError(f"chromosome {chrom} has {size} markers, fewer than nsplits={nsplits}")
        base, extra = divmod(size, nsplits)
        start = a
        for i in range(nsplits):
            stop = start + base + (1 if i < extra else 0)
            regions.append((start, stop))
            start = stop
    return RegionPartition(regions, "equal-count")


def partition_hotspots(M, boundaries):
    """Cut chromosomes at hotspot positions.

    A boundary at position ``b`` starts a new region at the first
    marker with position >= ``b``. Empty regions are dropped.
    """
    runs = list(_chromosome_runs(M.chromosomes))
    known = {c for c, _, _ in runs}
    by_chrom = {}
    for chrom, pos in boundaries:
        chrom = str(chrom)
        if chrom not in known:
            raise ValueError(f"boundary on unknown chromosome {chrom!r}")
        by_chrom.setdefault(chrom, []).append(int(pos))
    regions = []
    for chrom, a, b in runs:
        cuts = by_chrom.get(chrom, [])
        if cuts != sorted(cuts):
            raise ValueError(f"boundaries on chromosome {chrom} are not sorted")
        pos = M.positions[a:b]
        starts = [a]
        for cut in cuts:
            k = a + int(np.searchsorted(pos, cut, side="left"))
            if k >= b or k <= a:
                if k >= b:
                    warnings.warn(f"boundary {chrom}:{cut} lies beyond the last marker; ignored")
                continue
            starts.append(k)
        starts = sorted(set(starts)) + [b]
        regions.extend((s, e) for s, e in zip(starts, starts[1:]) if e > s)
    return RegionPartition(regions, "hotspot")


def _chromosome_runs(chromosomes):
    start = 0
    for j in range(1, len(chromosomes) + 1):
        if j == len(chromosomes) or chromosomes[j] != chromosomes[start]:
            yield chromosomes[start], start, j
            start = j


def write_markers(M, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id"] + list(M.marker_ids))
        for sid, row in zip(M.sample_ids, M.values):
            w.writerow([sid] + ["NA" if np.isnan(v) else str(int(v)) for v in row])


def write_map(M, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["marker_id", "chromosome", "position"])
        for mid, c, p in zip(M.marker_ids, M.chromosomes, M.positions):
            w.writerow([mid, c, int(p)])


def write_phenotypes(path, sample_ids, y, covariates=None, names=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "trait"] + list(names))
        for i, sid in enumerate(sample_ids):
            extra = [] if covariates is None else [repr(float(v)) for v in np.atleast_1d(covariates[i])]
            w.writerow([sid, repr(float(y[i]))] + extra)

