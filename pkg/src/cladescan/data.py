"""Domain types and file I/O: haplotype panels, study genotypes, recombination maps.

File formats follow the classic legend/haps/gen/sample conventions:

- legend: header line, then ``id position allele0 allele1`` per SNP.
- haps:   one row per SNP, N space-separated 0/1 tokens (column k = haplotype k).
- gen:    ``id position allele0 allele1 g_1 ... g_K`` with g in {0,1,2,NA}.
- sample: header line, then ``id phenotype`` with phenotype in {0,1}.
- map:    header line, then ``position rate(cM/Mb) cumulative(cM)``.

All parsing is locale-independent and accepts LF or CRLF line endings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

MISSING = -1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class LegendRecord:
    snp_id: str
    position_bp: int
    allele0: str
    allele1: str


@dataclass
class HaplotypePanel:
    """N phased reference haplotypes over L biallelic SNPs.

    alleles is an (N, L) 0/1 matrix; column j corresponds to legend[j].
    """

    alleles: np.ndarray
    legend: list[LegendRecord]

    def __post_init__(self):
        self.alleles = np.ascontiguousarray(self.alleles, dtype=np.int8)
        if self.alleles.ndim != 2:
            raise DataError("panel alleles must be a 2-D matrix")
        n, l = self.alleles.shape
        if n < 2 or l < 1:
            raise DataError(f"panel requires N >= 2 and L >= 1, got N={n}, L={l}")
        if len(self.legend) != l:
            raise DataError("legend length does not match allele columns")
        vals = np.unique(self.alleles)
        if not np.all(np.isin(vals, [0, 1])):
            raise DataError("panel alleles must all be 0 or 1")
        pos = self.positions_bp
        if np.any(np.diff(pos) <= 0):
            i = int(np.argmax(np.diff(pos) <= 0)) + 1
            raise DataError(f"nonmonotone position at legend row {i + 1}")

    @property
    def n_haplotypes(self) -> int:
        return self.alleles.shape[0]

    @property
    def n_sites(self) -> int:
        return self.alleles.shape[1]

    @property
    def positions_bp(self) -> np.ndarray:
        return np.array([r.position_bp for r in self.legend], dtype=np.int64)

    def frequencies(self) -> np.ndarray:
        """Allele-1 frequency per site."""
        return self.alleles.mean(axis=0)

    def subset_sites(self, site_idx) -> "HaplotypePanel":
        site_idx = np.asarray(site_idx, dtype=np.int64)
        return HaplotypePanel(
            alleles=self.alleles[:, site_idx],
            legend=[self.legend[int(j)] for j in site_idx],
        )


@dataclass
class GenotypeStudy:
    """K study individuals' genotypes at a subset of panel sites, plus phenotypes.

    genotypes is (K, T) with entries in {0, 1, 2, MISSING}; site_index maps each
    typed column to a panel site index; alleles are coded on the panel orientation.
    """

    genotypes: np.ndarray
    site_index: np.ndarray
    phenotypes: np.ndarray

    def __post_init__(self):
        self.genotypes = np.ascontiguousarray(self.genotypes, dtype=np.int8)
        self.site_index = np.ascontiguousarray(self.site_index, dtype=np.int64)
        self.phenotypes = np.ascontiguousarray(self.phenotypes, dtype=np.int8)
        if self.genotypes.ndim != 2:
            raise DataError("genotypes must be a 2-D matrix")
        if self.genotypes.shape[1] != self.site_index.shape[0]:
            raise DataError("site_index length does not match genotype columns")
        if self.genotypes.shape[0] != self.phenotypes.shape[0]:
            raise DataError("phenotype count does not match individuals")
        ok = np.isin(self.genotypes, [0, 1, 2, MISSING])
        if not np.all(ok):
            raise DataError("genotype entries must be in {0,1,2,missing}")
        if not np.all(np.isin(self.phenotypes, [0, 1])):
            raise DataError("phenotypes must be 0 (control) or 1 (case)")
        if not (np.any(self.phenotypes == 0) and np.any(self.phenotypes == 1)):
            raise DataError("study requires at least one case and one control")

    @property
    def n_individuals(self) -> int:
        return self.genotypes.shape[0]

    @property
    def n_typed(self) -> int:
        return self.genotypes.shape[1]

    @property
    def n_cases(self) -> int:
        return int(np.sum(self.phenotypes == 1))

    @property
    def n_controls(self) -> int:
        return int(np.sum(self.phenotypes == 0))


@dataclass
class RecombinationMap:
    """Piecewise-linear genetic map: position -> cumulative cM."""

    positions_bp: np.ndarray
    rates_cm_per_mb: np.ndarray
    cumulative_cm: np.ndarray

    def __post_init__(self):
        self.positions_bp = np.ascontiguousarray(self.positions_bp, dtype=np.int64)
        self.rates_cm_per_mb = np.ascontiguousarray(self.rates_cm_per_mb, dtype=np.float64)
        self.cumulative_cm = np.ascontiguousarray(self.cumulative_cm, dtype=np.float64)
        if self.positions_bp.size == 0:
            raise DataError("empty recombination map")
        if np.any(np.diff(self.positions_bp) <= 0):
            raise DataError("map positions must be strictly increasing")
        if np.any(np.diff(self.cumulative_cm) < 0):
            raise DataError("cumulative cM must be nondecreasing")

    @classmethod
    def uniform(cls, start_bp: int, end_bp: int, rate_cm_per_mb: float) -> "RecombinationMap":
        """Flat-rate map spanning [start_bp, end_bp]."""
        pos = np.array([start_bp, end_bp], dtype=np.int64)
        rate = np.array([rate_cm_per_mb, rate_cm_per_mb])
        cum = np.array([0.0, (end_bp - start_bp) / 1e6 * rate_cm_per_mb])
        return cls(pos, rate, cum)

    def cumulative_at(self, bp) -> np.ndarray:
        """Cumulative cM at arbitrary positions; nearest-rate extrapolation outside."""
        bp = np.asarray(bp, dtype=np.float64)
        pos = self.positions_bp.astype(np.float64)
        out = np.interp(bp, pos, self.cumulative_cm)
        left = bp < pos[0]
        right = bp > pos[-1]
        if np.any(left):
            out = np.where(
                left, self.cumulative_cm[0] - (pos[0] - bp) / 1e6 * self.rates_cm_per_mb[0], out
            )
        if np.any(right):
            out = np.where(
                right,
                self.cumulative_cm[-1] + (bp - pos[-1]) / 1e6 * self.rates_cm_per_mb[-1],
                out,
            )
        return out


def genetic_distance(gmap: RecombinationMap, from_bp: int, to_bp: int) -> float:
    """Genetic distance in cM between two physical positions (from_bp <= to_bp)."""
    if from_bp > to_bp:
        raise DataError("genetic_distance requires from_bp <= to_bp")
    d = float(gmap.cumulative_at(to_bp) - gmap.cumulative_at(from_bp))
    return max(d, 0.0)


@dataclass
class PositionGrid:
    positions_bp: np.ndarray

    def __post_init__(self):
        self.positions_bp = np.ascontiguousarray(self.positions_bp, dtype=np.int64)
        if np.any(np.diff(self.positions_bp) <= 0):
            raise DataError("grid positions must be strictly increasing")

    def __len__(self) -> int:
        return self.positions_bp.size

    def __iter__(self):
        return iter(int(p) for p in self.positions_bp)


def make_grid(region_start_bp: int, region_end_bp: int, spacing_bp: int) -> PositionGrid:
    """Uniform test-position grid: start, start+spacing, ... <= end."""
    if region_start_bp >= region_end_bp:
        raise DataError("region start must precede region end")
    if spacing_bp <= 0:
        raise DataError("grid spacing must be positive")
    pos = np.arange(region_start_bp, region_end_bp + 1, spacing_bp, dtype=np.int64)
    return PositionGrid(pos)


@dataclass
class PriorSpec:
    """Beta(a, c) penetrance prior plus 2-vs-1 prior odds and effect-size prior sd."""

    a: float = 20.0
    c: float = 30.0
    prior_odds_2v1: float = 1.0
    effect_prior_sd: float = 0.2

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0 and np.isfinite(self.c) and self.c > 0):
            raise DataError("Beta hyperparameters must be finite and positive")
        if self.prior_odds_2v1 <= 0:
            raise DataError("prior odds must be positive")
        if self.effect_prior_sd <= 0:
            raise DataError("effect prior sd must be positive")


# ---------------------------------------------------------------------------
# Parsing


def _lines(path):
    with open(path, "r", newline=None) as fh:
        for raw in fh:
            yield raw.rstrip("\r\n")


def load_panel(legend_path, haps_path) -> HaplotypePanel:
    """Load a reference panel from legend + haps files."""
    legend = []
    it = _lines(legend_path)
    try:
        next(it)  # header
    except StopIteration:
        raise DataError(f"{legend_path}: empty legend file") from None
    for lineno, line in enumerate(it, start=2):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 4:
            raise DataError(f"{legend_path}:{lineno}: expected 4 fields, got {len(tok)}")
        try:
            pos = int(tok[1])
        except ValueError:
            raise DataError(f"{legend_path}:{lineno}: bad position {tok[1]!r}") from None
        if legend and pos <= legend[-1].position_bp:
            raise DataError(f"{legend_path}:{lineno}: nonmonotone position at line {lineno}")
        legend.append(LegendRecord(tok[0], pos, tok[2], tok[3]))

    rows = []
    n_hap = None
    for lineno, line in enumerate(_lines(haps_path), start=1):
        if not line.strip():
            continue
        tok = line.split()
        if n_hap is None:
            n_hap = len(tok)
        elif len(tok) != n_hap:
            raise DataError(
                f"{haps_path}:{lineno}: expected {n_hap} tokens, got {len(tok)}"
            )
        try:
            row = [int(t) for t in tok]
        except ValueError:
            raise DataError(f"{haps_path}:{lineno}: non-binary allele token") from None
        if any(v not in (0, 1) for v in row):
            raise DataError(f"{haps_path}:{lineno}: non-binary allele token")
        rows.append(row)
    if len(rows) != len(legend):
        raise DataError(
            f"haps row count {len(rows)} does not match legend row count {len(legend)}"
        )
    alleles = np.array(rows, dtype=np.int8).T  # (N, L)
    return HaplotypePanel(alleles=alleles, legend=legend)


def load_genotypes(
    gen_path, sample_path, panel: HaplotypePanel, drop_unmatched: bool = False
) -> GenotypeStudy:
    """Load study genotypes + phenotypes, aligned and recoded to panel orientation."""
    pos_to_site = {r.position_bp: j for j, r in enumerate(panel.legend)}

    site_index = []
    geno_rows = []
    n_ind = None
    for lineno, line in enumerate(_lines(gen_path), start=1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) < 5:
            raise DataError(f"{gen_path}:{lineno}: expected at least 5 fields")
        snp_id, pos_s, a0, a1 = tok[:4]
        try:
            pos = int(pos_s)
        except ValueError:
            raise DataError(f"{gen_path}:{lineno}: bad position {pos_s!r}") from None
        gtok = tok[4:]
        if n_ind is None:
            n_ind = len(gtok)
        elif len(gtok) != n_ind:
            raise DataError(f"{gen_path}:{lineno}: inconsistent genotype count")
        site = pos_to_site.get(pos)
        if site is None:
            if drop_unmatched:
                warnings.warn(
                    f"{gen_path}:{lineno}: untyped-in-panel SNP {snp_id} at {pos}; dropped"
                )
                continue
            raise DataError(
                f"{gen_path}:{lineno}: untyped-in-panel SNP {snp_id} at position {pos}"
            )
        rec = panel.legend[site]
        if (a0, a1) == (rec.allele0, rec.allele1):
            flip = False
        elif (a0, a1) == (rec.allele1, rec.allele0):
            flip = True
        else:
            raise DataError(
                f"{gen_path}:{lineno}: allele mismatch with panel "
                f"({a0}/{a1} vs {rec.allele0}/{rec.allele1})"
            )
        row = np.empty(n_ind, dtype=np.int8)
        for i, g in enumerate(gtok):
            if g == "NA":
                row[i] = MISSING
            elif g in ("0", "1", "2"):
                row[i] = int(g)
            else:
                raise DataError(f"{gen_path}:{lineno}: bad genotype token {g!r}")
        if flip:
            row = recode_orientation(row)
        site_index.append(site)
        geno_rows.append(row)

    phenos = []
    it = _lines(sample_path)
    try:
        next(it)  # header
    except StopIteration:
        raise DataError(f"{sample_path}: empty sample file") from None
    for lineno, line in enumerate(it, start=2):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) < 2:
            raise DataError(f"{sample_path}:{lineno}: expected 'id phenotype'")
        if tok[1] not in ("0", "1"):
            raise DataError(f"{sample_path}:{lineno}: phenotype outside {{0,1}}: {tok[1]!r}")
        phenos.append(int(tok[1]))
    if n_ind is not None and len(phenos) != n_ind:
        raise DataError(
            f"sample file has {len(phenos)} individuals but gen file has {n_ind}"
        )

    genotypes = (
        np.array(geno_rows, dtype=np.int8).T
        if geno_rows
        else np.zeros((len(phenos), 0), dtype=np.int8)
    )
    order = np.argsort(np.array(site_index, dtype=np.int64), kind="stable")
    site_index = np.array(site_index, dtype=np.int64)[order]
    genotypes = genotypes[:, order] if genotypes.size else genotypes
    return GenotypeStudy(
        genotypes=genotypes,
        site_index=site_index,
        phenotypes=np.array(phenos, dtype=np.int8),
    )


def recode_orientation(genotypes: np.ndarray) -> np.ndarray:
    """Swap the 0/2 coding of hard-call genotypes (missing unchanged); an involution."""
    out = genotypes.copy()
    nonmiss = out != MISSING
    out[nonmiss] = 2 - out[nonmiss]
    return out


def load_map(map_path) -> RecombinationMap:
    """Load a recombination map file (header, then position rate cumulative)."""
    pos, rate, cum = [], [], []
    it = _lines(map_path)
    try:
        next(it)  # header
    except StopIteration:
        raise DataError(f"{map_path}: empty map file") from None
    for lineno, line in enumerate(it, start=2):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) < 3:
            raise DataError(f"{map_path}:{lineno}: expected 'position rate cumulative'")
        try:
            pos.append(int(tok[0]))
            rate.append(float(tok[1]))
            cum.append(float(tok[2]))
        except ValueError:
            raise DataError(f"{map_path}:{lineno}: bad numeric field") from None
    return RecombinationMap(np.array(pos), np.array(rate), np.array(cum))


# ---------------------------------------------------------------------------
# Serialization (canonical single-space format; round-trips byte-identically)


def write_panel(panel: HaplotypePanel, legend_path, haps_path) -> None:
    with open(legend_path, "w", newline="\n") as fh:
        fh.write("id position allele0 allele1\n")
        for r in panel.legend:
            fh.write(f"{r.snp_id} {r.position_bp} {r.allele0} {r.allele1}\n")
    with open(haps_path, "w", newline="\n") as fh:
        for j in range(panel.n_sites):
            fh.write(" ".join(str(int(v)) for v in panel.alleles[:, j]))
            fh.write("\n")


def write_genotypes(study: GenotypeStudy, panel: HaplotypePanel, gen_path, sample_path) -> None:
    with open(gen_path, "w", newline="\n") as fh:
        for t, site in enumerate(study.site_index):
            rec = panel.legend[int(site)]
            toks = [rec.snp_id, str(rec.position_bp), rec.allele0, rec.allele1]
            for g in study.genotypes[:, t]:
                toks.append("NA" if g == MISSING else str(int(g)))
            fh.write(" ".join(toks))
            fh.write("\n")
    with open(sample_path, "w", newline="\n") as fh:
        fh.write("id phenotype\n")
        for i, phi in enumerate(study.phenotypes):
            fh.write(f"ind{i} {int(phi)}\n")


def write_map(gmap: RecombinationMap, map_path) -> None:
    with open(map_path, "w", newline="\n") as fh:
        fh.write("position rate(cM/Mb) cumulative(cM)\n")
        for p, r, c in zip(gmap.positions_bp, gmap.rates_cm_per_mb, gmap.cumulative_cm):
            fh.write(f"{int(p)} {r:.10g} {c:.10g}\n")
