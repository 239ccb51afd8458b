"""Diploid haplotype-copying HMM: place study genotypes on the panel at a focal
position and reduce the posterior to expected copy counts and clade dosages.

The hidden state at each site is an ordered pair of panel haplotypes being
copied; transitions let each chain independently stay (prob exp(-rho/N)) or
jump to a uniform haplotype, and emissions allow per-allele-copy mismatches at
rate lambda. The focal position is a virtual site with uniform emission, so the
pair posterior there does not depend on which branch mutation is hypothesized;
expected branch genotypes are clade sums of the haploid copy-count marginals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    MISSING,
    DataError,
    GenotypeStudy,
    HaplotypePanel,
    RecombinationMap,
)
from .tree import DEFAULT_NE, watterson_theta


@dataclass
class HmmParams:
    mismatch_rate: float | None = None  # None -> theta/(2(N+theta)), Watterson theta
    switch_scale: float = 4.0 * DEFAULT_NE  # cM -> scaled rho multiplier
    window_sites: int = 200

    def __post_init__(self):
        if self.mismatch_rate is not None and not (0.0 < self.mismatch_rate < 0.5):
            raise DataError("mismatch_rate must lie in (0, 0.5)")
        if self.switch_scale <= 0 or self.window_sites < 1:
            raise DataError("switch_scale must be positive and window_sites >= 1")

    def resolved_lambda(self, n_haplotypes: int) -> float:
        if self.mismatch_rate is not None:
            return self.mismatch_rate
        th = watterson_theta(n_haplotypes)
        return th / (2.0 * (n_haplotypes + th))


@dataclass
class CopyDosage:
    """Posterior copying summary for all K individuals at one focal position.

    q[i, k] is the expected number (0..2) of chromosomes of individual i copied
    from panel haplotype k at the focal site; pair_posterior[i] is the full
    ordered-pair posterior there (rows sum to 1). uniform_fallback flags a
    window that contained no typed sites.
    """

    focal_position_bp: int
    q: np.ndarray  # (K, N)
    pair_posterior: np.ndarray  # (K, N, N)
    uniform_fallback: bool = False

    @property
    def n_individuals(self) -> int:
        return self.q.shape[0]

    @property
    def n_haplotypes(self) -> int:
        return self.q.shape[1]


def _emission_tables(hap_sums: np.ndarray, lam: float) -> np.ndarray:
    """(3, N, N) emission P(g | pair allele sum) for g = 0, 1, 2.

    hap_sums[k1, k2] = allele(k1) + allele(k2) at one site; each of the two
    observed allele copies independently flips with probability lam.
    """
    n = hap_sums.shape[0]
    out = np.empty((3, n, n))
    # per-copy emission e(x | a): (1-lam) if x == a else lam
    for g in range(3):
        tab = np.empty_like(out[0])
        for s in (0, 1, 2):
            mask = hap_sums == s
            if not np.any(mask):
                continue
            a1 = 1 if s >= 1 else 0  # alleles of the copied pair, order-free
            a2 = 1 if s == 2 else 0
            p = 0.0
            for x1 in (0, 1):
                x2 = g - x1
                if x2 not in (0, 1):
                    continue
                e1 = (1.0 - lam) if x1 == a1 else lam
                e2 = (1.0 - lam) if x2 == a2 else lam
                p += e1 * e2
            tab[mask] = p
        out[g] = tab
    return out


def _window_typed_sites(
    panel: HaplotypePanel, study: GenotypeStudy, focal_position_bp: int, window_sites: int
) -> np.ndarray:
    """Indices into study columns for typed sites within window_sites panel sites
    of the focal position."""
    pos = panel.positions_bp
    insert = int(np.searchsorted(pos, focal_position_bp))
    lo = max(0, insert - window_sites)
    hi = min(panel.n_sites, insert + window_sites)
    in_window = (study.site_index >= lo) & (study.site_index < hi)
    return np.nonzero(in_window)[0]


def copying_posterior(
    study: GenotypeStudy,
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    focal_position_bp: int,
    params: HmmParams | None = None,
) -> CopyDosage:
    """Forward-backward over the diploid copying chain for every individual.

    Restricted to typed sites within the window around the focal position; the
    focal position itself is a virtual site with uniform emission. Missing
    genotypes emit uniformly.
    """
    params = params or HmmParams()
    n = panel.n_haplotypes
    k_ind = study.n_individuals
    cols = _window_typed_sites(panel, study, focal_position_bp, params.window_sites)

    if cols.size == 0:
        q = np.full((k_ind, n), 2.0 / n)
        pp = np.full((k_ind, n, n), 1.0 / (n * n))
        return CopyDosage(focal_position_bp, q, pp, uniform_fallback=True)

    lam = params.resolved_lambda(n)
    sites = study.site_index[cols]
    site_pos = panel.positions_bp[sites].astype(np.float64)
    genos = study.genotypes[:, cols]  # (K, S)

    # chain coordinates: typed sites with the virtual focal inserted by position
    fpos = float(focal_position_bp)
    focal_at = int(np.searchsorted(site_pos, fpos))
    coord_pos = np.insert(site_pos, focal_at, fpos)
    n_steps = coord_pos.size

    cum_cm = gmap.cumulative_at(coord_pos)
    rho = np.diff(cum_cm) / 100.0 * params.switch_scale
    switch = -np.expm1(-rho / n)  # per-interval jump probability

    # per-site emission lookup, indexed by genotype (MISSING -> uniform)
    hap = panel.alleles[:, sites].astype(np.int64)  # (N, S)
    emis = []  # list over chain coords of (K, N, N) or None (uniform)
    for c in range(n_steps):
        if c == focal_at:
            emis.append(None)
            continue
        s = c if c < focal_at else c - 1
        sums = hap[:, s][:, None] + hap[:, s][None, :]
        tables = _emission_tables(sums, lam)  # (3, N, N)
        g = genos[:, s]
        e = np.empty((k_ind, n, n))
        for gv in (0, 1, 2):
            sel = g == gv
            if np.any(sel):
                e[sel] = tables[gv]
        sel = g == MISSING
        if np.any(sel):
            e[sel] = 1.0
        emis.append(e)
    return _run_forward_backward(emis, switch, focal_at, k_ind, n, focal_position_bp)


def _transition(mat: np.ndarray, s: float) -> np.ndarray:
    """Apply the product copying kernel to (K, N, N) state mass: each chain stays
    with prob 1-s or jumps uniformly."""
    n = mat.shape[1]
    row = mat.sum(axis=2)  # (K, N) marginal of chain 1
    col = mat.sum(axis=1)  # (K, N) marginal of chain 2
    tot = row.sum(axis=1)  # (K,)
    stay = 1.0 - s
    return (
        stay * stay * mat
        + (stay * s / n) * (row[:, :, None] + col[:, None, :])
        + (s / n) * (s / n) * tot[:, None, None]
    )


def _run_forward_backward(emis, switch, focal_at, k_ind, n, focal_position_bp) -> CopyDosage:
    n_steps = len(emis)

    def emit(mat, c):
        return mat if emis[c] is None else mat * emis[c]

    # forward up to the focal coordinate
    f = np.full((k_ind, n, n), 1.0 / (n * n))
    f = emit(f, 0)
    f /= f.sum(axis=(1, 2), keepdims=True)
    for c in range(1, focal_at + 1):
        f = _transition(f, switch[c - 1])
        f = emit(f, c)
        f /= f.sum(axis=(1, 2), keepdims=True)

    # backward down to the focal coordinate
    b = np.ones((k_ind, n, n))
    for c in range(n_steps - 2, focal_at - 1, -1):
        w = emit(b, c + 1)
        # reverse application of the symmetric kernel
        b = _transition(w, switch[c])
        b /= b.sum(axis=(1, 2), keepdims=True)

    post = f * b
    post /= post.sum(axis=(1, 2), keepdims=True)
    q = post.sum(axis=2) + post.sum(axis=1)
    return CopyDosage(focal_position_bp, q, post)


def clade_dosage(dosage: CopyDosage, tip_set: int) -> np.ndarray:
    """Expected allele count per individual for a mutation carried by `tip_set`
    (bitmask): e_i = sum_{k in clade} q_i(k), in [0, 2]."""
    n = dosage.n_haplotypes
    mask = np.array([(tip_set >> k) & 1 for k in range(n)], dtype=np.float64)
    return dosage.q @ mask


def export_branch_genotypes(dosage: CopyDosage, tip_set: int) -> np.ndarray:
    """Per-individual (P0, P1, P2) of carrying 0/1/2 copies of the branch allele,
    from the full pair posterior."""
    n = dosage.n_haplotypes
    mask = np.array([(tip_set >> k) & 1 for k in range(n)], dtype=np.float64)
    inm = 1.0 - mask
    pp = dosage.pair_posterior
    p2 = np.einsum("ikl,k,l->i", pp, mask, mask)
    p1 = np.einsum("ikl,k,l->i", pp, mask, inm) + np.einsum("ikl,k,l->i", pp, inm, mask)
    p0 = np.einsum("ikl,k,l->i", pp, inm, inm)
    return np.stack([p0, p1, p2], axis=1)


def dosage_table(dosages: np.ndarray, phenotypes: np.ndarray) -> np.ndarray:
    """2x2 expected allele-count table [[n00, n01], [n10, n11]]: controls/cases
    by without/with the branch allele."""
    dosages = np.asarray(dosages, dtype=np.float64)
    phenotypes = np.asarray(phenotypes)
    if dosages.shape[0] != phenotypes.shape[0]:
        raise DataError("dosage count does not match phenotype count")
    controls = phenotypes == 0
    cases = phenotypes == 1
    n_u = 2.0 * np.sum(controls)
    n_a = 2.0 * np.sum(cases)
    n01 = float(np.sum(dosages[controls]))
    n11 = float(np.sum(dosages[cases]))
    return np.array([[n_u - n01, n01], [n_a - n11, n11]])


def write_branch_genotype_file(
    path,
    rows: list[tuple[str, int, str, str, np.ndarray]],
) -> None:
    """Write the 3-probabilities-per-individual export: one row per branch-SNP,
    ``snp_id pos a0 a1 P0 P1 P2 ...``."""
    with open(path, "w", newline="\n") as fh:
        for snp_id, pos, a0, a1, probs in rows:
            toks = [snp_id, str(int(pos)), a0, a1]
            for trip in np.asarray(probs):
                toks.extend(f"{v:.6f}" for v in trip)
            fh.write(" ".join(toks))
            fh.write("\n")
