"""Conditional case-control simulation from a haplotype panel.

New haplotypes are recombinant mosaics of the panel (template switches between
adjacent sites, per-site allele flips), phenotypes follow a 1- or 2-locus
multiplicative relative-risk model with rejection sampling to exact case and
control quotas, and the observed dataset is the typed-site projection. Also
provides the panel-thinning and causal-pair selection used by the power and
effect-size studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    DataError,
    GenotypeStudy,
    HaplotypePanel,
    RecombinationMap,
)
from .tree import DEFAULT_NE, watterson_theta


@dataclass
class DiseaseModel:
    causal_sites: tuple[int, ...]  # panel site indices, 1 or 2 of them
    relative_risks: tuple[float, ...]  # per-allele RR per causal site
    baseline_risk: float = 0.05

    def __post_init__(self):
        if len(self.causal_sites) not in (1, 2):
            raise DataError("1 or 2 causal sites supported")
        if len(set(self.causal_sites)) != len(self.causal_sites):
            raise DataError("causal sites must be distinct")
        if len(self.relative_risks) != len(self.causal_sites):
            raise DataError("one relative risk per causal site")
        if any(r < 0 for r in self.relative_risks):
            raise DataError("relative risks must be nonnegative")
        if not (0.0 < self.baseline_risk < 1.0):
            raise DataError("baseline risk must lie in (0, 1)")


@dataclass
class SimConfig:
    n_cases: int
    n_controls: int
    seed: int
    typed_mask: np.ndarray  # panel site indices presented as genotyped
    mismatch_rate: float | None = None  # None -> theta/(2(N+theta))
    switch_scale: float = 4.0 * DEFAULT_NE
    max_draws: int = 2_000_000

    def __post_init__(self):
        if self.n_cases <= 0 or self.n_controls <= 0:
            raise DataError("case and control quotas must be positive")
        self.typed_mask = np.ascontiguousarray(self.typed_mask, dtype=np.int64)
        if self.typed_mask.size == 0:
            raise DataError("typed_mask must be nonempty")


def _mosaic_params(panel: HaplotypePanel, gmap: RecombinationMap, switch_scale, mismatch):
    n = panel.n_haplotypes
    cum = gmap.cumulative_at(panel.positions_bp.astype(np.float64))
    rho = np.diff(cum) / 100.0 * switch_scale
    switch = -np.expm1(-rho / n)
    if mismatch is None:
        th = watterson_theta(n)
        mismatch = th / (2.0 * (n + th))
    return switch, mismatch


def simulate_haplotypes(
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    n_haplotypes: int,
    rng: np.random.Generator,
    switch_scale: float = 4.0 * DEFAULT_NE,
    mismatch_rate: float | None = None,
) -> np.ndarray:
    """Draw recombinant-mosaic haplotypes conditional on the panel; (n, L)."""
    n_p = panel.n_haplotypes
    l = panel.n_sites
    switch, lam = _mosaic_params(panel, gmap, switch_scale, mismatch_rate)
    tmpl = np.empty((n_haplotypes, l), dtype=np.int64)
    tmpl[:, 0] = rng.integers(0, n_p, size=n_haplotypes)
    for j in range(1, l):
        jump = rng.random(n_haplotypes) < switch[j - 1]
        tmpl[:, j] = np.where(jump, rng.integers(0, n_p, size=n_haplotypes), tmpl[:, j - 1])
    out = panel.alleles[tmpl, np.arange(l)[None, :]].astype(np.int8)
    if lam > 0:
        flips = rng.random(out.shape) < lam
        out[flips] = 1 - out[flips]
    return out


def simulate_haplotype(
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    rng: np.random.Generator,
    switch_scale: float = 4.0 * DEFAULT_NE,
    mismatch_rate: float | None = None,
) -> np.ndarray:
    """Single mosaic haplotype of length L."""
    return simulate_haplotypes(panel, gmap, 1, rng, switch_scale, mismatch_rate)[0]


def _risk_alleles(panel: HaplotypePanel, sites) -> np.ndarray:
    """Risk allele per causal site: the minor allele (panel coding 0 or 1)."""
    freq = panel.frequencies()
    return np.where(freq[list(sites)] <= 0.5, 1, 0)


def simulate_case_control(
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    model: DiseaseModel,
    config: SimConfig,
) -> tuple[GenotypeStudy, np.ndarray]:
    """Simulate to exact quotas under the multiplicative risk model.

    Returns the typed-site study plus the full causal-site genotype matrix of
    the retained individuals (causal columns in model.causal_sites order).
    """
    rng = np.random.default_rng(config.seed)
    sites = np.array(model.causal_sites, dtype=np.int64)
    risk_allele = _risk_alleles(panel, sites)
    rr = np.array(model.relative_risks, dtype=np.float64)

    typed = config.typed_mask
    kept_geno = []
    kept_phi = []
    kept_causal = []
    need_cases = config.n_cases
    need_controls = config.n_controls
    drawn = 0
    batch = max(256, 2 * (config.n_cases + config.n_controls))
    while need_cases > 0 or need_controls > 0:
        if drawn >= config.max_draws:
            raise DataError(
                f"case/control quota unattainable within {config.max_draws} draws "
                f"(still need {need_cases} cases, {need_controls} controls)"
            )
        h = simulate_haplotypes(
            panel, gmap, 2 * batch, rng, config.switch_scale, config.mismatch_rate
        )
        h1, h2 = h[0::2], h[1::2]
        causal_counts = (h1[:, sites] == risk_allele).astype(np.int64) + (
            h2[:, sites] == risk_allele
        ).astype(np.int64)
        risk = model.baseline_risk * np.prod(rr ** causal_counts, axis=1)
        risk = np.minimum(risk, 1.0)
        is_case = rng.random(batch) < risk
        drawn += batch

        geno = (h1[:, typed] + h2[:, typed]).astype(np.int8)
        for i in range(batch):
            if is_case[i] and need_cases > 0:
                need_cases -= 1
            elif (not is_case[i]) and need_controls > 0:
                need_controls -= 1
            else:
                continue
            kept_geno.append(geno[i])
            kept_phi.append(1 if is_case[i] else 0)
            kept_causal.append(causal_counts[i])
            if need_cases == 0 and need_controls == 0:
                break

    study = GenotypeStudy(
        genotypes=np.array(kept_geno, dtype=np.int8),
        site_index=typed.copy(),
        phenotypes=np.array(kept_phi, dtype=np.int8),
    )
    return study, np.array(kept_causal, dtype=np.int64)


def select_causal_pairs(
    panel: HaplotypePanel,
    model_class: str,
    max_distance_bp: int = 15_000,
) -> list[tuple[int, int]]:
    """Exhaustive list of causal-site pairs for the power-study disease models.

    Model "A": one rare site (risk/minor allele frequency < 2%) and one common
    site (5%-20%); model "B": both sites in 5%-20%. Pairs must lie within
    max_distance_bp of each other.
    """
    if model_class not in ("A", "B"):
        raise DataError("model_class must be 'A' or 'B'")
    freq = panel.frequencies()
    maf = np.minimum(freq, 1.0 - freq)
    pos = panel.positions_bp
    rare = np.nonzero((maf > 0) & (maf < 0.02))[0]
    common = np.nonzero((maf >= 0.05) & (maf <= 0.20))[0]
    pairs = []
    if model_class == "A":
        for r in rare:
            for c in common:
                if r != c and abs(int(pos[r]) - int(pos[c])) <= max_distance_bp:
                    pairs.append((int(r), int(c)))
    else:
        for i, s1 in enumerate(common):
            for s2 in common[i + 1 :]:
                if int(pos[s2]) - int(pos[s1]) <= max_distance_bp:
                    pairs.append((int(s1), int(s2)))
    return sorted(pairs)


def thin_panel(
    panel: HaplotypePanel,
    target_density_per_kb: float,
    maf_bins: np.ndarray,
    target_maf_hist: np.ndarray | None = None,
    must_include: set[int] | None = None,
    seed: int = 0,
    window_kb: float = 50.0,
) -> HaplotypePanel:
    """Subset the panel to roughly `target_density_per_kb` while matching a MAF
    histogram over `maf_bins` (defaults to the full panel's own distribution).
    Sites in must_include are always retained. Deterministic given seed."""
    if target_density_per_kb <= 0:
        raise DataError("target density must be positive")
    must_include = set(int(s) for s in (must_include or set()))
    if any(s < 0 or s >= panel.n_sites for s in must_include):
        raise DataError("must_include sites outside panel")
    pos = panel.positions_bp
    span_kb = (pos[-1] - pos[0]) / 1000.0 if panel.n_sites > 1 else 1.0
    n_target = int(round(target_density_per_kb * max(span_kb, 1.0)))
    n_target = min(max(n_target, len(must_include), 1), panel.n_sites)
    if n_target >= panel.n_sites:
        return panel.subset_sites(np.arange(panel.n_sites))

    freq = panel.frequencies()
    maf = np.minimum(freq, 1.0 - freq)
    maf_bins = np.asarray(maf_bins, dtype=np.float64)
    bin_of = np.clip(np.digitize(maf, maf_bins) - 1, 0, len(maf_bins) - 2)
    if target_maf_hist is None:
        target_maf_hist = np.bincount(bin_of, minlength=len(maf_bins) - 1).astype(float)
        target_maf_hist /= target_maf_hist.sum()
    else:
        target_maf_hist = np.asarray(target_maf_hist, dtype=np.float64)
        target_maf_hist = target_maf_hist / target_maf_hist.sum()

    rng = np.random.default_rng(seed)
    chosen = set(must_include)
    # fill remaining quota bin by bin, spreading picks evenly along the region
    want = np.floor(target_maf_hist * n_target).astype(int)
    while want.sum() < n_target:
        want[int(np.argmax(target_maf_hist * n_target - want))] += 1
    for b in range(len(want)):
        pool = [int(s) for s in np.nonzero(bin_of == b)[0] if s not in chosen]
        already = sum(1 for s in chosen if bin_of[s] == b)
        take = min(max(want[b] - already, 0), len(pool))
        if take > 0:
            # even spatial spread: pick by position rank
            idx = np.linspace(0, len(pool) - 1, take).round().astype(int)
            pool_sorted = sorted(pool, key=lambda s: pos[s])
            chosen.update(pool_sorted[i] for i in idx)
    # top up from anywhere if bins ran dry
    if len(chosen) < n_target:
        rest = [s for s in range(panel.n_sites) if s not in chosen]
        extra = rng.choice(len(rest), size=n_target - len(chosen), replace=False)
        chosen.update(rest[i] for i in sorted(extra))
    sites = np.array(sorted(chosen), dtype=np.int64)

    achieved_density = len(sites) / max(span_kb, 1.0)
    if abs(achieved_density - target_density_per_kb) > 0.2 * target_density_per_kb and len(
        sites
    ) < panel.n_sites:
        raise DataError(
            f"thinning infeasible: achieved {achieved_density:.3f}/kb vs target "
            f"{target_density_per_kb:.3f}/kb"
        )
    return panel.subset_sites(sites)


def pairwise_r2(panel: HaplotypePanel, sites_a, sites_b) -> np.ndarray:
    """Squared haplotype-frequency correlation between two site lists, (|a|, |b|)."""
    xa = panel.alleles[:, np.asarray(sites_a, dtype=np.int64)].astype(np.float64)
    xb = panel.alleles[:, np.asarray(sites_b, dtype=np.int64)].astype(np.float64)
    xa -= xa.mean(axis=0)
    xb -= xb.mean(axis=0)
    va = (xa**2).sum(axis=0)
    vb = (xb**2).sum(axis=0)
    cov = xa.T @ xb
    denom = np.outer(va, vb)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(denom > 0, cov**2 / denom, 0.0)
    return r2


def select_poorly_tagged_sites(
    full_panel: HaplotypePanel,
    thinned: "HaplotypePanel | np.ndarray",
    r2_max: float = 0.2,
) -> list[int]:
    """Full-panel sites whose max r^2 against every thinned site is <= r2_max.

    `thinned` is either the thinned panel (matched to the full panel by
    position) or an array of full-panel site indices."""
    if isinstance(thinned, HaplotypePanel):
        pos_to_site = {r.position_bp: j for j, r in enumerate(full_panel.legend)}
        try:
            thinned_sites = np.array(
                [pos_to_site[r.position_bp] for r in thinned.legend], dtype=np.int64
            )
        except KeyError as exc:
            raise DataError(f"thinned site at {exc.args[0]} not in full panel") from exc
    else:
        thinned_sites = np.asarray(thinned, dtype=np.int64)
    all_sites = np.arange(full_panel.n_sites)
    r2 = pairwise_r2(full_panel, all_sites, thinned_sites)
    best = r2.max(axis=1) if thinned_sites.size else np.zeros(full_panel.n_sites)
    return [int(s) for s in all_sites[best <= r2_max]]
