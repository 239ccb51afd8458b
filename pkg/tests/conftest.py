"""Shared fixtures: synthetic panels with coalescent structure, maps, studies."""

import numpy as np
import pytest

from cladescan.data import (
    GenotypeStudy,
    HaplotypePanel,
    LegendRecord,
    RecombinationMap,
)


def make_legend(positions, a0="A", a1="G"):
    return [LegendRecord(f"rs{j}", int(p), a0, a1) for j, p in enumerate(positions)]


def random_panel(rng, n, l, start=10_000, span=80_000):
    """IID random panel with no fixed columns and distinct sorted positions."""
    pos = np.sort(rng.choice(np.arange(start, start + span), size=l, replace=False))
    alleles = rng.integers(0, 2, size=(n, l)).astype(np.int8)
    for j in range(l):
        s = alleles[:, j].sum()
        if s == 0:
            alleles[rng.integers(n), j] = 1
        elif s == n:
            alleles[rng.integers(n), j] = 0
    return HaplotypePanel(alleles, make_legend(pos))


def coalescent_panel(rng, n, l, start=1, span=100_000):
    """Panel whose sites are mutations dropped on a random coalescent topology,
    so every site's carrier set is a clade (infinite-sites structure)."""
    live = [1 << i for i in range(n)]
    clades, lens = [], []
    k = n
    while k > 1:
        i, j = sorted(rng.choice(k, size=2, replace=False))
        a, b = live[i], live[j]
        for m in (a, b):
            clades.append(m)
            lens.append(2.0 / (k * (k - 1)))
        live = [m for t, m in enumerate(live) if t not in (i, j)] + [a | b]
        k -= 1
    p = np.array(lens)
    p /= p.sum()
    picks = rng.choice(len(clades), size=l, p=p)
    pos = np.sort(rng.choice(np.arange(start, start + span), size=l, replace=False))
    alleles = np.zeros((n, l), dtype=np.int8)
    for j, c in enumerate(picks):
        for i in range(n):
            if clades[c] >> i & 1:
                alleles[i, j] = 1
    keep = [j for j in range(l) if 0 < alleles[:, j].sum() < n]
    return HaplotypePanel(alleles[:, keep], make_legend(pos[keep]))


def tiny_study(rng, panel, k=8, typed=None):
    typed = np.arange(panel.n_sites) if typed is None else np.asarray(typed)
    genos = rng.integers(0, 3, size=(k, typed.size)).astype(np.int8)
    phen = np.zeros(k, dtype=np.int8)
    phen[: k // 2] = 1
    return GenotypeStudy(genotypes=genos, site_index=typed, phenotypes=phen)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def flat_map():
    return RecombinationMap.uniform(0, 120_000, 1.0)


@pytest.fixture
def small_panel(rng):
    return random_panel(rng, 10, 25)


@pytest.fixture
def structured_panel(rng):
    return coalescent_panel(rng, 12, 40)
