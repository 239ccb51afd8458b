import numpy as np
import pytest

from cladescan.data import (
    MISSING,
    DataError,
    GenotypeStudy,
    RecombinationMap,
)
from cladescan.copying import (
    HmmParams,
    clade_dosage,
    copying_posterior,
    dosage_table,
    export_branch_genotypes,
    write_branch_genotype_file,
)

from conftest import random_panel, tiny_study
from oracles import brute_force_pair_posterior


class TestHmmParams:
    def test_lambda_default_matches_watterson(self):
        p = HmmParams()
        n = 10
        th = 1.0 / sum(1.0 / i for i in range(1, n))
        assert p.resolved_lambda(n) == pytest.approx(th / (2 * (n + th)))

    def test_validation(self):
        with pytest.raises(DataError):
            HmmParams(mismatch_rate=0.7)
        with pytest.raises(DataError):
            HmmParams(switch_scale=0)


class TestPosteriorShape:
    def test_marginals_normalized(self, rng, small_panel, flat_map):
        study = tiny_study(rng, small_panel, k=5)
        d = copying_posterior(study, small_panel, flat_map, 50_000)
        np.testing.assert_allclose(d.q.sum(axis=1), 2.0, atol=1e-10)
        np.testing.assert_allclose(d.pair_posterior.sum(axis=(1, 2)), 1.0, atol=1e-10)
        assert not d.uniform_fallback

    def test_uniform_fallback_without_typed_sites(self, rng, small_panel, flat_map):
        study = tiny_study(rng, small_panel, k=4, typed=np.array([0]))
        # focal far to the right with a tiny window: site 0 falls outside
        d = copying_posterior(
            study, small_panel, flat_map, 110_000, HmmParams(window_sites=1)
        )
        assert d.uniform_fallback
        np.testing.assert_allclose(d.q, 2.0 / small_panel.n_haplotypes)

    def test_perfect_match_concentrates(self, flat_map, rng):
        panel = random_panel(rng, 6, 30)
        # individual is haplotype 3 twice, observed without error
        genos = (2 * panel.alleles[3]).astype(np.int8)[None, :]
        study = GenotypeStudy(
            genotypes=np.vstack([genos, genos]),
            site_index=np.arange(30),
            phenotypes=np.array([1, 0]),
        )
        d = copying_posterior(
            study, panel, flat_map, 50_000, HmmParams(mismatch_rate=1e-4)
        )
        assert np.argmax(d.q[0]) == 3
        assert d.q[0, 3] > 1.5


class TestBruteForceEquivalence:
    def test_matches_path_enumeration(self, flat_map):
        rng = np.random.default_rng(77)
        for trial in range(6):
            n = int(rng.integers(2, 5))
            s = int(rng.integers(2, 5))  # typed sites; chain length s+1
            panel = random_panel(rng, n, s)
            genos = rng.integers(0, 3, size=(1, s)).astype(np.int8)
            if trial == 0:
                genos[0, 0] = MISSING
            study = GenotypeStudy(
                genotypes=np.vstack([genos, genos]),
                site_index=np.arange(s),
                phenotypes=np.array([1, 0]),
            )
            focal = int(panel.positions_bp[0]) + 1  # between sites
            params = HmmParams(mismatch_rate=0.05)
            d = copying_posterior(study, panel, flat_map, focal, params)

            pos = panel.positions_bp.astype(float)
            focal_at = int(np.searchsorted(pos, focal))
            coord_pos = np.insert(pos, focal_at, float(focal))
            rho = np.diff(flat_map.cumulative_at(coord_pos)) / 100.0 * params.switch_scale
            switch = -np.expm1(-rho / n)
            ref = brute_force_pair_posterior(
                panel.alleles.astype(int), genos[0], switch, 0.05, focal_at
            )
            np.testing.assert_allclose(d.pair_posterior[0], ref, rtol=1e-10, atol=1e-12)


class TestDosages:
    def test_clade_dosage_linear_in_q(self, rng, small_panel, flat_map):
        study = tiny_study(rng, small_panel, k=4)
        d = copying_posterior(study, small_panel, flat_map, 40_000)
        tip_set = 0b1011001011
        e = clade_dosage(d, tip_set)
        mask = np.array([(tip_set >> k) & 1 for k in range(10)], float)
        np.testing.assert_allclose(e, d.q @ mask)
        assert np.all((e >= -1e-12) & (e <= 2 + 1e-12))

    def test_complement_partition(self, rng, small_panel, flat_map):
        study = tiny_study(rng, small_panel, k=4)
        d = copying_posterior(study, small_panel, flat_map, 40_000)
        full = (1 << 10) - 1
        tip_set = 0b0000110101
        np.testing.assert_allclose(
            clade_dosage(d, tip_set) + clade_dosage(d, full & ~tip_set), 2.0
        )

    def test_export_consistent_with_dosage(self, rng, small_panel, flat_map):
        study = tiny_study(rng, small_panel, k=6)
        d = copying_posterior(study, small_panel, flat_map, 40_000)
        tip_set = 0b1110000001
        probs = export_branch_genotypes(d, tip_set)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)
        # expected count from the genotype distribution equals the clade dosage
        np.testing.assert_allclose(
            probs[:, 1] + 2 * probs[:, 2], clade_dosage(d, tip_set), atol=1e-10
        )


class TestDosageTable:
    def test_margins(self):
        e = np.array([0.5, 1.5, 2.0, 0.0])
        y = np.array([0, 0, 1, 1])
        tab = dosage_table(e, y)
        assert tab[0].sum() == pytest.approx(4.0)  # 2 controls x 2 alleles
        assert tab[1].sum() == pytest.approx(4.0)
        assert tab[0, 1] == pytest.approx(2.0)
        assert tab[1, 1] == pytest.approx(2.0)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            dosage_table(np.zeros(3), np.zeros(2))


def test_branch_genotype_file_format(tmp_path):
    probs = np.array([[0.25, 0.5, 0.25], [1.0, 0.0, 0.0]])
    path = tmp_path / "bg.txt"
    write_branch_genotype_file(path, [("branch7", 1234, "A", "B", probs)])
    toks = path.read_text().split()
    assert toks[:4] == ["branch7", "1234", "A", "B"]
    assert [float(t) for t in toks[4:]] == [0.25, 0.5, 0.25, 1.0, 0.0, 0.0]
