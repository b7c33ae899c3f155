"""Emission rate tables, link mass conversion, and aggregation."""

import numpy as np
import pytest

from opmodenet.emissions import (
    POLLUTANTS,
    activity_veh_hr,
    aggregate,
    link_emissions,
    load_rates,
)
from opmodenet.errors import DomainError, ValidationError
from opmodenet.opmode import CANONICAL_BINS, N_BINS, OpModeDistribution


def uniform_dist():
    return OpModeDistribution(np.full(N_BINS, 1.0 / N_BINS), support_seconds=100)


def random_dist(rng):
    return OpModeDistribution(rng.dirichlet(np.ones(N_BINS)), support_seconds=100)


class TestLoadRates:
    def test_bundled_table_complete(self):
        table = load_rates()
        assert sorted(table.pollutants) == sorted(POLLUTANTS)
        for p in table.pollutants:
            assert table.rates[p].shape == (N_BINS,)
            assert (table.rates[p] >= 0).all()
        # idle emits less CO2 than the top power bin
        assert table.rate("CO2", 1) < table.rate("CO2", 40)

    def test_missing_pair_rejected(self, tmp_path):
        path = tmp_path / "rates.csv"
        rows = ["pollutant,bin_id,g_per_veh_hr"]
        rows += [f"CO,{b},1.0" for b in CANONICAL_BINS[:-1]]  # drop one bin
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(ValidationError):
            load_rates(path)

    def test_negative_rate_rejected(self, tmp_path):
        path = tmp_path / "rates.csv"
        rows = ["pollutant,bin_id,g_per_veh_hr"]
        rows += [f"CO,{b},1.0" for b in CANONICAL_BINS]
        rows[1] = "CO,0,-2.0"
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(ValidationError):
            load_rates(path)

    def test_duplicate_last_wins(self, tmp_path):
        path = tmp_path / "rates.csv"
        rows = ["pollutant,bin_id,g_per_veh_hr"]
        rows += [f"CO,{b},1.0" for b in CANONICAL_BINS]
        rows.append("CO,0,9.0")
        path.write_text("\n".join(rows) + "\n")
        assert load_rates(path).rate("CO", 0) == 9.0


@pytest.fixture(scope="module")
def rates():
    return load_rates()


class TestLinkEmissions:
    def test_expectation_formula(self, rates):
        dist = uniform_dist()
        out = link_emissions("L", dist, 2.0, rates)
        for p in rates.pollutants:
            assert out.grams_per_hr[p] == pytest.approx(2.0 * rates.rates[p].mean(), rel=1e-12)

    def test_linear_in_activity_and_distribution(self, rates):
        rng = np.random.default_rng(0)
        d1, d2 = random_dist(rng), random_dist(rng)
        lam = 0.3
        mix = OpModeDistribution(
            lam * d1.fractions + (1 - lam) * d2.fractions, support_seconds=100
        )
        e1 = link_emissions("L", d1, 1.0, rates).grams_per_hr
        e2 = link_emissions("L", d2, 1.0, rates).grams_per_hr
        em = link_emissions("L", mix, 1.0, rates).grams_per_hr
        for p in rates.pollutants:
            assert em[p] == pytest.approx(lam * e1[p] + (1 - lam) * e2[p], rel=1e-9)
        double = link_emissions("L", d1, 2.0, rates).grams_per_hr
        for p in rates.pollutants:
            assert double[p] == pytest.approx(2.0 * e1[p], rel=1e-12)

    def test_negative_activity_rejected(self, rates):
        with pytest.raises(DomainError):
            link_emissions("L", uniform_dist(), -1.0, rates)

    def test_activity_formula(self):
        # 600 veh/hr each spending 36 s -> 6 vehicle-hours per hour
        assert activity_veh_hr(600.0, 36.0) == pytest.approx(6.0, rel=1e-12)
        assert activity_veh_hr(0.0, 100.0) == 0.0


@pytest.fixture(scope="module")
def per_link(rates):
    return [
        link_emissions("A", uniform_dist(), 1.0, rates, town="north"),
        link_emissions("B", uniform_dist(), 2.0, rates, town="north"),
        link_emissions("C", uniform_dist(), 4.0, rates, town="south"),
        link_emissions("D", uniform_dist(), 8.0, rates, town=None),
    ]


class TestAggregate:
    def test_by_town(self, per_link):
        totals = aggregate(per_link, "town")
        assert set(totals) == {"north", "south", "unassigned"}
        for p in POLLUTANTS:
            assert totals["north"][p] == pytest.approx(
                per_link[0].grams_per_hr[p] + per_link[1].grams_per_hr[p], rel=1e-12
            )

    def test_region_total(self, per_link):
        region = aggregate(per_link, "region")["region"]
        towns = aggregate(per_link, "town")
        for p in POLLUTANTS:
            assert region[p] == pytest.approx(
                sum(t[p] for t in towns.values()), rel=1e-12
            )

    def test_unknown_grouping(self, per_link):
        with pytest.raises(DomainError):
            aggregate(per_link, "county")
