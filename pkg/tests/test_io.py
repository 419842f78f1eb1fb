import json
import os

import numpy as np
import pytest

from helios.domain import InvestmentPlan
from helios.io import (ParseError, SchemaError, ValidationError,
                       instance_from_document, instance_to_document,
                       load_capacity_factors_csv, load_dataset, load_instance,
                       load_plan, load_scenarios, save_instance, save_plan,
                       save_scenarios, write_capacity_factors_csv)

from conftest import build_micro, micro_dataset, micro_stats


def test_instance_round_trips_through_directory(tmp_path, micro):
    save_instance(str(tmp_path), micro)
    back = load_instance(str(tmp_path))
    assert back.costs.budget == micro.costs.budget
    assert back.network.site_names == micro.network.site_names
    np.testing.assert_allclose(back.demand.values, micro.demand.values)
    np.testing.assert_allclose(back.scenarios.centroids,
                               micro.scenarios.centroids)
    np.testing.assert_allclose(back.tariffs.price_nareva,
                               micro.tariffs.price_nareva)


def test_budget_override_on_load(tmp_path, micro):
    save_instance(str(tmp_path), micro)
    back = load_instance(str(tmp_path), {"budget": 777.0})
    assert back.costs.budget == 777.0


def test_document_round_trip_preserves_arcs(micro):
    doc = instance_to_document(micro)
    back = instance_from_document(doc, demand=micro.demand)
    arc = back.network.arcs[0]
    assert (arc.src, arc.dst) == ("mine-x", "plant-y")
    assert arc.efficiency == 1.0
    np.testing.assert_allclose(arc.rent_price,
                               micro.network.arcs[0].rent_price)


def test_missing_document_key_names_its_path(micro):
    doc = instance_to_document(micro)
    del doc["costs"]["battery_cost"]
    with pytest.raises(SchemaError) as err:
        instance_from_document(doc, demand=micro.demand)
    assert "battery_cost" in str(err.value)


def test_malformed_json_reports_file_and_line(tmp_path, micro):
    save_instance(str(tmp_path), micro)
    path = tmp_path / "instance.json"
    path.write_text(path.read_text()[:-40])
    with pytest.raises(ParseError) as err:
        load_instance(str(tmp_path))
    assert "instance.json" in str(err.value)


def test_loading_an_invalid_instance_raises(tmp_path, micro):
    micro.costs.battery_cost = np.array([-1.0])
    save_instance(str(tmp_path), micro)
    with pytest.raises(ValidationError) as err:
        load_instance(str(tmp_path))
    assert "battery_cost" in str(err.value)


def test_capacity_factor_csv_round_trip(tmp_path):
    ds = micro_dataset(days_per_month=2)
    path = str(tmp_path / "cf.csv")
    write_capacity_factors_csv(path, ds)
    back = load_capacity_factors_csv(path)
    assert back.dates == ds.dates
    assert back.site_names == ds.site_names
    np.testing.assert_array_equal(back.months, ds.months)
    np.testing.assert_allclose(back.values, ds.values, atol=0)


def test_dataset_loads_from_directory_or_file(tmp_path):
    ds = micro_dataset(days_per_month=2)
    save_dir = tmp_path / "inst"
    os.makedirs(save_dir)
    write_capacity_factors_csv(str(save_dir / "capacity_factors.csv"), ds)
    assert load_dataset(str(save_dir)).n_days == ds.n_days
    assert load_dataset(str(save_dir / "capacity_factors.csv")).n_days == ds.n_days


def test_capacity_factor_csv_rejects_bad_cells(tmp_path):
    path = tmp_path / "cf.csv"
    path.write_text("date,hour,site,value\n2023-01-01,25,mine-x,0.5\n")
    with pytest.raises(ParseError) as err:
        load_capacity_factors_csv(str(path))
    assert "hour 25" in str(err.value)

    path.write_text("date,hour,site,value\n2023-01-01,1,mine-x,cloudy\n")
    with pytest.raises(ParseError):
        load_capacity_factors_csv(str(path))


def test_capacity_factor_csv_requires_complete_days(tmp_path):
    path = tmp_path / "cf.csv"
    path.write_text("date,hour,site,value\n2023-01-01,1,mine-x,0.5\n")
    with pytest.raises(SchemaError) as err:
        load_capacity_factors_csv(str(path))
    assert "1 of 24 hours" in str(err.value)


def test_scenarios_round_trip_with_statistics(tmp_path, micro):
    stats = micro_stats()
    path = str(tmp_path / "scenarios.json")
    save_scenarios(path, micro.scenarios, stats)
    scen, back_stats = load_scenarios(path)
    np.testing.assert_allclose(scen.centroids, micro.scenarios.centroids)
    np.testing.assert_allclose(scen.weights, micro.scenarios.weights)
    assert scen.site_names == ["mine-x"]
    np.testing.assert_allclose(back_stats.daily_sigma, stats.daily_sigma)

    save_scenarios(path, micro.scenarios)
    _, none_stats = load_scenarios(path)
    assert none_stats is None


def test_plan_round_trip_keeps_meta_out_of_the_plan(tmp_path):
    plan = InvestmentPlan(battery_kwh=np.array([[1.5], [0.0]]),
                          solar_kw=np.array([[2.5], [0.0]]))
    path = str(tmp_path / "plan.json")
    save_plan(path, plan, meta={"gamma": [0, 0, 0]})
    back = load_plan(path)
    np.testing.assert_allclose(back.battery_kwh, plan.battery_kwh)
    np.testing.assert_allclose(back.solar_kw, plan.solar_kw)
    assert json.load(open(path))["meta"] == {"gamma": [0, 0, 0]}


def test_plan_without_required_key_is_rejected(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(json.dumps({"battery_kwh": [[1.0]]}))
    with pytest.raises(SchemaError) as err:
        load_plan(str(path))
    assert "solar_kw" in str(err.value)
