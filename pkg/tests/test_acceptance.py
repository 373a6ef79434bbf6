"""Acceptance gate: every shipped claim that can be checked at desk scale,
one test per criterion, each printing a PASS/FAIL line.

Criteria 1-7 and 9 are oracle/property checks shared with the `verify` CLI
subcommand; 8 runs the full paired delay sweep on the default benchmark and
asserts the directional method orderings; 10 exercises the grid-search
harness over the full protocol grids.
"""

import numpy as np
import pytest

from guidedflow.harness import (
    DEFAULT_RHO_GRID,
    DEFAULT_SIGMA_GRID,
    RHO_GRID_HEADER,
    SIGMA_GRID_HEADER,
    ExperimentConfig,
    grid_search_rho,
    grid_search_sigma,
    run_sweep,
    summarize,
)
from guidedflow import verify


def report(criterion, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {criterion:02d} {name}: {status} {detail}", flush=True)
    assert passed, f"criterion {criterion} ({name}): {detail}"


def run_check(criterion, check):
    result = check()
    report(criterion, result.name, result.passed, result.detail)


def test_criterion_01_weight_table_exactness():
    run_check(1, verify.check_weight_table)


def test_criterion_02_sigma_unity_reduction():
    run_check(2, verify.check_sigma_unity_reduction)


def test_criterion_03_otr_property_suite():
    run_check(3, verify.check_otr_properties)


def test_criterion_04_vjp_agreement():
    run_check(4, verify.check_vjp_agreement)


def test_criterion_05_euler_convergence():
    run_check(5, verify.check_euler_convergence)


def test_criterion_06_velocity_field_oracle():
    run_check(6, verify.check_velocity_mc_oracle)


def test_criterion_07_aggregation_crosscheck():
    run_check(7, verify.check_aggregation_crosscheck)


@pytest.mark.slow
def test_criterion_08_directional_benchmark_trends():
    config = ExperimentConfig(
        methods=("naive", "rtc", "potr"),
        delays=(1, 2, 3, 4, 5),
        episodes_per_cell=50,
        output_dir="unused",
    )
    result = run_sweep(config, write=False)
    methods = result.summary["methods"]
    l2 = {m: methods[m]["l2_mean"] for m in ("naive", "rtc", "potr")}
    jerk = {m: methods[m]["max_jerk"] for m in ("naive", "potr")}

    bimodal_rows = [r for r in result.rows if r.suite == "bimodal"]
    bimodal_summary = summarize(bimodal_rows, {"bimodal": 1})
    succ = {m: bimodal_summary["methods"][m]["success"] for m in ("naive", "potr")}

    ok_a = l2["potr"] < l2["rtc"] < l2["naive"]
    ok_b = jerk["potr"] < jerk["naive"]
    ok_c = succ["potr"] >= succ["naive"] - 0.02
    detail = (
        f"l2_mean potr {l2['potr']:.4f} < rtc {l2['rtc']:.4f} < naive {l2['naive']:.4f}; "
        f"max_jerk potr {jerk['potr']:.3f} < naive {jerk['naive']:.3f}; "
        f"bimodal success potr {succ['potr']:.3f} vs naive {succ['naive']:.3f}"
    )
    report(8, "directional-benchmark-trends", ok_a and ok_b and ok_c, detail)


def test_criterion_09_equivalence_degenerations():
    run_check(9, verify.check_equivalences)


@pytest.mark.slow
def test_criterion_10_grid_search_harness(tmp_path):
    config = ExperimentConfig(episodes_per_cell=50, output_dir=str(tmp_path))
    sigma_table = grid_search_sigma(config, grid=DEFAULT_SIGMA_GRID)
    rho_table = grid_search_rho(config, grid=DEFAULT_RHO_GRID)

    sigma_ok = (
        [list(row.keys()) for row in sigma_table] == [SIGMA_GRID_HEADER] * 6
        and [row["sigma_d"] for row in sigma_table] == list(DEFAULT_SIGMA_GRID)
        and (tmp_path / "grid_sigma.csv").read_text().splitlines()[0]
        == ",".join(SIGMA_GRID_HEADER)
    )
    rho_ok = (
        [list(row.keys()) for row in rho_table] == [RHO_GRID_HEADER] * 5
        and [row["rho"] for row in rho_table] == list(DEFAULT_RHO_GRID)
        and (tmp_path / "grid_rho.csv").read_text().splitlines()[0]
        == ",".join(RHO_GRID_HEADER)
    )
    values_ok = all(
        np.isfinite([row["success"], row["l2_m"], row["l2_M"], row["acc"], row["jerk"]]).all()
        for row in sigma_table + rho_table
    )
    report(
        10,
        "grid-search-harness",
        sigma_ok and rho_ok and values_ok,
        f"{len(sigma_table)} sigma rows, {len(rho_table)} rho rows, schemas exact",
    )
