"""Shared fixtures.

``phantom_suite`` runs the full 50-pair pipeline (synth -> register with all
four methods -> evaluate -> maps) once per session; the acceptance criteria
and the registration ordering tests all read from it.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from fetalign.cli import (PipelineConfig, build_maps, evaluate_cohort,
                          register_cohort, synth_cohort)
from fetalign.registration import RefineConfig, RegistrationMethod

SUITE_METHODS = [RegistrationMethod.ELLIPSE,
                 RegistrationMethod.ELLIPSE_AFFINE,
                 RegistrationMethod.AFFINE,
                 RegistrationMethod.AFFINE_INIT]
INTERIOR_STRUCTURES = ("thalami", "cerebellum", "cavum", "sylvius")


@dataclass
class SuiteResult:
    cohort_dir: Path
    reg_dir: Path
    eval_dir: Path
    maps_dir: Path
    metrics: dict = field(default_factory=dict)   # (method, structure, metric) -> {label: value}
    comparisons: dict = field(default_factory=dict)  # (a, b, structure, metric) -> (p, stars)
    elapsed: float = 0.0

    def per_pair(self, method: str, structure: str, metric: str) -> dict:
        return self.metrics[(method, structure, metric)]

    def median(self, method: str, structure: str, metric: str) -> float:
        return float(np.median(list(self.per_pair(method, structure, metric).values())))


@pytest.fixture(scope="session")
def phantom_suite(tmp_path_factory) -> SuiteResult:
    root = tmp_path_factory.mktemp("suite")
    cohort_dir = root / "cohort"
    reg_dir = root / "reg"
    eval_dir = root / "eval"
    maps_dir = root / "maps"

    t0 = time.perf_counter()
    synth_cohort(cohort_dir, 51, 400, 270, seed=202, speckle=0.1,
                 reference_id=10, max_rotation_deg=15.0,
                 scale_range=(0.9, 1.1), max_shift=(40.0, 20.0),
                 brain_offset_sigma=6.0)
    cfg = PipelineConfig(input=cohort_dir, output=reg_dir,
                         reference_id="10", methods=list(SUITE_METHODS),
                         refine=RefineConfig(max_iters=60,
                                             convergence_tol=1e-5))
    register_cohort(cfg)
    eval_cfg = PipelineConfig(input=cohort_dir, output=eval_dir,
                              reference_id="10", methods=list(SUITE_METHODS))
    evaluate_cohort(eval_cfg, reg_dir)
    maps_cfg = PipelineConfig(input=reg_dir, output=maps_dir,
                              map_method="ellipse_affine")
    build_maps(maps_cfg)
    elapsed = time.perf_counter() - t0

    result = SuiteResult(cohort_dir=cohort_dir, reg_dir=reg_dir,
                         eval_dir=eval_dir, maps_dir=maps_dir,
                         elapsed=elapsed)
    with open(eval_dir / "metrics.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["structure"], row["metric"])
            label = row["subject_id"] if row["scan_index"] == "0" \
                else f"{row['subject_id']}.{row['scan_index']}"
            result.metrics.setdefault(key, {})[label] = float(row["value"])
    with open(eval_dir / "comparisons.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["method_a"], row["method_b"],
                   row["structure"], row["metric"])
            p = float(row["p_value"]) if row["p_value"] else float("nan")
            result.comparisons[key] = (p, row["stars"])
    return result
