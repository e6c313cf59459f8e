"""Strict-schema job config: defaults, rejection, and round trips."""

import json

import numpy as np
import pytest

from ptyclean.jobconfig import (
    JobConfigError,
    load_job_config,
    parse_job_config,
)
from ptyclean.npyio import npy_write


def minimal_doc():
    return {
        "output_dir": "run",
        "phantom": {"kind": "textured_single_slice", "size": 64},
        "probe": {"diameter": 16.0, "support": 32},
        "grid": {"spacing": 8.0},
    }


class TestDefaults:
    def test_minimal_config_parses(self):
        cfg = parse_job_config(minimal_doc(), base_dir="/tmp")
        assert cfg.phantom.size == 64
        assert cfg.probe.support == 32
        assert cfg.solver.algorithm == "rpie"
        assert cfg.editor.kind == "identity"
        assert cfg.use_pnp is False

    def test_grid_extent_defaults_to_phantom_size(self):
        cfg = parse_job_config(minimal_doc(), base_dir="/tmp")
        assert cfg.grid.extent == 64.0

    def test_grid_margin_defaults_to_probe_support(self):
        cfg = parse_job_config(minimal_doc(), base_dir="/tmp")
        assert cfg.grid.margin == 32.0

    def test_explicit_grid_geometry_wins(self):
        doc = minimal_doc()
        doc["grid"].update(extent=60.0, margin=40.0)
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert (cfg.grid.extent, cfg.grid.margin) == (60.0, 40.0)

    def test_output_dir_resolved_against_base_dir(self):
        cfg = parse_job_config(minimal_doc(), base_dir="/tmp/jobs")
        assert cfg.output_dir == "/tmp/jobs/run"

    def test_absolute_output_dir_kept(self):
        doc = minimal_doc()
        doc["output_dir"] = "/data/out"
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.output_dir == "/data/out"

    def test_default_wavelength_is_ten_kev(self):
        cfg = parse_job_config(minimal_doc(), base_dir="/tmp")
        assert cfg.probe.wavelength == pytest.approx(0.123984193)

    def test_energy_kev_converted(self):
        doc = minimal_doc()
        doc["probe"]["energy_kev"] = 12.0
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.probe.wavelength == pytest.approx(1.23984193 / 12.0)

    def test_wavelength_taken_verbatim(self):
        doc = minimal_doc()
        doc["probe"]["wavelength"] = 0.2
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.probe.wavelength == 0.2

    def test_both_energy_and_wavelength_rejected(self):
        doc = minimal_doc()
        doc["probe"].update(wavelength=0.2, energy_kev=10.0)
        with pytest.raises(JobConfigError, match="either wavelength or energy_kev"):
            parse_job_config(doc, base_dir="/tmp")


class TestRejection:
    def test_unknown_top_level_key(self):
        doc = minimal_doc()
        doc["bogus"] = 1
        with pytest.raises(JobConfigError, match="unknown key.*config.*'bogus'"):
            parse_job_config(doc, base_dir="/tmp")

    @pytest.mark.parametrize("section", [
        "phantom", "probe", "grid", "data", "solver", "pnp", "metrics",
    ])
    def test_unknown_key_in_each_section(self, section):
        doc = minimal_doc()
        doc.setdefault(section, {})["zz_unknown"] = 1
        with pytest.raises(JobConfigError,
                           match=f"unknown key.*{section}.*'zz_unknown'"):
            parse_job_config(doc, base_dir="/tmp")

    def test_unknown_key_in_editor_request(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "identity", "request": {"zz": 1}}
        with pytest.raises(JobConfigError, match=r"editor\.request.*'zz'"):
            parse_job_config(doc, base_dir="/tmp")

    def test_unknown_editor_parameter(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "spectral_notch", "parameters": {"mask": [1]}}
        with pytest.raises(JobConfigError, match=r"editor\.parameters.*'mask'"):
            parse_job_config(doc, base_dir="/tmp")

    @pytest.mark.parametrize("key", ["output_dir", "phantom", "probe", "grid"])
    def test_missing_required_top_level(self, key):
        doc = minimal_doc()
        del doc[key]
        with pytest.raises(JobConfigError, match=f"missing required key.*{key}"):
            parse_job_config(doc, base_dir="/tmp")

    def test_missing_required_nested_key(self):
        doc = minimal_doc()
        del doc["probe"]["diameter"]
        with pytest.raises(JobConfigError,
                           match=r"missing required key probe\.diameter"):
            parse_job_config(doc, base_dir="/tmp")

    @pytest.mark.parametrize("section,key,value,hint", [
        ("solver", "n_iterations", True, "integer"),
        ("solver", "n_iterations", 3.5, "integer"),
        ("probe", "diameter", "wide", "number"),
        ("phantom", "kind", 7, "string"),
        ("solver", "update_probe", 1, "boolean"),
        ("phantom", "phase_range", [0.0, 0.5, 1.0], "two-element"),
    ])
    def test_wrong_json_types(self, section, key, value, hint):
        doc = minimal_doc()
        doc.setdefault(section, {})[key] = value
        with pytest.raises(JobConfigError, match=hint):
            parse_job_config(doc, base_dir="/tmp")

    def test_section_must_be_object(self):
        doc = minimal_doc()
        doc["solver"] = [1, 2]
        with pytest.raises(JobConfigError, match="solver must be a JSON object"):
            parse_job_config(doc, base_dir="/tmp")

    @pytest.mark.parametrize("section,key,value,hint", [
        ("probe", "diameter", -1.0, "probe"),
        ("probe", "magnify", 0.0, "probe"),
        ("grid", "spacing", -2.0, "grid"),
        ("grid", "kind", "hex", "grid"),
        ("pnp", "gamma", 1.5, "pnp"),
        ("solver", "algorithm", "sgd", "solver"),
        ("phantom", "kind", "blobs", "phantom"),
        ("data", "photons_per_pattern", 0, "data"),
        ("metrics", "grid_period", 1.0, "metrics"),
    ])
    def test_domain_violations_name_their_section(self, section, key, value, hint):
        doc = minimal_doc()
        doc.setdefault(section, {})[key] = value
        with pytest.raises(JobConfigError, match=hint):
            parse_job_config(doc, base_dir="/tmp")

    def test_margin_beyond_extent(self):
        doc = minimal_doc()
        doc["grid"]["margin"] = 100.0
        with pytest.raises(JobConfigError, match="margin.*exceeds.*extent"):
            parse_job_config(doc, base_dir="/tmp")


class TestFileReferences:
    def test_phantom_files_must_exist(self, tmp_path):
        doc = minimal_doc()
        doc["phantom"].update(kind="from_files", files=["truth0.npy"])
        with pytest.raises(JobConfigError, match="missing file.*truth0"):
            parse_job_config(doc, base_dir=str(tmp_path))

    def test_phantom_files_resolved_relative(self, tmp_path):
        npy_write(tmp_path / "truth0.npy",
                  np.zeros((64, 64), dtype=np.float64))
        doc = minimal_doc()
        doc["phantom"].update(kind="from_files", files=["truth0.npy"])
        cfg = parse_job_config(doc, base_dir=str(tmp_path))
        assert cfg.phantom.files == (str(tmp_path / "truth0.npy"),)

    def test_mask_path_must_exist(self, tmp_path):
        doc = minimal_doc()
        doc["editor"] = {"kind": "mask_oracle",
                         "parameters": {"mask_path": "mask.npy"}}
        with pytest.raises(JobConfigError, match="missing file.*mask"):
            parse_job_config(doc, base_dir=str(tmp_path))

    def test_external_command_on_path_accepted(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "external",
                         "parameters": {"command": ["true"]}}
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.editor.parameters["command"] == ["true"]

    def test_external_command_missing_program(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "external",
                         "parameters": {"command": ["zz-no-such-prog"]}}
        with pytest.raises(JobConfigError, match="neither an existing file"):
            parse_job_config(doc, base_dir="/tmp")

    def test_external_command_must_be_string_list(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "external", "parameters": {"command": "true"}}
        with pytest.raises(JobConfigError, match="non-empty array of"):
            parse_job_config(doc, base_dir="/tmp")


class TestEditorResolution:
    def test_notch_period_defaults_to_scan_spacing(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "spectral_notch"}
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.editor.parameters["grid_period_y"] == 8.0
        assert cfg.editor.parameters["grid_period_x"] == 8.0
        assert cfg.editor.parameters["neighborhood"] == 5

    def test_explicit_notch_period_wins(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "spectral_notch",
                         "parameters": {"grid_period_y": 12.0}}
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.editor.parameters["grid_period_y"] == 12.0
        assert cfg.editor.parameters["grid_period_x"] == 8.0

    def test_request_fields_reach_editrequest(self):
        doc = minimal_doc()
        doc["editor"] = {"kind": "identity",
                         "request": {"prompt": "remove grid", "seed": 5,
                                     "value_min": -0.5, "value_max": 0.5}}
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.editor.request.prompt == "remove grid"
        assert cfg.editor.request.seed == 5
        assert cfg.editor.request.guidance_scale == 5.0

    def test_stats_slices_list(self):
        doc = minimal_doc()
        doc["pnp"] = {"stats_slices": [0, 1]}
        cfg = parse_job_config(doc, base_dir="/tmp")
        assert cfg.pnp.stats_slices == (0, 1)

    def test_stats_slices_must_be_list(self):
        doc = minimal_doc()
        doc["pnp"] = {"stats_slices": 0}
        with pytest.raises(JobConfigError, match="stats_slices must be an array"):
            parse_job_config(doc, base_dir="/tmp")


class TestRoundTrip:
    def test_as_dict_reparses_equal(self):
        doc = minimal_doc()
        doc["pnp"] = {"tau": 1e-3, "gamma": 0.7, "n_inner": 5, "n_outer": 2}
        doc["editor"] = {"kind": "spectral_notch"}
        doc["use_pnp"] = True
        cfg = parse_job_config(doc, base_dir="/tmp")
        resolved = cfg.as_dict()
        again = parse_job_config(json.loads(json.dumps(resolved)),
                                 base_dir="/somewhere/else")
        assert again.as_dict() == resolved

    def test_resolved_document_is_json_serializable(self):
        cfg = parse_job_config(minimal_doc(), base_dir="/tmp")
        text = json.dumps(cfg.as_dict(), sort_keys=True)
        assert '"use_pnp": false' in text

    def test_all_seeds_present_in_resolved_document(self):
        resolved = parse_job_config(minimal_doc(), base_dir="/tmp").as_dict()
        assert resolved["phantom"]["seed"] == 0
        assert resolved["probe"]["seed"] == 0
        assert resolved["grid"]["seed"] == 0
        assert resolved["data"]["seed"] == 0
        assert resolved["solver"]["rng_seed"] == 0
        assert resolved["editor"]["request"]["seed"] == 0


class TestLoadFile:
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "job.json"
        path.write_text(json.dumps(minimal_doc()))
        cfg = load_job_config(path)
        assert cfg.output_dir == str(tmp_path / "run")

    def test_missing_file(self, tmp_path):
        with pytest.raises(JobConfigError, match="config file not found"):
            load_job_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(JobConfigError, match="not valid JSON"):
            load_job_config(path)

    def test_manifest_file_round_trip(self, tmp_path):
        cfg = parse_job_config(minimal_doc(), base_dir=str(tmp_path))
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps(cfg.as_dict()))
        assert load_job_config(manifest).as_dict() == cfg.as_dict()
