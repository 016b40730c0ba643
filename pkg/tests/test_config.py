#!/usr/bin/python3
import json
import os
import tempfile
import unittest

from specreg.config import DEFAULT_DELTA_GRID
from specreg.config import DataSpec
from specreg.config import apply_overrides
from specreg.config import config_from_dict
from specreg.config import load_config
from specreg.config import parse_delta_grid
from specreg.utils import ConfigError
from specreg.utils import TraceClassError


def base_doc(**fields):
    doc = {
        "experiment": "convergence_sweep",
        "operator": {"kind": "diagonal", "size": 16, "decay": 1.0},
        "paradigms": ["mse", "post", "adv(3/8)"],
    }
    doc.update(fields)
    return doc


class ConfigTestCase(unittest.TestCase):
    def assertField(self, field, doc, error=ConfigError):
        with self.assertRaises(error) as err:
            config_from_dict(doc)
        self.assertEqual(field, err.exception.field)
        self.assertTrue(str(err.exception).startswith(f"{field}: "))

    def test_defaults(self):
        cfg = config_from_dict(base_doc())
        self.assertEqual("convergence_sweep", cfg.experiment)
        self.assertEqual(DEFAULT_DELTA_GRID, cfg.delta_grid)
        self.assertEqual(DataSpec(), cfg.data)
        self.assertEqual("power0.5", cfg.training_noise.label)
        self.assertIsNone(cfg.data.profile)
        self.assertEqual(["white", "power0.5", "power4"], [r.label for r in cfg.test_noise])
        self.assertEqual((16,), cfg.sweep_dimensions)
        self.assertIsNone(cfg.seed)
        self.assertFalse(cfg.uniform_scaling)
        self.assertEqual(["mse", "post", "adv(3/8)"], cfg.to_dict()["paradigms"])

    def test_round_trip(self):
        cfg = config_from_dict(
            base_doc(
                dimensions=[8, 16, 32],
                data={"exponent": 3.0},
                training_noise={"family": "power_law", "exponent": 0.5},
                delta_grid=[0.5, 0.05],
                seed=11,
                uniform_scaling=True,
            )
        )
        self.assertEqual(cfg, config_from_dict(cfg.to_dict()))
        self.assertEqual((8, 16, 32), cfg.sweep_dimensions)

    def test_manifest_unwrap(self):
        cfg = config_from_dict(base_doc(seed=5))
        manifest = {"tool": "specreg", "config": cfg.to_dict(), "artifacts": {}}
        self.assertEqual(cfg, config_from_dict(manifest))

    def test_field_errors(self):
        self.assertField("delta_grid[1]", base_doc(delta_grid=[0.1, 0.1]))
        self.assertField("delta_grid[0]", base_doc(delta_grid=[-0.1]))
        self.assertField("delta_grid", base_doc(delta_grid=[]))
        self.assertField("data.exponent", base_doc(data={"exponent": 1.0}), TraceClassError)
        self.assertField("paradigms[1]", base_doc(paradigms=["mse", "adv(0)"]))
        self.assertField("paradigms[0]", base_doc(paradigms=["ridge"]))
        self.assertField("paradigms", base_doc(paradigms=[]))
        self.assertField("colour", base_doc(colour="red"))
        self.assertField("experiment", base_doc(experiment="stability_sweep"))
        self.assertField("operator", {"experiment": "fit_report", "paradigms": ["mse"]})
        self.assertField(
            "test_noise[1].family", base_doc(test_noise=["white", {"family": "pink"}])
        )
        self.assertField("seed", base_doc(seed=-1))
        self.assertField("workers", base_doc(workers=0))
        self.assertField("uniform_scaling", base_doc(uniform_scaling="yes"))
        self.assertField("dimensions[0]", base_doc(dimensions=[0]))

    def test_data_profile(self):
        cfg = config_from_dict(base_doc(data={"profile": "pi.csv"}), base_dir="/data")
        self.assertEqual(os.path.join("/data", "pi.csv"), cfg.data.profile)
        self.assertEqual(cfg, config_from_dict(cfg.to_dict()))
        cfg = config_from_dict(base_doc(data={"profile": "/abs/pi.csv"}), base_dir="/data")
        self.assertEqual("/abs/pi.csv", cfg.data.profile)
        relative = config_from_dict(base_doc(data={"profile": "pi.csv"}))
        self.assertEqual("pi.csv", relative.data.profile)
        self.assertField("data.profile", base_doc(data={"profile": 3}))
        self.assertField("data.profile", base_doc(data={"profile": "a.csv", "corpus": "b.npy"}))

    def test_trace_class_message(self):
        with self.assertRaises(TraceClassError) as err:
            config_from_dict(base_doc(data={"exponent": 0.5}))
        self.assertIn("trace-class violated", str(err.exception))

    def test_recon_grid(self):
        radon = {"kind": "radon2d", "side": 16, "angles": 12}
        cfg = config_from_dict(base_doc(experiment="recon_grid", operator=radon))
        self.assertEqual(16, cfg.operator.side)
        self.assertField("operator.kind", base_doc(experiment="recon_grid"))
        self.assertField(
            "operator.side",
            base_doc(experiment="recon_grid", operator=dict(radon, side=48)),
        )
        self.assertField("operator.side", base_doc(operator=dict(radon, side=128)))

    def test_delta_grid(self):
        self.assertEqual((1.0, 0.5), parse_delta_grid([1, 0.5]))
        with self.assertRaises(ConfigError):
            parse_delta_grid("0.1")

    def test_overrides(self):
        cfg = config_from_dict(base_doc(seed=3))
        changed = apply_overrides(
            cfg,
            experiment="fit_report",
            seed=9,
            output_dir="elsewhere",
            uniform_scaling=True,
            workers=4,
        )
        self.assertEqual("fit_report", changed.experiment)
        self.assertEqual(9, changed.seed)
        self.assertEqual("elsewhere", changed.output_dir)
        self.assertTrue(changed.uniform_scaling)
        self.assertEqual(4, changed.workers)
        self.assertEqual(cfg, apply_overrides(cfg))
        with self.assertRaises(ConfigError):
            apply_overrides(cfg, experiment="recon_grid")
        with self.assertRaises(ConfigError):
            apply_overrides(cfg, seed="abc")

    def test_load_config(self):
        with tempfile.TemporaryDirectory() as tempdir:
            path = os.path.join(tempdir, "config.json")
            with open(path, "w", encoding="utf-8") as outfile:
                json.dump(base_doc(seed=2), outfile)
            self.assertEqual(2, load_config(path).seed)
            with open(path, "w", encoding="utf-8") as outfile:
                outfile.write("{not json")
            with self.assertRaises(ConfigError) as err:
                load_config(path)
            self.assertEqual("config", err.exception.field)
            with self.assertRaises(OSError):
                load_config(os.path.join(tempdir, "missing.json"))

    def test_example_configs(self):
        root = os.path.dirname(os.path.dirname(os.path.realpath(__file__)))
        configs = os.path.join(root, "configs")
        names = sorted(name for name in os.listdir(configs) if name.endswith(".json"))
        self.assertEqual(4, len(names))
        for name in names:
            cfg = load_config(os.path.join(configs, name))
            self.assertEqual(name[: -len(".json")], cfg.experiment.split("_sweep")[0])
        continuity = load_config(os.path.join(configs, "continuity.json"))
        self.assertEqual(os.path.join(configs, "harmonic_data.csv"), continuity.data.profile)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
