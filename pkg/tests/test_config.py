import json
import tempfile
import unittest
from pathlib import Path

from roughcheb.config import (
    ENV_ROUGHCHEB_PROFILE,
    ENV_ROUGHCHEB_THREADS,
    ExperimentConfig,
    derive_seed,
    experiment_config_from_dict,
    load_experiment_config,
    resolve_profile,
)
from roughcheb.errors import InvalidArgument


class TestResolveProfile(unittest.TestCase):
    def test_priority(self) -> None:
        env = {ENV_ROUGHCHEB_PROFILE: "full"}
        self.assertEqual(resolve_profile(env={}), "desk")
        self.assertEqual(resolve_profile(env=env), "full")
        self.assertEqual(resolve_profile(from_file="desk", env=env), "desk")
        self.assertEqual(resolve_profile(explicit="full", from_file="desk", env={}), "full")

    def test_unknown_profile(self) -> None:
        with self.assertRaises(InvalidArgument):
            resolve_profile(env={ENV_ROUGHCHEB_PROFILE: "huge"})


class TestExperimentConfig(unittest.TestCase):
    def test_profile_defaults(self) -> None:
        desk = experiment_config_from_dict({}, env={})
        self.assertEqual(desk.profile, "desk")
        self.assertEqual(desk.n_surfaces, 50)
        self.assertEqual(desk.mc.paths, 20_000)
        full = experiment_config_from_dict({}, profile="full", env={})
        self.assertEqual(full.n_surfaces, 1_000)
        self.assertEqual(full.mc.paths, 60_000)

    def test_file_values_override_profile(self) -> None:
        cfg = experiment_config_from_dict(
            {"n_surfaces": 3, "mc": {"time_steps_per_year": 50}, "maturities": [0.5, 1.0]}, env={}
        )
        self.assertEqual(cfg.n_surfaces, 3)
        self.assertEqual(cfg.mc.paths, 20_000)
        self.assertEqual(cfg.mc.time_steps_per_year, 50)
        self.assertEqual(cfg.maturities, (0.5, 1.0))

    def test_cli_overrides(self) -> None:
        cfg = experiment_config_from_dict({"seed": 1}, seed=9, out_dir="/tmp/x", env={ENV_ROUGHCHEB_THREADS: "4"})
        self.assertEqual(cfg.seed, 9)
        self.assertEqual(cfg.out_dir, "/tmp/x")
        self.assertEqual(cfg.threads, 4)
        self.assertEqual(cfg.pricer_mc().workers, 4)
        self.assertEqual(cfg.pricer_mc().rng_seed, derive_seed(9, "pricer"))

    def test_rejects_bad_input(self) -> None:
        with self.assertRaises(InvalidArgument):
            experiment_config_from_dict({"nsurfaces": 3}, env={})
        with self.assertRaises(InvalidArgument):
            experiment_config_from_dict({"mc": {"pathz": 3}}, env={})
        with self.assertRaises(InvalidArgument):
            experiment_config_from_dict({"mc": 3}, env={})
        with self.assertRaises(InvalidArgument):
            experiment_config_from_dict({"eta_range": [2.0, 1.0]}, env={})
        with self.assertRaises(InvalidArgument):
            experiment_config_from_dict({}, env={ENV_ROUGHCHEB_THREADS: "zero"})
        with self.assertRaises(InvalidArgument):
            experiment_config_from_dict({"strikes": [0.5, 1.0]}, env={})

    def test_grids(self) -> None:
        cfg = ExperimentConfig()
        self.assertEqual(cfg.theta_dim, 4)
        self.assertIsNone(cfg.pillar_times)
        self.assertEqual(cfg.direct_grid().shape, (5, 5, 3, 4, 6, 8))
        self.assertEqual(cfg.direct_grid().total_points, 14_400)
        self.assertEqual(cfg.tt_grid().total_points, 7 ** 6)

        term = ExperimentConfig(xi_pillars=8)
        self.assertEqual(term.theta_dim, 11)
        self.assertEqual(term.tt_grid().total_points, 96_889_010_407)
        self.assertEqual(term.pillar_times[-1], 2.0)
        self.assertEqual(len(term.pillar_times), 8)
        with self.assertRaises(InvalidArgument):
            term.direct_grid()

    def test_load_from_file(self) -> None:
        with tempfile.TemporaryDirectory() as td:
            p = Path(td) / "c.json"
            p.write_text(json.dumps({"profile": "full", "tt_points": 5}), encoding="utf-8")
            cfg = load_experiment_config(p, env={})
            self.assertEqual(cfg.profile, "full")
            self.assertEqual(cfg.tt_points, 5)
            self.assertEqual(load_experiment_config(p, profile="desk", env={}).profile, "desk")
        self.assertEqual(load_experiment_config(None, env={}).profile, "desk")


class TestDeriveSeed(unittest.TestCase):
    def test_streams_are_distinct_and_stable(self) -> None:
        seeds = {s: derive_seed(7, s) for s in ("surfaces", "pricer", "completion", "calibration", "surface_pricer")}
        self.assertEqual(len(set(seeds.values())), 5)
        self.assertEqual(derive_seed(7, "pricer"), seeds["pricer"])
        self.assertNotEqual(derive_seed(8, "pricer"), seeds["pricer"])
        with self.assertRaises(InvalidArgument):
            derive_seed(7, "noise")

    def test_surface_pricer_has_its_own_stream(self) -> None:
        cfg = experiment_config_from_dict({"seed": 3}, env={})
        self.assertEqual(cfg.pricer_mc("surface_pricer").rng_seed, derive_seed(3, "surface_pricer"))
        self.assertNotEqual(cfg.pricer_mc("surface_pricer").rng_seed, cfg.pricer_mc().rng_seed)
        self.assertEqual(cfg.pricer_mc("surface_pricer").paths, cfg.pricer_mc().paths)


if __name__ == "__main__":
    unittest.main()
