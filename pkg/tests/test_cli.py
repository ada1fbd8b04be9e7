import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest import mock

from roughcheb import cli
from roughcheb.errors import CompletionFailure, SimulationFailure
from roughcheb.models import SurfaceSpec, VolSurface


def smile(theta, t: float, k: float) -> float:
    xi, eta, rho, hurst = theta
    return 0.1 + xi + 0.01 * eta * (1.0 - k) + 0.05 * rho * (k - 1.0) ** 2 + 0.02 * hurst * t


class StubPricer:
    def __init__(self, spec: SurfaceSpec) -> None:
        self.spec = spec

    def __call__(self, theta) -> VolSurface:
        q = [[smile(list(theta), t, k) for k in self.spec.strikes] for t in self.spec.maturities]
        return VolSurface(self.spec, q)


def stub_pricer(cfg, spec, workers=None, stream="pricer") -> StubPricer:
    return StubPricer(spec)


def failing_pricer(cfg, spec, workers=None, stream="pricer"):
    def price(theta):
        raise SimulationFailure("non-finite log-prices")

    return price


SMALL_CONFIG = {
    "direct_counts": [3, 3, 3, 3, 3, 3],
    "n_surfaces": 2,
    "maturities": [0.5, 1.0],
    "strikes": [0.9, 1.0, 1.1],
    "benchmark_surrogate_evals": 20,
    "benchmark_pricer_calls": 2,
}


def _clean_env():
    env = {k: v for k, v in os.environ.items() if not k.startswith("ROUGHCHEB_")}
    return mock.patch.dict(os.environ, env, clear=True)


class TestCli(unittest.TestCase):
    def setUp(self) -> None:
        self._td = tempfile.TemporaryDirectory()
        self.root = Path(self._td.name)
        self.config = self.root / "config.json"
        self.config.write_text(json.dumps(SMALL_CONFIG), encoding="utf-8")
        env = _clean_env()
        env.start()
        self.addCleanup(env.stop)

    def tearDown(self) -> None:
        self._td.cleanup()

    def run_cli(self, *args: str, out_dir: str = "run"):
        out, err = io.StringIO(), io.StringIO()
        argv = ["-q", "--config", str(self.config), "--out-dir", str(self.root / out_dir), *args]
        with redirect_stdout(out), redirect_stderr(err):
            code = cli.main(argv)
        return code, out.getvalue(), err.getvalue()

    def test_no_command_prints_help(self) -> None:
        with redirect_stdout(io.StringIO()) as out:
            self.assertEqual(cli.main(["-q"]), cli.EXIT_INVALID)
        self.assertIn("generate-surfaces", out.getvalue())

    def test_version(self) -> None:
        with redirect_stdout(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                cli.main(["--version"])
        self.assertEqual(ctx.exception.code, 0)

    def test_info(self) -> None:
        code, out, _ = self.run_cli("info")
        self.assertEqual(code, cli.EXIT_OK)
        data = json.loads(out)
        self.assertEqual(data["direct_grid_size"], 729)
        self.assertEqual(data["tt_grid_size"], 7 ** 6)

    def test_bad_config_is_invalid_argument(self) -> None:
        self.config.write_text(json.dumps({"n_surface": 2}), encoding="utf-8")
        code, _, err = self.run_cli("info")
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn("n_surface", err)

    def test_missing_tensor(self) -> None:
        code, _, err = self.run_cli("assess-accuracy")
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn("build-direct", err)

    def test_direct_build_refuses_term_structure(self) -> None:
        self.config.write_text(json.dumps({"xi_pillars": 2}), encoding="utf-8")
        code, _, err = self.run_cli("build-direct")
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn("build-tt", err)

    @mock.patch("roughcheb.harness.make_pricer", side_effect=failing_pricer)
    def test_pricer_failure_is_numerical(self, _make) -> None:
        code, _, err = self.run_cli("build-direct")
        self.assertEqual(code, cli.EXIT_NUMERICAL)
        self.assertIn("non-finite", err)

    @mock.patch("roughcheb.cli.make_pricer", side_effect=stub_pricer)
    @mock.patch("roughcheb.harness.make_pricer", side_effect=stub_pricer)
    def test_pipeline(self, _harness_make, _cli_make) -> None:
        run = self.root / "run"
        for command in ("generate-surfaces", "build-direct", "assess-accuracy", "calibrate-batch", "benchmark"):
            code, _, err = self.run_cli(command)
            self.assertEqual(code, cli.EXIT_OK, msg=f"{command}: {err}")

        self.assertEqual(json.loads((run / "surfaces" / "manifest.json").read_text())["count"], 2)
        self.assertTrue((run / "direct" / "tensor.rcf").exists())
        self.assertTrue((run / "direct" / "tensor.rcf.json").exists())
        accuracy = json.loads((run / "accuracy" / "accuracy.json").read_text())
        self.assertLess(accuracy["overall_max_abs_error"], 1e-12)
        summary = json.loads((run / "calibration" / "summary.json").read_text())
        self.assertEqual(summary["calibrated"], 2)
        bench = json.loads((run / "benchmark" / "benchmark.json").read_text())
        self.assertEqual(bench["pricer_calls"], 2)

        explicit = str(run / "direct" / "tensor.rcf")
        code, _, _ = self.run_cli("assess-accuracy", "--tensor", explicit, "--surfaces", str(run / "surfaces"))
        self.assertEqual(code, cli.EXIT_OK)

    def _use_tt_config(self) -> None:
        cfg = dict(
            SMALL_CONFIG,
            tt_points=3,
            completion={"initial_samples": 300, "max_cg_iterations": 200, "max_sample_rounds": 1, "restarts": 0},
        )
        self.config.write_text(json.dumps(cfg), encoding="utf-8")

    @mock.patch("roughcheb.cli.make_pricer", side_effect=stub_pricer)
    @mock.patch("roughcheb.harness.make_pricer", side_effect=stub_pricer)
    def test_build_tt(self, _harness_make, _cli_make) -> None:
        self._use_tt_config()
        run = self.root / "run"
        code, out, err = self.run_cli("build-tt")
        self.assertEqual(code, cli.EXIT_OK, msg=err)
        self.assertIn("TT tensor", out)
        self.assertTrue((run / "tt" / "tensor.rct").exists())
        self.assertTrue((run / "tt" / "tensor.rct.json").exists())
        report = json.loads((run / "tt" / "report.json").read_text())
        self.assertEqual(report["grid_size"], 3 ** 6)
        self.assertLessEqual(report["pricer_calls"], 3 ** 4)
        ranks = report["completion"]["ranks"]
        self.assertEqual((ranks[0], ranks[-1]), (1, 1))
        self.assertNotIn("wall_time_s", report["completion"])
        self.assertTrue((run / "tt" / "timing.json").exists())

        self.assertEqual(self.run_cli("generate-surfaces")[0], cli.EXIT_OK)
        code, _, err = self.run_cli("assess-accuracy", "--tensor", str(run / "tt" / "tensor.rct"))
        self.assertEqual(code, cli.EXIT_OK, msg=err)

    @mock.patch(
        "roughcheb.harness.sample_adaptive",
        side_effect=CompletionFailure("non-finite training loss", diagnostics={"iteration": 3, "ranks": [1, 2, 1]}),
    )
    @mock.patch("roughcheb.harness.make_pricer", side_effect=stub_pricer)
    def test_build_tt_completion_failure(self, _make, _complete) -> None:
        self._use_tt_config()
        code, _, err = self.run_cli("build-tt")
        self.assertEqual(code, cli.EXIT_NUMERICAL)
        self.assertIn("non-finite training loss", err)
        report = json.loads((self.root / "run" / "tt" / "report.json").read_text())
        self.assertEqual(report["error"], "non-finite training loss")
        self.assertEqual(report["diagnostics"], {"iteration": 3, "ranks": [1, 2, 1]})
        self.assertFalse((self.root / "run" / "tt" / "tensor.rct").exists())

    @mock.patch("roughcheb.cli.make_pricer", side_effect=stub_pricer)
    @mock.patch("roughcheb.harness.make_pricer", side_effect=stub_pricer)
    def test_same_seed_gives_identical_outputs(self, _harness_make, _cli_make) -> None:
        self._use_tt_config()
        commands = ("generate-surfaces", "build-direct", "build-tt", "assess-accuracy", "calibrate-batch")
        for run in ("first", "second"):
            for command in commands:
                code, _, err = self.run_cli("--seed", "5", command, out_dir=run)
                self.assertEqual(code, cli.EXIT_OK, msg=f"{run} {command}: {err}")

        first, second = self.root / "first", self.root / "second"
        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file() and not p.name.startswith("timing"))
        self.assertIn(Path("direct") / "tensor.rcf", files)
        self.assertIn(Path("tt") / "tensor.rct", files)
        self.assertIn(Path("calibration") / "aggregate.csv", files)
        for rel in files:
            self.assertEqual((first / rel).read_bytes(), (second / rel).read_bytes(), msg=str(rel))


if __name__ == "__main__":
    unittest.main()
