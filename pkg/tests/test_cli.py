from __future__ import annotations

import contextlib
import io
import logging
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from app import __version__
from app.cli.config_loader import load_config, parse_config_text, render_config
from app.cli.parser import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, parse_and_dispatch
from app.core.errors import ConfigError, NotSpd
from app.schemas.experiment import ExperimentConfig
from app.services.storage_service import load_dataset, load_head_pair, read_labels, read_matrix

SMALL_CONFIG = """\
# desk-sized run for tests
hidden = 12
epochs_tcr = 4
epochs_mlc = 2          # two Stage-2 epochs
synth_points_per_manifold = 15
spectral_restarts = 2
"""


def _run(*argv: str) -> tuple[int, str]:
    err = io.StringIO()
    with contextlib.redirect_stderr(err), contextlib.redirect_stdout(io.StringIO()):
        code = parse_and_dispatch(list(argv))
    return code, err.getvalue()


class ConfigLoaderTests(unittest.TestCase):
    def test_empty_text_gives_defaults(self) -> None:
        self.assertEqual(parse_config_text(""), ExperimentConfig())
        self.assertEqual(load_config(None), ExperimentConfig())

    def test_values_and_comments(self) -> None:
        cfg = parse_config_text("eta = 0.175\n# note\nuse_stage1 = false\ntcr_lambda = none\nk = 3  # clusters\n")
        self.assertEqual(cfg.eta, 0.175)
        self.assertFalse(cfg.use_stage1)
        self.assertIsNone(cfg.tcr_lambda)
        self.assertEqual(cfg.k, 3)

    def test_errors_carry_line_numbers(self) -> None:
        cases = {
            "k = 2\neta = -1\n": "line 2",
            "\nnot_a_key = 1\n": "line 2",
            "k = 2\nk = 3\n": "line 2",
            "epochs_mlc 5\n": "line 1",
            "hidden = many\n": "line 1",
        }
        for text, where in cases.items():
            with self.assertRaises(ConfigError) as ctx:
                parse_config_text(text)
            self.assertIn(where, str(ctx.exception), msg=text)

    def test_render_round_trips(self) -> None:
        cfg = ExperimentConfig(eta=0.3, tcr_lambda=1.25, use_augmentation=False, master_seed=11)
        self.assertEqual(parse_config_text(render_config(cfg)), cfg)
        self.assertEqual(parse_config_text(render_config(ExperimentConfig())), ExperimentConfig())

    def test_derived_parameters(self) -> None:
        cfg = ExperimentConfig()
        self.assertAlmostEqual(cfg.tcr_params(200).lam, 1.0)
        self.assertEqual(ExperimentConfig(tcr_lambda=3.0).tcr_params(200).lam, 3.0)
        self.assertEqual(cfg.mlc_rate_params().epsilon_sq, 0.1)
        self.assertEqual(cfg.tcr_rate_params().epsilon_sq, 0.2)
        self.assertEqual(cfg.sinkhorn_config().eta, 0.175)
        self.assertEqual(cfg.feature_optimizer().momentum, 0.9)


class CliTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.config = self.root / "small.cfg"
        self.config.write_text(SMALL_CONFIG, encoding="utf-8")

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_synth(self) -> None:
        code, _ = _run("synth", "--config", str(self.config), "--out", str(self.root / "data"))
        self.assertEqual(code, EXIT_OK)
        data = load_dataset(self.root / "data")
        self.assertEqual(data.X.shape, (3, 30))
        meta = (self.root / "data" / "run-meta.txt").read_text()
        self.assertIn(f"# version = {__version__}", meta)

    def test_usage_errors(self) -> None:
        code, err = _run("frobnicate", "--out", str(self.root))
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("usage:", err)
        self.assertEqual(_run("synth")[0], EXIT_USAGE)
        self.assertEqual(_run("full", "--out", str(self.root / "x"), "--seed", "-3")[0], EXIT_USAGE)
        self.assertEqual(_run("--help")[0], EXIT_OK)

    def test_log_level_is_validated(self) -> None:
        code, err = _run("--log-level", "bogus", "synth", "--out", str(self.root / "data"))
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("unknown log level", err)
        self.assertFalse((self.root / "data").exists())

        root = logging.getLogger()
        before = root.level
        try:
            code, _ = _run("--log-level", "warning", "synth", "--config", str(self.config), "--out", str(self.root / "data"))
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(root.level, logging.WARNING)
        finally:
            root.setLevel(before)

    def test_missing_inputs(self) -> None:
        out = str(self.root / "out")
        self.assertEqual(_run("full", "--config", str(self.root / "nope.cfg"), "--out", out)[0], EXIT_USAGE)
        self.assertEqual(_run("eval", "--config", str(self.config), "--out", out)[0], EXIT_USAGE)
        bad = self.root / "bad.cfg"
        bad.write_text("eta = -1\n")
        code, err = _run("synth", "--config", str(bad), "--out", out)
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("line 1", err)

    def test_numeric_failure_exit_code(self) -> None:
        with mock.patch("app.cli.commands.run_pipeline", side_effect=NotSpd("boom")):
            code, err = _run("full", "--config", str(self.config), "--out", str(self.root / "out"))
        self.assertEqual(code, EXIT_NUMERIC)
        self.assertIn("NotSpd", err)

    def test_unconverged_readout_exit_code(self) -> None:
        starved = self.root / "starved.cfg"
        starved.write_text(SMALL_CONFIG + "sinkhorn_tol = 1e-12\nreadout_sinkhorn_max_iters = 1\n", encoding="utf-8")
        code, err = _run("full", "--config", str(starved), "--out", str(self.root / "out"))
        self.assertEqual(code, EXIT_NUMERIC)
        self.assertIn("ConvergenceFailure", err)

    def test_full_is_reproducible_from_seed_and_run_meta(self) -> None:
        first, second, replay = self.root / "a", self.root / "b", self.root / "c"
        for out in (first, second):
            code, _ = _run("full", "--config", str(self.config), "--out", str(out), "--seed", "7")
            self.assertEqual(code, EXIT_OK)
        for name in ("metrics.json", "labels.txt"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

        code, _ = _run("full", "--config", str(first / "run-meta.txt"), "--out", str(replay))
        self.assertEqual(code, EXIT_OK)
        self.assertEqual((first / "metrics.json").read_bytes(), (replay / "metrics.json").read_bytes())

        self.assertEqual(read_matrix(first / "Z.mlcmat").shape, (3, 30))
        self.assertEqual(read_matrix(first / "gamma.mlcmat").shape, (30, 30))
        self.assertEqual(read_matrix(first / "similarity.mlcmat").shape, (30, 30))
        for name in ("Z_init.mlcmat", "Z_tcr.mlcmat", "records.csv", "ranks.csv"):
            self.assertTrue((first / name).exists(), msg=name)
        self.assertEqual(read_labels(first / "labels.txt").size, 30)
        self.assertIn("master_seed = 7", (first / "run-meta.txt").read_text())

    def test_stagewise_verbs(self) -> None:
        data, tcr, mlc, ev = (self.root / name for name in ("data", "tcr", "mlc", "eval"))
        cfg = str(self.config)
        self.assertEqual(_run("synth", "--config", cfg, "--out", str(data))[0], EXIT_OK)
        self.assertEqual(_run("train-tcr", "--config", cfg, "--out", str(tcr), "--data", str(data))[0], EXIT_OK)
        code, _ = _run(
            "train-mlc", "--config", cfg, "--out", str(mlc), "--data", str(data), "--params", str(tcr / "params")
        )
        self.assertEqual(code, EXIT_OK)
        code, _ = _run("eval", "--config", cfg, "--out", str(ev), "--data", str(data), "--params", str(mlc / "params"))
        self.assertEqual(code, EXIT_OK)

        stage1 = load_head_pair(tcr / "params")
        stage2 = load_head_pair(mlc / "params")
        self.assertFalse(np.array_equal(stage1.cluster.w1, stage2.cluster.w1))
        self.assertTrue((mlc / "records.csv").exists())
        self.assertTrue((ev / "metrics.json").exists())

    def test_ablate_and_stability(self) -> None:
        cfg = str(self.config)
        self.assertEqual(_run("ablate", "--config", cfg, "--out", str(self.root / "abl"))[0], EXIT_OK)
        table = (self.root / "abl" / "ablation.csv").read_text().splitlines()
        self.assertEqual(table[0], "name,acc,nmi")
        names = [line.split(",")[0] for line in table[1:]]
        self.assertEqual(names, ["full", "no-stage-1", "no-augmentation", "no-mlc"])

        self.assertEqual(_run("stability", "--config", cfg, "--out", str(self.root / "st"))[0], EXIT_USAGE)
        code, _ = _run("stability", "--config", cfg, "--out", str(self.root / "st"), "--seeds", "0,1")
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((self.root / "st" / "stability.csv").exists())


if __name__ == "__main__":
    unittest.main()
