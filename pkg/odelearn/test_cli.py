"""
Tests for the odelearn command-line interface.
"""

import json
import logging
import os
import unittest

from click.testing import CliRunner

from odelearn.cli import main, parse_vector
from odelearn.errors import ContractViolation
from odelearn.persistence import read_manifest, read_trajectory


class TestParseVector(unittest.TestCase):
    """Tests for comma-separated vectors."""

    def test_parses_three_numbers(self):
        """Test a well-formed initial condition."""
        self.assertEqual(parse_vector("0.1,1,10"), [0.1, 1.0, 10.0])

    def test_rejects_wrong_length_and_text(self):
        """Test malformed vectors."""
        with self.assertRaises(ContractViolation):
            parse_vector("0.1,1")
        with self.assertRaises(ContractViolation):
            parse_vector("a,b,c")


class TestCommands(unittest.TestCase):
    """End-to-end tests of the subcommands."""

    def setUp(self):
        """Set up a runner in an isolated directory."""
        self.runner = CliRunner()
        self.fs = self.runner.isolated_filesystem()
        self.fs.__enter__()

    def tearDown(self):
        """Leave the isolated directory."""
        self.fs.__exit__(None, None, None)
        # handlers installed by the group write to the runner streams
        for handler in logging.root.handlers[:]:
            logging.root.removeHandler(handler)

    def invoke(self, *args):
        return self.runner.invoke(main, ["--log-level", "ERROR", *args])

    def synth(self, out="data.csv", *extra):
        result = self.invoke("synth", "--ic", "0.1,1,10", "--duration", "2", "--dt", "0.05", "--out", out, *extra)
        self.assertEqual(result.exit_code, 0, result.output)
        return out

    def train_dynamics(self, data, out="model.json"):
        result = self.invoke("train", "--method", "discrete", "--target", "dynamics", "--data", data,
                             "--out", out, "--iters", "2")
        self.assertEqual(result.exit_code, 0, result.output)
        return out

    def test_synth_writes_trajectory_and_manifest(self):
        """Test grid size and the sidecar manifest."""
        result = self.invoke("synth", "--ic", "0.1,1,10", "--duration", "50", "--dt", "0.05", "--out", "full.csv")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(len(read_trajectory("full.csv")), 1001)
        manifest = read_manifest("full.csv.manifest.json")
        self.assertEqual(manifest.command, "synth")
        self.assertEqual(manifest.argv[0], "synth")
        self.assertEqual(manifest.seed, 7)

    def test_missing_initial_condition(self):
        """Test that a required option is a usage error."""
        result = self.invoke("synth", "--out", "x.csv")
        self.assertEqual(result.exit_code, 2)

    def test_invalid_initial_condition(self):
        """Test that a non-physical state exits with code 2."""
        result = self.invoke("synth", "--ic", "0.1,1,-10", "--out", "x.csv")
        self.assertEqual(result.exit_code, 2)
        self.assertFalse(os.path.exists("x.csv"))

    def test_discrete_training_rejects_irregular_data(self):
        """Test that dropped samples make discrete training fail with code 2."""
        self.synth("irregular.csv", "--drop-fraction", "0.3")
        self.assertFalse(read_trajectory("irregular.csv").is_uniform)
        result = self.invoke("train", "--method", "discrete", "--target", "dynamics", "--data", "irregular.csv",
                             "--out", "model.json", "--iters", "2")
        self.assertEqual(result.exit_code, 2)

    def test_continuous_training_accepts_irregular_data(self):
        """Test a short continuous run on non-uniform samples."""
        self.synth("irregular.csv", "--drop-fraction", "0.3")
        result = self.invoke("train", "--method", "continuous", "--target", "mu", "--data", "irregular.csv",
                             "--out", "pinn.json", "--iters", "2", "--n-collocation", "21")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists("pinn.loss.csv"))
        scaled = self.invoke("train", "--method", "continuous", "--target", "mu", "--data", "irregular.csv",
                             "--out", "scaled.json", "--iters", "2", "--n-collocation", "21", "--normalized-loss")
        self.assertEqual(scaled.exit_code, 0, scaled.output)
        self.assertIn("--normalized-loss", read_manifest("scaled.json.manifest.json").argv)
        self.assertIsNotNone(read_manifest("pinn.json.manifest.json").elapsed)

    def test_continuous_training_takes_one_trajectory(self):
        """Test that two data files are rejected for the continuous method."""
        data = self.synth()
        result = self.invoke("train", "--method", "continuous", "--target", "dynamics", "--data", data,
                             "--data", data, "--out", "pinn.json", "--iters", "2")
        self.assertEqual(result.exit_code, 2)

    def test_rollout_and_mode_mismatch(self):
        """Test a rollout of learned dynamics and the refusal of a wrong mode."""
        model = self.train_dynamics(self.synth())
        result = self.invoke("rollout", "--checkpoint", model, "--mode", "dynamics", "--ic", "0.15,1.2,12",
                             "--duration", "1", "--out", "pred.csv")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(read_manifest("pred.csv.manifest.json").source, "rollout")
        result = self.invoke("rollout", "--checkpoint", model, "--mode", "mu", "--ic", "0.15,1.2,12",
                             "--out", "bad.csv")
        self.assertEqual(result.exit_code, 2)

    def train_mu(self, data, out="mu.json", *extra):
        result = self.invoke("train", "--method", "discrete", "--target", "mu", "--data", data,
                             "--out", out, "--iters", "2", *extra)
        self.assertEqual(result.exit_code, 0, result.output)
        return out

    def final_volume(self, model, out, *extra):
        result = self.invoke("rollout", "--checkpoint", model, "--mode", "mu", "--ic", "0.1,1,10",
                             "--duration", "5", "--out", out, *extra)
        self.assertEqual(result.exit_code, 0, result.output)
        return read_trajectory(out).states[-1, 2]

    def test_explicit_reactor_option_overrides_checkpoint(self):
        """Test that a feed rate given on the command line replaces the stored one."""
        model = self.train_mu(self.synth())
        self.assertAlmostEqual(self.final_volume(model, "fast.csv", "--feed", "0.2"), 11.0, places=9)
        self.assertIn("--feed", read_manifest("fast.csv.manifest.json").argv)
        self.assertAlmostEqual(self.final_volume(model, "stored.csv"), 10.5, places=9)
        self.assertNotIn("--feed", read_manifest("stored.csv.manifest.json").argv)

    def test_checkpoint_constants_survive_replay(self):
        """Test that a rollout without reactor options uses and replays the trained constants."""
        model = self.train_mu(self.synth(), "mu.json", "--feed", "0.2")
        self.assertAlmostEqual(self.final_volume(model, "pred.csv"), 11.0, places=9)
        with open("pred.csv", "rb") as f:
            first = f.read()
        result = self.invoke("replay", "pred.csv.manifest.json")
        self.assertEqual(result.exit_code, 0, result.output)
        with open("pred.csv", "rb") as f:
            self.assertEqual(f.read(), first)

    def test_missing_checkpoint_is_io_error(self):
        """Test that an absent checkpoint exits with code 4."""
        result = self.invoke("rollout", "--checkpoint", "absent.json", "--mode", "dynamics", "--ic", "0.1,1,10",
                             "--out", "pred.csv")
        self.assertEqual(result.exit_code, 4)

    def test_corrupt_checkpoint_is_io_error(self):
        """Test that a malformed checkpoint exits with code 4."""
        with open("broken.json", "w") as f:
            json.dump({"schema_version": 1}, f)
        result = self.invoke("rollout", "--checkpoint", "broken.json", "--mode", "dynamics", "--ic", "0.1,1,10",
                             "--out", "pred.csv")
        self.assertEqual(result.exit_code, 4)

    def test_eval_identical_trajectories(self):
        """Test zero errors for a prediction equal to the truth."""
        data = self.synth()
        result = self.invoke("eval", "--predicted", data, "--truth", data, "--out", "metrics.csv")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("X=0 S=0 V=0", result.output)

    def test_eval_with_model_curves(self):
        """Test that a checkpoint adds the learned rhs along the truth."""
        data = self.synth()
        model = self.train_dynamics(data)
        result = self.invoke("eval", "--predicted", data, "--truth", data, "--out", "metrics.csv",
                             "--checkpoint", model)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists("metrics.curves.csv"))

    def test_unknown_plot_kind(self):
        """Test that an unsupported figure kind is a usage error."""
        result = self.invoke("plot", "--kind", "phase", "--out", "fig.svg")
        self.assertEqual(result.exit_code, 2)

    def test_states_plot(self):
        """Test a states figure from CSV files."""
        data = self.synth()
        result = self.invoke("plot", "--kind", "states", "--out", "fig.svg", "--train", data, "--test", data)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists("fig.svg"))

    def test_compare_checkpoints(self):
        """Test the ranking table of a single checkpoint."""
        model = self.train_dynamics(self.synth())
        result = self.invoke("compare", "--checkpoint", model, "--duration", "1", "--out", "ranking.csv")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists("ranking.csv"))

    def test_replay_reproduces_outputs(self):
        """Test that replaying a manifest rewrites identical bytes."""
        self.synth("data.csv", "--drop-fraction", "0.2", "--seed", "3")
        with open("data.csv", "rb") as f:
            first = f.read()
        os.remove("data.csv")
        result = self.invoke("replay", "data.csv.manifest.json")
        self.assertEqual(result.exit_code, 0, result.output)
        with open("data.csv", "rb") as f:
            self.assertEqual(f.read(), first)

    def test_replay_of_training(self):
        """Test that a replayed training run gives the same checkpoint."""
        model = self.train_dynamics(self.synth())
        with open(model, "rb") as f:
            first = f.read()
        result = self.invoke("replay", f"{model}.manifest.json")
        self.assertEqual(result.exit_code, 0, result.output)
        with open(model, "rb") as f:
            self.assertEqual(f.read(), first)


if __name__ == '__main__':
    unittest.main()
