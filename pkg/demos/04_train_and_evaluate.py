"""End to end on a small corridor: train, evaluate against naive baselines.

Uses a reduced corpus so the demo finishes in about a minute; the CLI runs
the same path at full scale (see the README).
"""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from mgcnn.metrics import evaluate_model, export_series, format_report_table
from mgcnn.model import ModelConfig
from mgcnn.pipeline import assemble, ingest_csv, prepare_corridor
from mgcnn.synth import SynthConfig, generate
from mgcnn.topology import load_topology
from mgcnn.trainer import TrainConfig, predict_batch, split_train_test, train

out_dir = Path(tempfile.mkdtemp(prefix="e2e_"))
config = SynthConfig(n_intersections=4, days=4, seed=7)
topo_path, csv_paths = generate(config, out_dir)
print(f"generated 4-day, 4-intersection corpus in {out_dir}")

topology = load_topology(topo_path)
prepared = prepare_corridor(ingest_csv(csv_paths), topology, train_days=3)
dataset = assemble(prepared, lookback=10, horizon=5)
train_set, test_set = split_train_test(dataset, train_days=3, total_days=4)
print(f"windows: {len(train_set)} train / {len(test_set)} test "
      f"(F={dataset.n_features})")

model_config = ModelConfig(channels1=16, channels2=16)
train_config = TrainConfig(epochs=15, seed=0)
params, history = train(train_set, model_config, train_config,
                        log=lambda msg: print("  " + msg))
print(f"\nepoch-1 loss {history.epoch_loss[0]:.4f} -> "
      f"final {history.epoch_loss[-1]:.4f}")

mean12 = np.stack([s.mean[:12] for s in prepared.stats])
std12 = np.stack([s.std[:12] for s in prepared.stats])
reports = evaluate_model(params, test_set, train_set, mean12, std12)
print("\ntest-day metrics:")
print(format_report_table([reports["mgcnn_norm"], reports["mgcnn_raw"],
                           reports["persistence_raw"], reports["historical_raw"]]))

model_mse = reports["mgcnn_raw"].mse
print(f"improvement vs persistence: "
      f"{1 - model_mse / reports['persistence_raw'].mse:.0%}")
print(f"improvement vs historical average: "
      f"{1 - model_mse / reports['historical_raw'].mse:.0%}")

# Export a truth-vs-prediction series for one movement (plot it elsewhere)
preds = predict_batch(test_set, params)
node, movement = 1, 10  # second intersection, westbound thru
series_path = out_dir / "series_WB_T.txt"
export_series(
    test_set.win_targets_raw[:, node, movement],
    preds[:, node, movement] * std12[node, movement] + mean12[node, movement],
    series_path,
    minutes=test_set.target_minutes(),
)
print(f"\nwrote {series_path} "
      f"({len(series_path.read_text().splitlines()) - 1} minutes of truth vs prediction)")
