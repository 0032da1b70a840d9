"""Desk-scale pilot: train one seed of each method and print criterion metrics."""

import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from arlatent import synth
from arlatent.losses import LossWeights
from arlatent.metrics import evaluate_model
from arlatent.models import ModelConfig
from arlatent.training import REGULARIZED_METHODS, TrainConfig, fit
from arlatent.traversal import sample_base_codes, traversal_monotonicity

torch.set_num_threads(2)

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/pilot")
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 40
METHODS = sys.argv[3].split(",") if len(sys.argv) > 3 else ["ar_sivae", "sivae", "attri_vae"]
SEED = int(sys.argv[4]) if len(sys.argv) > 4 else 0

OUT.mkdir(parents=True, exist_ok=True)
ds_path = OUT / "dataset"
if not (ds_path / "manifest.json").is_file():
    t0 = time.time()
    data = synth.generate_dataset(2000, seed=7)
    synth.save_archive(data, ds_path)
    print(f"dataset generated in {time.time()-t0:.0f}s", flush=True)
dataset = synth.load_archive(ds_path)

model_cfg = ModelConfig(latent_dim=16, channels=2, image_size=64, base_width=16,
                        num_regularized_dims=6)

for method in METHODS:
    run_dir = OUT / f"{method}_seed{SEED}_e{EPOCHS}"
    t0 = time.time()
    epochs = EPOCHS if method != "attri_vae" else int(EPOCHS * 1.5)
    cfg = TrainConfig(method=method, epochs=epochs, patience=0, batch_size=32, seed=SEED,
                      weights=LossWeights(), checkpoint_every=10)
    result = fit(cfg, model_cfg, dataset, run_dir=run_dir)
    train_time = time.time() - t0
    report = evaluate_model(result.model, dataset, split="test",
                            regularized=method in REGULARIZED_METHODS)
    line = {
        "method": method, "seed": SEED, "epochs": result.state.epoch,
        "train_minutes": round(train_time / 60, 1),
        "scc": round(report.scc, 4), "interp": round(report.interp_all, 4),
        "interp_ed": round(report.interp_edv, 4), "interp_es": round(report.interp_esv, 4),
        "ssim": round(report.ssim_all, 4), "pfd": round(report.pfd_all, 6),
        "sap": round(report.sap, 4), "mod": round(report.modularity, 4),
    }
    if method in REGULARIZED_METHODS:
        bases = sample_base_codes(result.model, dataset, n_bases=20, seed=0)
        monos = []
        for dim in range(6):
            r = traversal_monotonicity(result.model, dim, dataset.attribute_names[dim], bases)
            monos.append(round(r.score, 4))
        line["monotonicity"] = monos
        line["monotonicity_mean"] = round(float(np.mean(monos)), 4)
    print(json.dumps(line), flush=True)
    (run_dir / "pilot_metrics.json").write_text(json.dumps(line, indent=2))
print("PILOT DONE", flush=True)
