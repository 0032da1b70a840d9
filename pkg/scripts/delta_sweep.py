"""Sweep the ordering-loss spread parameter and report traversal health."""

import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from arlatent import synth
from arlatent.losses import LossWeights
from arlatent.metrics import evaluate_model, select_phase_channels
from arlatent.models import ModelConfig
from arlatent.training import TrainConfig, fit
from arlatent.traversal import sample_base_codes, traversal_monotonicity

torch.set_num_threads(2)

OUT = Path("/tmp/pilot")
EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 40
DELTAS = [float(d) for d in (sys.argv[2].split(",") if len(sys.argv) > 2 else ["4", "8"])]

dataset = synth.load_archive(OUT / "dataset")
model_cfg = ModelConfig(latent_dim=16, channels=2, image_size=64, base_width=16,
                        num_regularized_dims=6)

for delta in DELTAS:
    t0 = time.time()
    cfg = TrainConfig(method="ar_sivae", epochs=EPOCHS, patience=0, batch_size=32, seed=0,
                      weights=LossWeights(delta=delta))
    run_dir = OUT / f"delta{delta:g}_e{EPOCHS}"
    result = fit(cfg, model_cfg, dataset, run_dir=run_dir)
    report = evaluate_model(result.model, dataset, split="test", regularized=True)
    bases = sample_base_codes(result.model, dataset, n_bases=20, seed=0)
    monos = [
        traversal_monotonicity(result.model, d, dataset.attribute_names[d], bases).score
        for d in range(6)
    ]
    idx = dataset.split_indices("test")[:64]
    x = torch.from_numpy(select_phase_channels(dataset.images[idx], "both"))
    with torch.no_grad():
        mu, _ = result.model.encode(x)
        recon = result.model.decode(mu).numpy()
    truth = x.numpy()
    levels = {
        name: float(recon[:, 0][np.isclose(truth[:, 0], lv)].mean())
        for lv, name in ((1.0, "lv"), (0.8, "rv"), (0.6, "myo"), (0.0, "bg"))
    }
    line = {
        "delta": delta, "minutes": round((time.time() - t0) / 60, 1),
        "scc": round(report.scc, 4), "interp": round(report.interp_all, 4),
        "ssim": round(report.ssim_all, 4), "pfd": round(report.pfd_all, 6),
        "mu_std_reg": [round(float(s), 2) for s in mu.numpy().std(axis=0)[:6]],
        "mono_mean": round(float(np.mean(monos)), 4),
        "mono": [round(m, 3) for m in monos],
        "decoded_levels": {k: round(v, 3) for k, v in levels.items()},
    }
    print(json.dumps(line), flush=True)
print("DELTA SWEEP DONE", flush=True)
