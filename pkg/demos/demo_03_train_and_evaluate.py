"""
Cross-validated training on synthetic EEG
=========================================

A narrow version of the network (16/8/4 recurrent units per direction) is
trained with 5-fold cross validation and early stopping, then refit on the
whole training split with a 10% hold-out deciding when to stop. The held-out
test recordings are scored once at the end. Takes about a minute on one core.
"""
import numpy as np

from bigru_eeg.dataio import SynthSpec, synth_generate
from bigru_eeg.dsp import PipelineConfig, run_pipeline, windows_to_arrays
from bigru_eeg.evaluation import evaluate_model, format_table
from bigru_eeg.nn import ArchConfig
from bigru_eeg.train import TrainConfig, kfold_cv

_, recs = synth_generate(SynthSpec(n_recordings=40, duration_s=3.0), seed=0)
ds = run_pipeline(recs, PipelineConfig(balance_seed=1, augment_seed=2, split_seed=3))
x, y = windows_to_arrays(ds.train, np.float32)
xt, yt = windows_to_arrays(ds.test, np.float32)
print(f"{len(x)} training windows, {len(xt)} test windows")

arch = ArchConfig(hidden=(16, 8, 4), dropout=0.2)
cfg = TrainConfig(max_epochs=30, patience=5, lr=5e-3, init_seed=4, shuffle_seed=5, dropout_seed=6, fold_seed=7)
result = kfold_cv(x, y, cfg, arch)

for f in result.folds:
    h = f.history
    print(f"fold {f.fold + 1}: {len(h.records)} epochs, best epoch {h.best_epoch}, "
          f"val loss {min(h.val_losses):.4f}")

print("\nfinal model learning curve (epoch, train loss, val loss)")
for r in result.final_history.records:
    print(f"{r.epoch:3d}  {r.train_loss:.4f}  {r.val_loss:.4f}")

report = evaluate_model(result.final_params, xt, yt)
print()
print(format_table(report))
