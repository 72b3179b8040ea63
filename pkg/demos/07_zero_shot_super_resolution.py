"""
Train at 32^3, test at 64^3
===========================

A small HNOSeg-XS model is trained on synthetic scenes rasterized at 32^3 and
evaluated on held-out scenes at 32^3 and 64^3 without retraining.  Pass a
larger epoch count as the first argument for a longer run (60 epochs and
d=16 take a few minutes per core).
"""

import sys

from hnoseg.models import ModelConfig
from hnoseg.storage import save_checkpoint
from hnoseg.synthdata import make_dataset
from hnoseg.trainer import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
data = make_dataset(seed=0, n=20, resolution=(32, 32, 32))
config = ModelConfig(variant="hnoseg-xs", d=8, n_blocks=4, n_xs=2, k_max=(6, 6, 6))

ckpt, log = train(config, TrainConfig(epochs=epochs, seed=0), data)
for record in log:
    if record["kind"] == "epoch":
        print(f"epoch {record['epoch']:3d}  loss {record['loss']:.4f}  val Dice {record['val_mean_dice']:.3f}")

model = ckpt.to_model()
for r in (32, 64):
    result = evaluate(model, data, r)
    print(f"held-out Dice at {r}^3: {result.mean:.3f} per label {result.per_label.round(3)}")

save_checkpoint(ckpt, None, "demo_model.hnox")
print("checkpoint written to demo_model.hnox")
