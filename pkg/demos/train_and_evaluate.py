"""
Training a small three-camera model
===================================

Generate a synthetic dataset, train a reduced network for a few epochs,
then look at overall error, the spatial heatmap and the angle sweep.
The full-size setting (4000 samples, 150 epochs) is what the acceptance
suite runs; this one finishes in under a minute.
"""
import numpy as np

from tricam import harness as H
from tricam.dataset import generate
from tricam.network import TriCamConfig, count_params, init_model
from tricam.synthgen import SceneConfig

scene = SceneConfig()
data = generate(scene, 800, seed=1)
train, val, test = H.split_dataset(data)
print(f"split: {len(train)} train / {len(val)} val / {len(test)} test")

model_cfg = TriCamConfig(cnn_channels=(8, 16), cnn_features=32, decision_hidden=(256, 128), reduction=64)
print("parameters:", count_params(init_model(model_cfg)))

run = H.TrainRunConfig(epochs=12, model=model_cfg, seed=0)
result = H.train_model(train, val, run)
for row in result.curves[::3]:
    print(f"epoch {row['epoch']:3d}  val error {row['val_cm']:6.2f} cm")

report = H.evaluate(result.model, test, heatmap_bin=240)
print(f"test error: mean {report.mean_cm:.2f} cm, median {report.median_cm:.2f} cm")

# mean error per 240 px cell of the screen (rows top to bottom)
with np.printoptions(precision=1, suppress=True, linewidth=120):
    print(report.heatmap.mean_cm)

# error grows as the user moves off to the side
sweep = H.angle_sweep(result.model, H.angle_scenarios((-30, 0, 30)), scene, n_per_angle=60)
for theta, err in sweep.items():
    print(f"theta {theta:+5.0f} deg: {err:.2f} cm")
