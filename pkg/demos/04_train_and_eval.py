"""Train a binary network on one synthetic dataset, save it, reload it and score a second one."""

import sys

from au3d.experiments import ExperimentConfig, evaluate, fit
from au3d.metrics import emit_report
from au3d.neuralnet import load_checkpoint, save_checkpoint
from au3d.synthgen import SynthSpec, generate

SMALL = {"conv_filters": [8, 8, 16, 16], "dense_widths": [64, 32]}

train = generate(SynthSpec(n_subjects=10, frames_per_subject=40, magnitude=0.08, seed=1))
test = generate(SynthSpec(n_subjects=5, frames_per_subject=40, magnitude=0.08, seed=2, subject_prefix="T"))
cfg = ExperimentConfig(epochs=30, seed=0, descriptor=SMALL)

net, losses, _ = fit(cfg, train, on_epoch=lambda e, loss: print(f"epoch {e:3d} loss {loss:.4f}") if e % 5 == 0 else None)
blob = save_checkpoint(net)
print(f"checkpoint: {len(blob)} bytes")
report = evaluate(load_checkpoint(blob, net.descriptor), cfg, test)
sys.stdout.write(emit_report(report, "text").decode())
