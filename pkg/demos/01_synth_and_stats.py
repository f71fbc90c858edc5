"""Generate a synthetic dataset with BP4D-like AU rates and print per-AU occurrence."""

import sys
import tempfile

from au3d.landmark_io import format_stats_csv, load_labels, occurrence_stats
from au3d.synthgen import BP4D_RATES, SynthSpec, rates_from_percentages, write_synthetic

spec = SynthSpec(n_subjects=40, frames_per_subject=100, rates=rates_from_percentages(BP4D_RATES), seed=3)
with tempfile.TemporaryDirectory() as tmp:
    manifest = write_synthetic(spec, tmp)
    stats = occurrence_stats(load_labels(manifest))

print("au  target  observed")
for au, pct in stats.items():
    print(f"{au}  {BP4D_RATES[au]:6.2f}  {pct:8.2f}")
sys.stdout.write("\n" + format_stats_csv(stats))
