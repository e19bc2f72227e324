"""A small end-to-end A/B experiment with BD-rate reduction.

Runs baseline and masked arms over two rate points on a short orbit clip and
writes the CSV plus R-D SVG plots.  The full-scale run lives in the
acceptance suite (and `ompc experiment`); this one is sized for a quick look.
"""

from ompc.evaluation import ExperimentConfig, emit_report, run_experiment

cfg = ExperimentConfig()
cfg.sequences = [{"name": "orbit-mini", "kind": "orbit", "frames": 3,
                  "seed": 3, "points": 16000}]
cfg.qp_geom = (27, 32, 37, 42)
cfg.configs = ("ippp",)
cfg.frame_min_height = 128
cfg.output_dir = "demo_results"

rows, summary = run_experiment(cfg)
emit_report(rows, summary, cfg.output_dir)

print(f"{'config':8s} {'qp':>3s} {'arm':8s} {'geom bits':>10s} {'attr bits':>10s} "
      f"{'geom dB':>8s} {'Y dB':>6s}")
for r in rows:
    print(f"{r.config:8s} {r.qp_geom:3d} {'masked' if r.masking else 'baseline':8s} "
          f"{r.bits_geom:10d} {r.bits_attr:10d} {r.geom_db:8.2f} {r.y_db:6.2f}")
for e in summary:
    print(f"\n{e['sequence']}/{e['config']}: geometry BD-rate {e['geom_bd']:+.2f}%, "
          f"luma BD-rate {e['luma_bd']:+.2f}%")
print("\nreport written to demo_results/ (results.csv, bd_rates.csv, *.svg)")
