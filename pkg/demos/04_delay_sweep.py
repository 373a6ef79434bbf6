"""Mini closed-loop benchmark: the delay-sweep protocol at reduced scale.

Runs all four methods over a few inference-delay levels with paired seeds
and prints the episode-weighted summary.  The full protocol (50 episodes
per cell, delays 0-5) lives behind the command line:

    guidedflow sweep --out results/
    guidedflow grid-sigma --out results/
    guidedflow grid-rho --out results/
"""

from guidedflow import ExperimentConfig, run_sweep

config = ExperimentConfig(
    methods=("naive", "rtc", "pc", "potr"),
    delays=(1, 3, 5),
    episodes_per_cell=15,
    output_dir="unused",
)
result = run_sweep(config, write=False)

print(f"{len(result.rows)} episodes, suite weights {result.summary['suite_weights']},")
print(f"aggregated over delays {result.summary['aggregated_delays']}")
print()
header = f"{'method':>7} {'success':>8} {'steps':>7} {'l2_mean':>8} {'l2_max':>7} {'acc':>6} {'jerk':>6}"
print(header)
for method in ("naive", "rtc", "pc", "potr"):
    m = result.summary["methods"][method]
    print(
        f"{method:>7} {m['success']:8.3f} {m['env_steps']:7.1f} {m['l2_mean']:8.3f} "
        f"{m['l2_max']:7.3f} {m['max_acc']:6.2f} {m['max_jerk']:6.2f}"
    )

if "vs_rtc" in result.summary:
    deltas = result.summary["vs_rtc"]["potr"]
    print()
    print("potr vs rtc (%):", {k: round(v, 1) for k, v in deltas.items() if v is not None})

print()
print("worst-case block (per-suite delay means, max across suites):")
for method, block in result.summary["worst_case"].items():
    print(f"  {method:>7}:", {k: round(v, 3) for k, v in block.items() if v is not None})
