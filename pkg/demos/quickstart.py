"""End-to-end tour at desk scale: simulate, train briefly, evaluate, inject drift.

    python demos/quickstart.py [--epochs 30]

Takes a few minutes on one CPU core. Training is short, so expect modest
scores; the acceptance suite trains for 200 epochs.
"""

import argparse
import time

import numpy as np

from terrecon.evaluation import ElevationMap, elevation_baseline_update, evaluate_rollout, mean_metrics
from terrecon.model import Frame, ModelSpec
from terrecon.simgen import DriftSpec, simulate_trajectory
from terrecon.training import TrainConfig, train


def to_frames(sim):
    return [Frame(f.odom_pose, f.measurement, f.gt, f.true_pose) for f in sim]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--trajectories", type=int, default=4)
    args = ap.parse_args()
    spec = ModelSpec.desk()

    print(f"simulating {args.trajectories} trajectories of 12 steps ...")
    trajs = [to_frames(simulate_trajectory(100 + 10 * s, 12, spec.cell_size, spec.grid_dim)[1])
             for s in range(args.trajectories)]
    print(f"  mean measured points per frame: {np.mean([len(f.measurement) for t in trajs for f in t]):.0f}")

    t0 = time.perf_counter()

    def progress(state, rows):
        if state.epoch % 10 == 0:
            print(f"  epoch {state.epoch:3d}  loss {np.mean([r[4] for r in rows]):.4f}"
                  f"  ({time.perf_counter() - t0:.0f} s)")

    cfg = TrainConfig(epochs=args.epochs, batch=1, augment=None)
    model = train(trajs, spec, cfg, progress=progress).model

    m = mean_metrics([r for t in trajs for r in evaluate_rollout(model, t)])
    print(f"training-set scores: precision {m['precision']:.3f}  recall {m['recall']:.3f}"
          f"  F1 {m['f1']:.3f}  MAE {m['mae_cm']:.2f} cm")

    # A 7 cm downward odometry jump halfway through a fresh trajectory.
    _, sim = simulate_trajectory(7, 12, spec.cell_size, spec.grid_dim, drift=DriftSpec(events=((6, (0, 0, -0.07)),)))
    emap = ElevationMap.create(sim[0].true_pose.translation, 8.0, spec.cell_size)
    for f in sim:
        emap = elevation_baseline_update(emap, f.measurement, f.odom_pose, 1e-4)
    print(f"Kalman elevation map: {emap.observed.sum()} cells fused, drifted frames land 7 cm low")
    recs = evaluate_rollout(model, to_frames(sim))
    print("learned pipeline F1 per step:", " ".join(f"{r.f1:.2f}" for r in recs))


if __name__ == "__main__":
    main()
