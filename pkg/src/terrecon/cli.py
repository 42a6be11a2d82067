"""Command-line entry points: gen-data, train, infer, eval, ablate, bench.

Every option can also come from a flat ``key = value`` file passed with
``--config``; flags given on the command line win over file values.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .errors import ContractError, FormatError
from .evaluation import frame_metrics, mean_metrics, sparsity_ablation, to_csv
from .io import TrajectoryFile, read_config, read_trajectory, write_trajectory
from .model import ModelSpec, build_model, forward, rollout
from .simgen import SceneParams, default_cameras, simulate_trajectory
from .training import TrainConfig, load_model, train

log = logging.getLogger("terrecon")

SPECS = {"desk": ModelSpec.desk, "paper": ModelSpec.paper}


def _spec(name: str) -> ModelSpec:
    try:
        return SPECS[name]()
    except KeyError:
        raise ContractError(f"unknown model spec {name!r}; choose from {sorted(SPECS)}") from None


def _dataset_files(data_dir) -> list[Path]:
    d = Path(data_dir)
    if not d.is_dir():
        raise ContractError(f"dataset directory {d} does not exist")
    return sorted(d.glob("*.trec"))


def load_dataset(data_dir, spec: ModelSpec | None = None) -> list[TrajectoryFile]:
    out = []
    for f in _dataset_files(data_dir):
        t = read_trajectory(f)
        if spec is not None and (abs(t.cell_size - spec.cell_size) > 1e-6 or t.grid_dim != spec.grid_dim):
            raise ContractError(f"{f}: recorded for a {t.grid_dim}^3 grid at {t.cell_size} m, "
                                f"model expects {spec.grid_dim}^3 at {spec.cell_size} m")
        out.append(t)
    return out


# -- commands --------------------------------------------------------------------


def cmd_gen_data(a) -> int:
    spec = _spec(a.spec)
    if a.trajectories <= 0:
        log.warning("no trajectories requested; nothing written")
        return 0
    out = Path(a.out)
    cams = default_cameras()
    params = SceneParams()
    vis, steps = [], 0
    for i in range(a.trajectories):
        seed = a.seed * 1_000_003 + 97 * i
        _, frames = simulate_trajectory(seed, a.steps, spec.cell_size, spec.grid_dim, params, cams,
                                        points_per_cell=a.gt_points_per_cell)
        write_trajectory(out / f"traj_{i:04d}.trec", TrajectoryFile.from_sim(frames, spec.cell_size,
                                                                          spec.grid_dim, cams))
        vis += [f.visibility for f in frames]
        steps += len(frames)
    print(f"wrote {a.trajectories} trajectories, {steps} steps, mean visibility {np.mean(vis):.3f} to {out}")
    return 0


def _train_config(a) -> TrainConfig:
    return TrainConfig(epochs=a.epochs, batch=a.batch, rollout=a.rollout, lr_start=a.lr_start, lr_end=a.lr_end,
                       alpha=a.alpha, seed=a.seed, keep_targets=not a.no_keep_targets,
                       augment=None if a.no_augment else AugmentConfig())


def cmd_train(a) -> int:
    spec = _spec(a.spec)
    data = [t.frames() for t in load_dataset(a.data, spec)]
    if not data:
        raise ContractError(f"no trajectory files in {a.data}")
    cfg = _train_config(a)

    def progress(state, rows):
        if rows:
            print(f"epoch {state.epoch}/{cfg.epochs} step {rows[-1][1]} loss {np.mean([r[4] for r in rows]):.4f} "
                  f"lr {rows[-1][5]:.3g}", flush=True)

    train(data, spec, cfg, a.out, a.resume, a.max_epochs, progress)
    print(f"checkpoints and loss_log.csv in {a.out}")
    return 0


def cmd_infer(a) -> int:
    model = load_model(a.checkpoint)
    spec = model.spec
    out = Path(a.out)
    for f in _dataset_files(a.data):
        t = read_trajectory(f)
        steps = rollout(model, t.frames(), a.alpha, spec.grid, feedback=not a.no_feedback)
        est = TrajectoryFile(t.cell_size, t.grid_dim, t.mounts, t.true_poses, t.odom_poses,
                             [np.asarray(s.estimate.points, np.float32).reshape(-1, 3) for s in steps], t.gts)
        write_trajectory(out / f.name, est)
        print(f"{f.name}: {sum(len(s.estimate) for s in steps)} estimate points over {len(steps)} frames")
    return 0


def _per_frame_rows(records, names):
    rows = []
    for (traj, t), r in zip(names, records):
        rows.append(FrameRow(traj, t, r.precision, r.recall, r.f1, r.mae_cm, r.tp, r.fp, r.fn, r.empty_pred))
    return rows


@dataclass(frozen=True)
class FrameRow:
    trajectory: str
    frame: int
    precision: float
    recall: float
    f1: float
    mae_cm: float
    tp: int
    fp: int
    fn: int
    empty_pred: bool


def cmd_eval(a) -> int:
    records, names = [], []
    grid_spec = None
    model = load_model(a.checkpoint) if a.checkpoint else None
    for f in _dataset_files(a.data):
        t = read_trajectory(f)
        frames = t.frames()
        grid = model.spec.grid if model else ModelSpec(grid_dim=t.grid_dim, cell_size=t.cell_size).grid
        grid_spec = grid
        if a.self_check:
            ests = [fr.gt for fr in frames]
        elif model is not None:
            ests = [s.estimate for s in rollout(model, frames, a.alpha, grid)]
        elif a.estimates:
            ests = [fr.measurement for fr in read_trajectory(Path(a.estimates) / f.name).frames()]
        else:
            raise ContractError("eval needs --checkpoint, --estimates or --self-check")
        for i, (e, fr) in enumerate(zip(ests, frames)):
            records.append(frame_metrics(e, fr, grid))
            names.append((f.stem, i))
    if not records:
        raise ContractError(f"no frames to evaluate in {a.data}")
    to_csv(_per_frame_rows(records, names), a.out)
    m = mean_metrics(records)
    flag = f" ({m['empty_frames']} empty estimates)" if m["empty_frames"] else ""
    print(f"frames {m['frames']}: precision {m['precision']:.4f} recall {m['recall']:.4f} f1 {m['f1']:.4f} "
          f"f1(frame mean) {m['f1_frame_mean']:.4f} mae {m['mae_cm']:.3f} cm{flag}; grid {grid_spec.dim}^3")
    return 0


def cmd_ablate(a) -> int:
    model = load_model(a.checkpoint)
    rates = [float(r) for r in a.rates.split(",") if r.strip()]
    data = [t.frames() for t in load_dataset(a.data, model.spec)]
    rows = sparsity_ablation(model, data, rates, a.alpha, seed=a.seed)
    text = to_csv(rows, a.out)
    sys.stdout.write(text)
    return 0


def cmd_bench(a) -> int:
    """Kernel-map build and convolution timings on a synthetic occupied slab."""
    from .sparse import SparseTensor, Var, build_kernel_map, sparse_conv

    spec = _spec(a.spec)
    rng = np.random.default_rng(a.seed)
    d = spec.grid_dim
    # ground-like surface: one occupied voxel per column plus scattered clutter
    xy = np.stack(np.meshgrid(np.arange(d), np.arange(d), indexing="ij"), -1).reshape(-1, 2)
    z = (d // 3 + rng.integers(0, 2, len(xy)))[:, None]
    coords = np.unique(np.concatenate([np.c_[xy, z, np.zeros(len(xy), int)],
                                       np.c_[xy, z, np.ones(len(xy), int)]]), axis=0)
    x = SparseTensor(coords, rng.random((len(coords), 3)).astype(np.float32))
    timings = {}

    def timed(name, fn):
        best = np.inf
        for _ in range(a.repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        timings[name] = best

    timed("kernel_map k3332", lambda: build_kernel_map(coords, coords, (3, 3, 3, 2)))
    w = Var(rng.normal(size=(54, 3, spec.widths[0])).astype(np.float32))
    timed("conv k3332 forward", lambda: sparse_conv(x, w, kernel_size=(3, 3, 3, 2)))
    model = build_model(spec, a.seed).eval()
    timed("network forward", lambda: forward(model, x))
    print(f"{len(coords)} input coordinates, {spec.grid_dim}^3 grid, best of {a.repeats}")
    for k, v in timings.items():
        print(f"  {k:<24s} {v * 1e3:9.2f} ms")
    print("  (on-board reference for one network inference: about 70 ms on a GPU)")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terrecon", description=__doc__,
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spec=True):
        sp.add_argument("--config", help="key=value file with defaults for any option")
        sp.add_argument("--seed", type=int, default=0)
        if spec:
            sp.add_argument("--spec", default="desk", choices=sorted(SPECS))
        return sp

    fmt = argparse.ArgumentDefaultsHelpFormatter
    g = common(sub.add_parser("gen-data", help="simulate trajectories into .trec files", formatter_class=fmt))
    g.add_argument("--out", required=True)
    g.add_argument("--trajectories", type=int, default=40)
    g.add_argument("--steps", type=int, default=25)
    g.add_argument("--gt-points-per-cell", type=float, default=4.0)
    g.set_defaults(func=cmd_gen_data)

    t = common(sub.add_parser("train", help="train a model on a dataset directory", formatter_class=fmt))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--rollout", type=int, default=12)
    t.add_argument("--lr-start", type=float, default=0.01)
    t.add_argument("--lr-end", type=float, default=1e-4)
    t.add_argument("--alpha", type=float, default=0.5)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--no-keep-targets", action="store_true")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--max-epochs", type=int, help="run at most this many epochs in this invocation")
    t.set_defaults(func=cmd_train)

    i = common(sub.add_parser("infer", help="write per-frame estimate clouds", formatter_class=fmt), spec=False)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--alpha", type=float, default=0.5)
    i.add_argument("--no-feedback", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = common(sub.add_parser("eval", help="per-frame metrics as CSV", formatter_class=fmt), spec=False)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    src = e.add_mutually_exclusive_group()
    src.add_argument("--checkpoint")
    src.add_argument("--estimates", help="directory written by infer")
    src.add_argument("--self-check", action="store_true", help="score the ground truth against itself")
    e.add_argument("--alpha", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    b = common(sub.add_parser("ablate", help="metrics versus removed measurement fraction", formatter_class=fmt),
               spec=False)
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--rates", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    b.add_argument("--alpha", type=float, default=0.5)
    b.set_defaults(func=cmd_ablate)

    m = common(sub.add_parser("bench", help="kernel-map and convolution timings", formatter_class=fmt))
    m.add_argument("--repeats", type=int, default=3)
    m.set_defaults(func=cmd_bench)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Load ``--config`` values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices.get(known.command)
    if sp is None:
        return
    actions = {a.dest: a for a in sp._actions}
    values = {}
    for key, raw in read_config(known.config).items():
        act = actions.get(key)
        if act is None:
            raise ContractError(f"{known.config}: unknown option {key!r} for {known.command}")
        if isinstance(act, argparse._StoreTrueAction):
            values[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            values[key] = act.type(raw) if act.type else raw
        act.required = False
    sp.set_defaults(**values)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (FormatError, ContractError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
