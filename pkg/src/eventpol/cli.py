"""Command-line pipeline driver.

Subcommands cover the full workflow: ``simulate`` a scene or ramp stimulus
into an event file, ``calibrate`` sensor thresholds or plate offsets,
``reconstruct`` a Mueller-matrix video, ``decompose`` it into physical
scalar maps and rendered images, and ``evaluate`` it against ground truth.

The environment variable ``EVENTPOL_THREADS`` sets the default compute
thread count (it is forwarded to the BLAS/OpenMP pools before numpy
loads, so it must be decided at process start).
"""

import json
import os
import sys

# Thread configuration must precede the first numpy import.
_threads = os.environ.get("EVENTPOL_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

import argparse
import time
from pathlib import Path


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="eventpol",
        description="Event-based rotating-plate ellipsometry pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scene or ramp recording")
    p.add_argument("scene", help="scene description (JSON)")
    p.add_argument("out", help="output event file")
    p.add_argument(
        "--ground-truth",
        help="output path for the ground-truth video (default: <out>.gt.mmv)",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="recover sensor/system parameters")
    p.add_argument("--mode", choices=["threshold", "offsets"], required=True)
    p.add_argument("inputs", nargs="+", help="recording file(s)")
    p.add_argument("--out", required=True, help="calibration file to write/update")
    p.add_argument("--alpha", type=float, default=0.8,
                   help="depolarization factor of the reference target")
    p.add_argument("--grid-step-deg", type=float, default=0.5)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--c-on", type=float, help="override on threshold (offsets mode)")
    p.add_argument("--c-off", type=float, help="override off threshold (offsets mode)")
    p.add_argument("--eta", type=float, default=0.0, help="refractory time, seconds")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("reconstruct", help="reconstruct a Mueller-matrix video")
    p.add_argument("events", help="event file")
    p.add_argument("out", help="output Mueller video file")
    p.add_argument("--calibration", required=True)
    p.add_argument("--irls-iters", type=int, default=5)
    p.add_argument("--prop-iters", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--kmin", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-propagation", action="store_true")
    p.add_argument("--skip-perturbation", action="store_true")
    p.add_argument("--skip-cloude", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("decompose", help="physical decomposition maps and images")
    p.add_argument("video", help="Mueller video file")
    p.add_argument("outdir", help="output directory")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("evaluate", help="error metrics against a reference video")
    p.add_argument("video", help="Mueller video file")
    p.add_argument("reference", help="reference Mueller video file")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_evaluate)

    return parser


def cmd_simulate(args):
    import numpy as np

    from eventpol import formats, scenes
    from eventpol import simulate as sim

    scene = scenes.load_scene(args.scene)
    if isinstance(scene, scenes.RampSpec):
        events, trials = sim.simulate_ramp_recording(scene)
        total = 2 * scene.repeats * (scene.duration + scene.gap)
        triggers = sim.TriggerRecord(
            t_on=np.array([0.0, total]), t_off=np.array([np.nan])
        )
        formats.write_events(
            args.out, events, triggers, scene.width, scene.height,
            omega=0.0, eta=scene.sensor.eta,
        )
        sidecar = Path(args.out).with_suffix(Path(args.out).suffix + ".trials.json")
        with open(sidecar, "w") as handle:
            json.dump({"trials": trials}, handle, indent=2)
        duration = total
        print(f"ramp recording: {len(events)} events over {duration:.3f} s")
    else:
        recording = sim.simulate_recording(scene)
        formats.write_events(
            args.out,
            recording.events,
            recording.triggers,
            scene.width,
            scene.height,
            omega=scene.omega,
            eta=scene.sensor.eta,
        )
        gt_path = args.ground_truth or str(Path(args.out)) + ".gt.mmv"
        formats.write_mueller_video(gt_path, recording.ground_truth)
        duration = recording.triggers.t_on[-1] - recording.triggers.t_on[0]
        print(
            f"simulated {scene.frames} frames, {len(recording.events)} events "
            f"over {duration * 1e3:.1f} ms"
        )
        print(f"ground truth written to {gt_path}")
    rate = len_events_rate(args.out, duration)
    print(f"mean event rate: {rate:.2f} MEv/s")
    return 0


def len_events_rate(path, duration):
    from eventpol import formats

    events, _, _ = formats.read_events(path)
    return len(events) / max(duration, 1e-12) / 1e6


def cmd_calibrate(args):
    import numpy as np

    from eventpol import calibrate as cal
    from eventpol import formats

    if args.mode == "threshold":
        trials = []
        width = height = None
        for path in args.inputs:
            events, _, meta = formats.read_events(path)
            if events.dtype.names is None or "t" not in events.dtype.names:
                raise formats.FormatError(f"{path}: not an event recording")
            sidecar = Path(path).with_suffix(Path(path).suffix + ".trials.json")
            if not sidecar.exists():
                raise formats.FormatError(
                    f"{path}: missing ramp sidecar {sidecar.name}; "
                    "threshold mode needs ramp recordings"
                )
            with open(sidecar) as handle:
                doc = json.load(handle)
            width, height = meta["width"], meta["height"]
            t = events["t"].astype(float) * 1e-6
            for trial in doc["trials"]:
                t0, dur = trial["t0"], trial["duration"]
                sel = events[(t >= t0) & (t < t0 + dur)].copy()
                sel["t"] = sel["t"] - int(round(t0 * 1e6))
                trials.append((sel, trial["a"], trial["b"]))
        c_on, c_off = cal.fit_contrast_threshold(
            trials, width, height, eta=args.eta
        )
        for name, cmap in (("on", c_on), ("off", c_off)):
            good = cmap[np.isfinite(cmap)]
            if len(good):
                print(
                    f"C_{name}: median {np.median(good):.4f}  "
                    f"p10 {np.percentile(good, 10):.4f}  "
                    f"p90 {np.percentile(good, 90):.4f}  "
                    f"uncalibrated {np.isnan(cmap).sum()}/{cmap.size}"
                )
            else:
                print(f"C_{name}: no calibrated pixels")
        phi1 = phi2 = 0.0
        omega = 0.0
        if Path(args.out).exists():
            prev = formats.read_calibration(args.out)
            phi1, phi2, omega = prev.phi_calib1, prev.phi_calib2, prev.omega
        calib = cal.CalibrationParams(
            c_on=np.where(np.isfinite(c_on), c_on, np.nan),
            c_off=np.where(np.isfinite(c_off), c_off, np.nan),
            eta=args.eta,
            phi_calib1=phi1,
            phi_calib2=phi2,
            omega=omega,
        )
        formats.write_calibration(args.out, calib)
        print(f"calibration written to {args.out}")
        return 0

    # offsets mode
    if len(args.inputs) != 1:
        raise ValueError("offsets mode takes exactly one reference recording")
    events, triggers, meta = formats.read_events(args.inputs[0])
    if args.c_on is not None and args.c_off is not None:
        c_on, c_off = args.c_on, args.c_off
        previous = None
        if Path(args.out).exists():
            previous = formats.read_calibration(args.out)
    elif Path(args.out).exists():
        previous = formats.read_calibration(args.out)
        c_on = float(np.nanmedian(np.asarray(previous.c_on, dtype=float)))
        c_off = float(np.nanmedian(np.asarray(previous.c_off, dtype=float)))
    else:
        raise ValueError(
            "offsets mode needs contrast thresholds: calibrate thresholds "
            "first or pass --c-on/--c-off"
        )
    result = cal.calibrate_qwp_offsets(
        events,
        triggers,
        c_on=c_on,
        c_off=c_off,
        alpha=args.alpha,
        eta=args.eta,
        grid_step=np.deg2rad(args.grid_step_deg),
        refine=not args.no_refine,
    )
    if result.degenerate:
        print("error: score surface is degenerate; offsets are non-identifiable",
              file=sys.stderr)
        return 3
    spread = result.score_map.max() - result.score_map.min()
    print(
        f"offsets: phi1 {np.rad2deg(result.phi1):.3f} deg, "
        f"phi2 {np.rad2deg(result.phi2):.3f} deg "
        f"(score {result.score:.3e}, grid spread {spread:.3e}"
        f"{', AMBIGUOUS' if result.ambiguous else ''})"
    )
    calib = cal.CalibrationParams(
        c_on=previous.c_on if previous is not None else c_on,
        c_off=previous.c_off if previous is not None else c_off,
        eta=args.eta,
        phi_calib1=result.phi1,
        phi_calib2=result.phi2,
        omega=meta["omega"],
    )
    formats.write_calibration(args.out, calib)
    print(f"calibration written to {args.out}")
    return 0


def cmd_reconstruct(args):
    from eventpol import formats
    from eventpol import reconstruct as rec

    events, triggers, meta = formats.read_events(args.events)
    if not Path(args.calibration).exists():
        raise formats.FormatError(f"missing calibration file {args.calibration}")
    calib = formats.read_calibration(args.calibration)
    cfg = rec.SolverConfig(
        epsilon=args.epsilon,
        irls_iterations=args.irls_iters,
        propagation_iterations=args.prop_iters,
        sigma=args.sigma,
        k_min=args.kmin,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    systems = rec.build_systems(
        events, triggers, calib, meta["width"], meta["height"]
    )
    t1 = time.perf_counter()
    matrices, valid = rec._per_pixel_stage(
        systems, cfg, use_cloude=not args.skip_cloude
    )
    from eventpol.video import MuellerVideo

    stage1 = MuellerVideo(m=matrices, valid=valid, normalized=True)
    t2 = time.perf_counter()
    if args.skip_propagation and args.skip_perturbation:
        video = stage1
    else:
        video = rec.propagate_and_refine(
            stage1,
            systems,
            cfg,
            skip_propagation=args.skip_propagation,
            skip_perturbation=args.skip_perturbation,
            use_cloude=not args.skip_cloude,
        )
    t3 = time.perf_counter()
    formats.write_mueller_video(args.out, video)
    print(f"system build: {t1 - t0:.2f} s")
    print(f"per-pixel stage: {t2 - t1:.2f} s")
    print(f"propagation stage: {t3 - t2:.2f} s")
    print(
        f"valid pixels: {int(video.valid.sum())}/{video.valid.size}; "
        f"video written to {args.out}"
    )
    return 0


def cmd_decompose(args):
    import numpy as np

    from eventpol import formats
    from eventpol import mueller as mm

    video = formats.read_mueller_video(args.video)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    frames, height, width = video.m.shape[:3]
    rows = []
    for f in range(frames):
        maps = {
            "diattenuation": np.full((height, width), np.nan),
            "polarizance": np.full((height, width), np.nan),
            "preservation": np.full((height, width), np.nan),
            "retardance": np.full((height, width), np.nan),
        }
        for y in range(height):
            for x in range(width):
                if not video.valid[f, y, x]:
                    rows.append((f, x, y, 0, *([np.nan] * 5)))
                    continue
                m = video.m[f, y, x]
                d = mm.diattenuation(m)
                p = mm.polarizance(m)
                maps["diattenuation"][y, x] = d
                maps["polarizance"][y, x] = p
                try:
                    full = mm.lu_chipman_maps(m)
                    rho, ret = full.preservation, full.retardance
                except mm.DecompositionError:
                    rho, ret = np.nan, np.nan
                maps["preservation"][y, x] = rho
                maps["retardance"][y, x] = ret
                modulated = ret * rho if np.isfinite(ret) else np.nan
                rows.append((f, x, y, 1, d, p, rho, ret, modulated))

        formats.write_pgm(outdir / f"diattenuation_{f:03d}.pgm", maps["diattenuation"])
        formats.write_pgm(outdir / f"polarizance_{f:03d}.pgm", maps["polarizance"])
        formats.write_pgm(outdir / f"preservation_{f:03d}.pgm", maps["preservation"])
        # Retardance is modulated by polarization preservation to emphasize
        # regions with a meaningful polarized response; range [0, pi].
        modulated_map = maps["retardance"] * maps["preservation"]
        formats.write_pgm(outdir / f"retardance_{f:03d}.pgm", modulated_map / np.pi)

        tile = np.zeros((4 * height, 4 * width))
        for i in range(4):
            for j in range(4):
                block = video.m[f, :, :, i, j]
                block = np.where(video.valid[f], block, 0.0)
                tile[i * height : (i + 1) * height, j * width : (j + 1) * width] = block
        formats.write_pgm(outdir / f"mueller_{f:03d}.pgm", (tile + 1.0) / 2.0)

    csv_path = outdir / "decomposition.csv"
    with open(csv_path, "w") as handle:
        handle.write(
            "frame,x,y,valid,diattenuation,polarizance,preservation,"
            "retardance,retardance_modulated\n"
        )
        for row in rows:
            f, x, y, valid, *vals = row
            text = ",".join("" if not np.isfinite(v) else f"{v:.12g}" for v in vals)
            handle.write(f"{f},{x},{y},{valid},{text}\n")
    print(f"decomposition maps for {frames} frames written to {outdir}")
    return 0


def cmd_evaluate(args):
    import numpy as np

    from eventpol import formats

    video = formats.read_mueller_video(args.video)
    reference = formats.read_mueller_video(args.reference)
    if video.m.shape != reference.m.shape:
        raise formats.FormatError(
            f"shape mismatch: {video.m.shape[:3]} vs {reference.m.shape[:3]}"
        )
    mse, mae, per_mse, per_mae = video.error_metrics(reference)
    if args.json:
        print(
            json.dumps(
                {
                    "mse": mse,
                    "mae": mae,
                    "per_frame_mse": [None if np.isnan(v) else v for v in per_mse],
                    "per_frame_mae": [None if np.isnan(v) else v for v in per_mae],
                }
            )
        )
    else:
        for f, (m2, m1) in enumerate(zip(per_mse, per_mae)):
            print(f"frame {f}: MSE {m2:.6f}  MAE {m1:.6f}")
        print(f"aggregate: MSE {mse:.6f}  MAE {mae:.6f}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
