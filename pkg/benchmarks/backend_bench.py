#!/usr/bin/env python3
"""Compare the compiled training kernels against the pure-Python reference.

Each backend runs in its own subprocess so the normal import-time selection
path (PHASEFORK_BACKEND) is what gets exercised, not a monkeypatched module.
The parent checks that both backends produce bit-identical checkpoints and
reports wall-clock throughput.

Usage:
    python3 benchmarks/backend_bench.py
    python3 benchmarks/backend_bench.py --updates 600 --task key_door_sparse
"""

import argparse
import json
import os
import subprocess
import sys
import time


def worker(task: str, updates: int, seed: int):
    from phasefork import envs, learner, rewards
    from phasefork._backend import backend_name

    env = envs.make_env(task)
    hyp = rewards.builtin_family(task)[rewards.dense_bootstrap_id(task)]
    compiled = rewards.compile_for(hyp, env, calibration_seed=5417)
    ck = learner.init_checkpoint(env, seed)
    cfg = learner.TrainConfig()

    # untimed warmup so one-time setup does not pollute the measurement
    ck, _ = learner.train(ck, env, compiled, 5, cfg)

    t0 = time.perf_counter()
    ck, log = learner.train(ck, env, compiled, updates, cfg)
    dt = time.perf_counter() - t0

    ev = learner.evaluate(ck, env, learner.EvalConfig(n_episodes=8, seed_root=1806))
    print(json.dumps({
        "backend": backend_name(),
        "seconds": dt,
        "updates": updates,
        "updates_per_s": updates / dt,
        "fingerprint": learner.fingerprint(ck),
        "success": ev.success_mean,
        "diverged": log.diverged,
    }))


def run_backend(choice: str, args) -> dict:
    env = dict(os.environ, PHASEFORK_BACKEND=choice)
    cmd = [sys.executable, os.path.abspath(__file__), "--worker",
           "--task", args.task, "--updates", str(args.updates),
           "--seed", str(args.seed)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if out.returncode != 0:
        sys.stderr.write(out.stderr)
        raise SystemExit("backend %r failed" % choice)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="line_balance_dense")
    ap.add_argument("--updates", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.worker:
        worker(args.task, args.updates, args.seed)
        return

    from phasefork._backend import have_compiled

    choices = ["pure"] + (["compiled"] if have_compiled else [])
    if len(choices) == 1:
        print("compiled extension not importable; timing pure backend only")

    results = [run_backend(c, args) for c in choices]

    print("task=%s updates=%d seed=%d" % (args.task, args.updates, args.seed))
    print("%-10s %10s %14s %10s" % ("backend", "seconds", "updates/s", "success"))
    for r in results:
        print("%-10s %10.3f %14.1f %10.4f"
              % (r["backend"], r["seconds"], r["updates_per_s"], r["success"]))

    if len(results) == 2:
        a, b = results
        if a["fingerprint"] != b["fingerprint"]:
            print("FINGERPRINT MISMATCH: %s vs %s"
                  % (a["fingerprint"][:16], b["fingerprint"][:16]))
            raise SystemExit(1)
        print("checkpoints bit-identical (%s...)" % a["fingerprint"][:16])
        print("speedup: %.1fx" % (a["seconds"] / b["seconds"]))


if __name__ == "__main__":
    main()
