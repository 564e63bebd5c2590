"""Config-driven experiment runner.

Subcommands: train, eval, bec-analytic, classify, report.  Each reads a
sectioned config file, writes its artifacts under the output directory,
and stamps every JSON artifact with the config digest so ``report``
can refuse to aggregate results from mismatched configurations.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import becgame
from . import rng as rngmod
from .checkpoint import load_checkpoint, save_checkpoint
from .classify import GameOrdering, classify_ordering, render_table
from .config import RunConfig, load_config
from .errors import CheckpointError, ConfigError, UsageError
from .finite import simplified_erasure_problem
from .game import TrainConfig, alternating_train, pretrain_prover
from .stress import metrics_from_acceptance, stress_test, worst_case_messages
from .tasks import export_batch_csv, make_task

OUT_ROOT_ENV = "PVGLAB_OUT_ROOT"


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    if override:
        path = Path(override)
    elif cfg.get("run", "out"):
        path = Path(cfg.get("run", "out"))
    else:
        root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
        path = root / time.strftime("run-%Y%m%d-%H%M%S")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _task_from_config(section: dict):
    if section["task"] == "bec":
        return make_task(
            "bec",
            tokens=section["tokens"],
            restrict_channel=section["restrict_channel"],
            width=section["width"],
        )
    if section["task"] == "plus":
        return make_task("plus", grid=section["grid"], width=section["width"])
    raise ConfigError(f"train.task: unknown task {section['task']!r}")


def _train_config(section: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        prover_lr=section["prover_lr"],
        verifier_lr=section["verifier_lr"],
        batch_size=section["batch_size"],
        verifier_steps=section["verifier_steps"],
        max_steps=section["max_steps"],
        label_smoothing=section["label_smoothing"],
        temperature=section["temperature"],
        collaborative=section["mode"] == "collaborative",
        adaptive=section["adaptive"],
        accuracy_threshold=section["accuracy_threshold"],
        streak_length=section["streak_length"],
        max_prover_steps=section["max_prover_steps"],
        snapshot_every=section["snapshot_every"],
        seed=seed,
    )


def cmd_train(cfg: RunConfig, out: Path, seed: int, quiet: bool) -> int:
    section = cfg.section("train")
    if section["mode"] not in ("pvg", "collaborative"):
        raise ConfigError("train.mode: must be 'pvg' or 'collaborative'")
    task = _task_from_config(section)
    tc = _train_config(section, seed)
    agents = task.build_agents(rngmod.stream(seed, rngmod.INIT))
    if section["pretrain_steps"] > 0:
        result = pretrain_prover(task, agents, section["pretrain_steps"], tc)
        if not quiet:
            print(f"pretrained {section['pretrain_steps']} steps, "
                  f"classification accuracy {result.class_accuracy:.3f}")

    eval_batch = task.sample_batch(
        section["eval_size"], rngmod.stream(seed + 1_000_003, rngmod.EVAL),
        tc.collaborative,
    )
    metrics_path = out / "metrics.jsonl"
    collab = tc.collaborative

    with open(metrics_path, "w") as sink:
        sink.write(json.dumps({"config_digest": cfg.digest, "seed": seed}) + "\n")

        def hook(row):
            sink.write(json.dumps(row) + "\n")
            if not quiet and row["step"] % max(1, section["eval_every"]) == 0:
                print(f"step {row['step']:5d} accuracy {row['accuracy']:.3f}")
            if not section["stop_on_robust"]:
                return False
            if row["step"] % max(1, section["eval_every"]) != 0:
                return False
            if row["accuracy"] < 0.9:
                return False
            _, acc = worst_case_messages(task, agents, eval_batch)
            m = metrics_from_acceptance("worst-case-messages", eval_batch, acc)
            if collab:
                return (
                    m.recall >= section["target_recall"]
                    and m.precision <= section["collab_precision_max"]
                )
            return (
                m.recall >= section["target_recall"]
                and m.precision >= section["target_precision"]
            )

        result = alternating_train(task, agents, tc, on_step=hook)

    task_desc = {"name": task.name, "section": section}
    save_checkpoint(
        out / "checkpoint.json", agents, task_desc, result.steps_done, seed, cfg.digest
    )
    if not quiet:
        print(f"trained {result.steps_done} steps ({result.stopped_reason}); "
              f"artifacts in {out}")
    return 0


def cmd_eval(cfg: RunConfig, out: Path, seed: int, quiet: bool) -> int:
    section = cfg.section("eval")
    if not section["checkpoint"]:
        raise ConfigError("eval.checkpoint: a checkpoint path is required")
    agents, meta = load_checkpoint(section["checkpoint"])
    train_section = dict(meta["task"]["section"])
    task = _task_from_config(train_section)
    mode = train_section["mode"]
    eval_batch = task.sample_batch(
        section["eval_size"], rngmod.stream(seed + 2_000_003, rngmod.EVAL)
    )
    retrain_cfg = TrainConfig(
        prover_lr=section["retrain_lr"],
        batch_size=section["retrain_batch"],
        max_steps=1,
        seed=seed,
    )
    report = stress_test(
        task, agents, mode, eval_batch,
        retrain_steps=section["retrain_steps"], config=retrain_cfg,
    )
    payload = report.to_json_dict()
    payload["config_digest"] = cfg.digest
    payload["checkpoint_digest"] = meta["config_digest"]
    with open(out / "stress_report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    text = report.render()
    (out / "stress_report.txt").write_text(text + "\n")
    if not quiet:
        print(text)
    return 0


def cmd_bec_analytic(cfg: RunConfig, out: Path, seed: int, quiet: bool) -> int:
    section = cfg.section("bec_analytic")
    rng = rngmod.stream(seed, rngmod.DATA)
    summaries = []
    for i in range(section["inits"]):
        if section["inits"] == 1:
            a, b = section["init_a"], section["init_b"]
        else:
            a, b = float(rng.uniform(0.01, 0.99)), float(rng.uniform(0.01, 0.99))
        model = becgame.ReducedBEC(a, b, section["lam"])
        result = becgame.simulate(
            section["mode"], model,
            lr=section["lr"], steps=section["steps"], tol=section["tol"],
        )
        result.write_csv(out / f"trajectory_{i:03d}.csv")
        summaries.append(
            {
                "init": {"a": a, "b": b},
                "final": {"a": result.final.a, "b": result.final.b},
                "q": dict(zip(("q0", "q1", "q2"), result.final_q.as_tuple())),
                "converged": result.converged,
                "steps": result.steps_taken,
            }
        )
    payload = {
        "config_digest": cfg.digest,
        "mode": section["mode"],
        "lam": section["lam"],
        "runs": summaries,
    }
    with open(out / "fixed_points.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    if not quiet:
        done = sum(s["converged"] for s in summaries)
        print(f"{done}/{len(summaries)} runs converged; summary in {out}")
    return 0


def cmd_classify(cfg: RunConfig, out: Path, seed: int, quiet: bool) -> int:
    section = cfg.section("classify")
    problem = simplified_erasure_problem()
    reports = {}
    for ordering in GameOrdering:
        reports[ordering] = classify_ordering(
            problem, ordering,
            grid_resolution=section["grid_resolution"],
            tolerance=section["tolerance"],
        )
    payload = {
        "config_digest": cfg.digest,
        "reports": [r.to_json_dict() for r in reports.values()],
    }
    with open(out / "equilibrium_report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    table = render_table(reports)
    (out / "equilibrium_table.txt").write_text(table + "\n")
    if not quiet:
        print(table)
    return 0


def cmd_report(cfg: RunConfig, out: Path, seed: int, quiet: bool) -> int:
    digests = set()
    collected = {}
    for name in ("stress_report.json", "fixed_points.json", "equilibrium_report.json"):
        path = out / name
        if path.exists():
            with open(path) as fh:
                data = json.load(fh)
            digests.add(data.get("config_digest"))
            collected[name] = data
    metrics_path = out / "metrics.jsonl"
    if metrics_path.exists():
        with open(metrics_path) as fh:
            header = json.loads(fh.readline())
            digests.add(header.get("config_digest"))
            rows = [json.loads(line) for line in fh if line.strip()]
        collected["metrics.jsonl"] = {"steps": len(rows)}
    if not collected:
        raise UsageError(f"no artifacts to aggregate in {out}")
    if len(digests) > 1:
        raise UsageError(
            f"config digest mismatch across artifacts: {sorted(d or '?' for d in digests)}"
        )
    summary = {"config_digest": digests.pop() if digests else None, "artifacts": collected}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    if not quiet:
        print(f"aggregated {len(collected)} artifacts into {out / 'summary.json'}")
    return 0


def cmd_export_batch(cfg: RunConfig, out: Path, seed: int, quiet: bool) -> int:
    section = cfg.section("train")
    task = _task_from_config(section)
    batch = task.sample_batch(
        section["eval_size"], rngmod.stream(seed, rngmod.DATA),
        section["mode"] == "collaborative",
    )
    path = out / f"{task.name}_batch.csv"
    export_batch_csv(batch, path)
    if not quiet:
        print(f"wrote {len(batch)} examples to {path}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "bec-analytic": cmd_bec_analytic,
    "classify": cmd_classify,
    "report": cmd_report,
    "export-batch": cmd_export_batch,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pvglab", description="prover-verifier game laboratory"
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a config file")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        seed = args.seed if args.seed is not None else cfg.get("run", "seed")
        quiet = args.quiet or cfg.get("run", "quiet")
        out = _out_dir(cfg, args.out)
        return COMMANDS[args.command](cfg, out, seed, quiet)
    except (ConfigError, UsageError, CheckpointError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
