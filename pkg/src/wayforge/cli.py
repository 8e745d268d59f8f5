"""Command-line pipeline driver: record, augment, train, finetune, rollout,
eval, replay, export, and serve — thin wrappers over the library."""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from .augment import AugmentationConfig, build_dataset, segment_episode
from .dataset import Dataset, mix_sources
from .episode import EpisodeLog
from .evaluation import EvalReport, episode_seed, evaluate_policy
from .hitl import CorrectionConfig, append_to_corrections, scripted_corrector, start_replay
from .kinematics import default_models
from .policy.checkpoint import load_checkpoint, save_checkpoint
from .policy.encoding import decode_query
from .policy.training import PolicyConfig, PolicyLowLevel, fine_tune, predict_trajectory, train
from .rollout import ScriptedExpert, execute_rollout, record_demos
from .trajectory import resample_uniform
from .world import DomainParams
from .workspace import Workspace


def _domain(name: str, offset: str | None = None) -> DomainParams:
    off = tuple(float(v) for v in offset.split(",")) if offset else (0.0, 0.0, 0.0)
    return DomainParams.named(name, obs_offset=off)


@click.group()
@click.option("--workspace", "workspace_root", default=None, help="Workspace root (or WAYFORGE_WORKSPACE).")
@click.pass_context
def main(ctx, workspace_root):
    """Desk-scale demonstration augmentation and waypoint-policy workbench."""
    ctx.obj = Workspace.locate(workspace_root)


@main.command()
@click.pass_obj
def init(ws: Workspace):
    """Create the workspace layout with built-in tasks and arm models."""
    ws.init()
    click.echo(f"workspace ready at {ws.root}")


@main.command()
@click.option("--task", "task_id", required=True)
@click.option("--n", default=5, show_default=True)
@click.option("--domain", default="nominal", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, help="Output directory (default: demos/<task>-<domain>-seed...).")
@click.pass_obj
def record(ws: Workspace, task_id, n, domain, seed, out):
    """Record successful scripted-expert demonstrations."""
    ws.init()
    task = ws.load_task(task_id)
    dom = _domain(domain)
    logs = record_demos(task, n, dom, default_models(), seed=seed)
    out_dir = Path(out) if out else ws.demo_dir(task_id, dom.name, seed)
    for i, log in enumerate(logs):
        ws.write_text(out_dir / f"demo-{i:04d}.jsonl", log.to_jsonl())
    click.echo(f"{len(logs)} demos -> {out_dir}")


@main.command()
@click.option("--demos", "demos_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--count", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True)
@click.pass_obj
def augment(ws: Workspace, demos_dir, config_path, count, seed, out_dir):
    """Grow demonstrations into a validated dataset."""
    segments = []
    for path in sorted(Path(demos_dir).glob("*.jsonl")):
        segments.extend(segment_episode(EpisodeLog.read(path)))
    if config_path:
        cfg = AugmentationConfig.from_dict(json.loads(Path(config_path).read_text()))
        cfg = AugmentationConfig.from_dict({**cfg.to_dict(), "target_count": count, "seed": seed})
    else:
        cfg = AugmentationConfig(target_count=count, seed=seed)
    ds = build_dataset(segments, cfg, default_models())
    ds.save(out_dir)
    click.echo(f"{len(ds)} validated entries -> {out_dir}")


@main.command("mix")
@click.option("--a", "dir_a", required=True, type=click.Path(exists=True))
@click.option("--b", "dir_b", required=True, type=click.Path(exists=True))
@click.option("--ratio-a", default=0.7, show_default=True)
@click.option("--n", required=True, type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True)
def mix(dir_a, dir_b, ratio_a, n, seed, out_dir):
    """Mix two datasets at a given ratio (e.g. two simulator domains)."""
    ds = mix_sources(Dataset.load(dir_a), Dataset.load(dir_b), ratio_a, n, seed)
    ds.save(out_dir)
    click.echo(f"{len(ds)} entries ({ds.manifest()['by_source']}) -> {out_dir}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--arch", type=click.Choice(["gru", "lstm", "attention"]), default="lstm", show_default=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True)
def train_cmd(data_dir, arch, epochs, seed, out_path):
    """Train a waypoint policy on a dataset."""
    ds = Dataset.load(data_dir)
    cfg = PolicyConfig(architecture=arch, max_epochs=epochs, seed=seed)
    policy, report = train(ds, cfg)
    save_checkpoint(policy, out_path)
    click.echo(
        f"trained {report.stop_epoch + 1} epochs "
        f"(best {report.best_epoch}, val {report.val_losses[report.best_epoch]:.3e}, "
        f"test {report.test_loss:.3e}) -> {out_path}"
    )


@main.command()
@click.option("--base", "base_path", required=True, type=click.Path(exists=True))
@click.option("--d", "d_dir", required=True, type=click.Path(exists=True))
@click.option("--dprime", "dp_dir", required=True, type=click.Path(exists=True))
@click.option("--epochs", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True)
def finetune(base_path, d_dir, dp_dir, epochs, seed, out_path):
    """Fine-tune a policy with balanced batches from D and corrections D'."""
    policy = load_checkpoint(base_path)
    d = Dataset.load(d_dir)
    dp = Dataset.load(dp_dir)
    cfg = PolicyConfig(**{**policy.config.to_dict(), "max_epochs": epochs, "seed": seed})
    tuned, report = fine_tune(policy, d, dp, cfg)
    save_checkpoint(tuned, out_path)
    tallies = set(report.batch_tallies)
    click.echo(f"fine-tuned {report.stop_epoch + 1} epochs, batch composition {sorted(tallies)} -> {out_path}")


@main.command()
@click.option("--task", "task_id", required=True)
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--domain", default="nominal", show_default=True)
@click.option("--domain-offset", default=None, help="Systematic observation offset, e.g. '0.03,0,0'.")
@click.option("--out", default=None, help="Write the episode log here.")
@click.pass_obj
def rollout(ws: Workspace, task_id, ckpt, seed, domain, domain_offset, out):
    """Run one policy episode and print its outcome."""
    task = ws.load_task(task_id)
    policy = load_checkpoint(ckpt)
    res = execute_rollout(
        task, PolicyLowLevel(policy), seed, _domain(domain, domain_offset), default_models()
    )
    if out:
        ws.write_text(Path(out), res.log.to_jsonl())
    click.echo(json.dumps(res.outcome.to_dict()))
    if not res.outcome.success:
        sys.exit(2)


@main.command("eval")
@click.option("--task", "task_id", required=True)
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True))
@click.option("--n", default=100, show_default=True)
@click.option("--domain", default="nominal", show_default=True)
@click.option("--domain-offset", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, help="Report path (default under reports/).")
@click.pass_obj
def eval_cmd(ws: Workspace, task_id, ckpt, n, domain, domain_offset, seed, out):
    """Evaluate a policy over seeded episodes and write an EvalReport."""
    ws.init()
    task = ws.load_task(task_id)
    policy = load_checkpoint(ckpt)
    dom = _domain(domain, domain_offset)
    report = evaluate_policy(
        task, PolicyLowLevel(policy), n, dom, default_models(), seed,
        extra_digest={"checkpoint": Path(ckpt).name},
    )
    out_path = Path(out) if out else ws.report_path(
        f"{task_id}-{dom.name}-n{n}-seed{seed}-{report.config_digest}"
    )
    ws.write_text(out_path, report.to_json())
    click.echo(report.to_json().strip())


@main.command()
@click.option("--episode", "episode_path", required=True, type=click.Path(exists=True))
@click.option("--offset", default="0.03,0,0", show_default=True, help="Known systematic offset for the scripted corrector.")
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--beta", default=0.05, show_default=True)
@click.option("--out-dataset", default=None, help="Append successful corrections to this dataset directory.")
@click.option("--out", default=None, help="Write the corrected episode log here.")
@click.pass_obj
def replay(ws: Workspace, episode_path, offset, alpha, beta, out_dataset, out):
    """Replay a failed episode with the scripted oracle corrector."""
    log = EpisodeLog.read(episode_path)
    task = ws.load_task(log.task_id)
    cfg = CorrectionConfig(alpha=alpha, beta=beta)
    session = start_replay(log, cfg, task, default_models(), session_id=Path(episode_path).stem)
    corrector = scripted_corrector(tuple(float(v) for v in offset.split(",")))
    session.run(corrector)
    corrected, outcome = session.finalize()
    if out:
        ws.write_text(Path(out), corrected.to_jsonl())
    added = 0
    if out_dataset and outcome.success:
        path = Path(out_dataset)
        ds = Dataset.load(path) if (path / "manifest.json").exists() else Dataset()
        added = append_to_corrections(ds, corrected)
        ds.save(path)
    click.echo(json.dumps({"outcome": outcome.to_dict(), "corrections_added": added}))
    if not outcome.success:
        sys.exit(2)


@main.command()
@click.option("--episode", "episode_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt", default=None, type=click.Path(exists=True), help="Also export the policy's predictions for each logged query.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", required=True)
def export(episode_path, ckpt, fmt, out):
    """Export per-axis trajectory tables (actual vs predicted) for plotting."""
    log = EpisodeLog.read(episode_path)
    policy = load_checkpoint(ckpt) if ckpt else None
    rows = export_rows(log, policy)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()) if rows else ["segment"])
        writer.writeheader()
        writer.writerows(rows)
        out.write_text(buf.getvalue())
    else:
        out.write_text(json.dumps(rows, indent=2))
    click.echo(f"{len(rows)} rows -> {out}")


def export_rows(log: EpisodeLog, policy=None, horizon: int = 100) -> list:
    """Plot-ready per-waypoint rows for every segment of an episode."""
    rows = []
    for seg in segment_episode(log):
        actual = seg.trajectory
        if len(actual) != horizon:
            actual = resample_uniform(actual, horizon)
        pred = None
        if policy is not None:
            sub = seg.commanded if seg.commanded is not None else seg.subtask
            from .policy.encoding import encode_query

            pred = predict_trajectory(policy, encode_query(sub), arm=seg.subtask.arm)
        for i, w in enumerate(actual.waypoints):
            row = {
                "segment": seg.subtask.id,
                "segment_index": seg.subtask.index,
                "step": i,
                "t": round(w.timestamp, 6),
                "x": w.pose.position[0],
                "y": w.pose.position[1],
                "z": w.pose.position[2],
            }
            if pred is not None:
                p = pred.positions()[i]
                row.update(
                    pred_x=p[0], pred_y=p[1], pred_z=p[2],
                    delta=float(np.linalg.norm(p - w.pose.position)),
                )
            rows.append(row)
    return rows


@main.command()
@click.option("--bind", default="127.0.0.1:8700", show_default=True)
@click.pass_obj
def serve(ws: Workspace, bind):
    """Serve the session WebSocket protocol and the read-only HTTP API."""
    import uvicorn

    from .service.app import create_app

    ws.init()
    host, _, port = bind.partition(":")
    uvicorn.run(create_app(ws), host=host, port=int(port or 8700), log_level="warning")


def cli_entry():  # pragma: no cover
    main()


if __name__ == "__main__":  # pragma: no cover
    main()
