"""Command-line client for the forecasting service.

Every command builds a request and sends it through the HTTP API.  By
default the service app is mounted in-process (no network, same math);
``--server`` points the same commands at a remote instance instead.
"""

from __future__ import annotations

import asyncio
import json
import os
import time

import click
import httpx

from . import __version__
from .errors import DriftcastError
from .harness import parse_experiment_ini

SERVER_ENV = "DRIFTCAST_SERVER"


def call_service(server: str | None, path: str, payload: dict | None = None, method: str = "post") -> dict:
    """POST/GET to a remote server, or to the in-process app when unset."""
    if server:
        try:
            with httpx.Client(base_url=server, timeout=None) as client:
                resp = client.request(method, path, json=payload)
        except httpx.HTTPError as exc:
            raise click.ClickException(f"cannot reach server {server}: {exc}") from exc
    else:
        from .service.app import create_app

        async def _call() -> httpx.Response:
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport, base_url="http://driftcast.local", timeout=None) as client:
                return await client.request(method, path, json=payload)

        resp = asyncio.run(_call())
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
    return resp.json()


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise click.ClickException(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return parse_experiment_ini(fh.read())
        except DriftcastError as exc:
            raise click.ClickException(f"bad config {path}: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _scenario_payload(preset: str | None, scenario_file: str | None, seed: int | None) -> dict:
    spec: dict = {}
    if scenario_file:
        if not os.path.exists(scenario_file):
            raise click.ClickException(f"scenario file not found: {scenario_file}")
        from .harness import parse_scenario_ini

        with open(scenario_file, "r", encoding="utf-8") as fh:
            try:
                spec = vars(parse_scenario_ini(fh.read())).copy()
            except DriftcastError as exc:
                raise click.ClickException(f"bad scenario file {scenario_file}: {exc}") from exc
    elif preset:
        spec = {"preset": preset}
    if seed is not None:
        spec["seed"] = seed
    return spec


def _emit_experiment_outputs(data: dict, out_dir: str) -> None:
    _write_text(os.path.join(out_dir, "steps.csv"), data["steps_csv"])
    _write_text(os.path.join(out_dir, "summary.csv"), data["summary_csv"])
    summary = dict(data["summary"])
    summary["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_text(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2, sort_keys=True))
    click.echo(f"wrote steps.csv, summary.csv, summary.json to {out_dir}")


def _print_cells(data: dict, period: str = "post") -> None:
    rows = [c for c in data["cells"] if c["period"] == period]
    if not rows:
        return
    click.echo(f"{period}-period MAE (normalized units, mean +/- std over seeds):")
    for c in rows:
        click.echo(
            f"  context={c['context']:<11} strategy={c['strategy']:<7} "
            f"{c['mean_mae']:.4f} +/- {c['std_mae']:.4f} (n={c['n_seeds']})"
        )


server_option = click.option(
    "--server",
    envvar=SERVER_ENV,
    default=None,
    help="Base URL of a running service; defaults to the in-process app.",
)


@click.group()
@click.version_option(version=__version__, prog_name="driftcast")
def main() -> None:
    """Continual-learning energy forecasting: data, training, experiments."""


@main.command("gen-synthetic")
@click.option("--scenario", "preset", default="default", show_default=True, help="Scenario preset name.")
@click.option("--scenario-file", default=None, help="INI file with a [scenario] section (overrides --scenario).")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", required=True, help="Output CSV path.")
@server_option
def gen_synthetic_cmd(preset: str, scenario_file: str | None, seed: int | None, out: str, server: str | None) -> None:
    """Generate a synthetic regime-shift dataset as CSV."""
    payload = {"scenario": _scenario_payload(preset, scenario_file, seed)}
    data = call_service(server, "/synthetic/generate", payload)
    _write_text(out, data["csv_text"])
    means = ", ".join(f"{k}={v:.2f}" for k, v in data["channel_means"].items())
    click.echo(f"wrote {data['rows']} rows to {out} ({data['start']} .. {data['end']}; means: {means})")


@main.command("pretrain")
@click.option("--config", "config_path", default=None, help="Experiment INI config.")
@click.option("--context", default="none", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="Checkpoint JSON path.")
@server_option
def pretrain_cmd(config_path: str | None, context: str, seed: int, out: str, server: str | None) -> None:
    """Pretrain a backbone checkpoint on the configured data."""
    cfg = _read_config(config_path)
    payload = {
        "source": cfg.get("source", "synthetic"),
        "scenario": {"preset": cfg["scenario"]} if isinstance(cfg.get("scenario"), str) else cfg.get("scenario"),
        "csv_text": cfg.get("csv_text"),
        "context": context,
        "seed": seed,
    }
    for key in (
        "pretrain_hours",
        "validation_hours",
        "channels",
        "num_blocks",
        "kernel_size",
        "dilations",
        "lookback",
        "horizon",
        "pretrain_epochs",
        "pretrain_lr",
        "pretrain_batch",
        "patience",
    ):
        if cfg.get(key) is not None:
            payload[key] = cfg[key]
    payload = {k: v for k, v in payload.items() if v is not None}
    data = call_service(server, "/pretrain", payload)
    _write_text(out, json.dumps(data["checkpoint"]))
    click.echo(
        f"checkpoint {data['checkpoint_hash']} -> {out} "
        f"(val MAE {data['val_mae']:.4f} after {data['epochs_run']} epochs)"
    )


def _experiment_payload(config_path: str | None, seeds: str | None, workers: int | None) -> dict:
    payload = _read_config(config_path)
    if isinstance(payload.get("scenario"), str):
        payload["scenario"] = {"preset": payload["scenario"]}
    if seeds:
        payload["seeds"] = [int(s) for s in seeds.split(",") if s.strip()]
    if workers is not None:
        payload["workers"] = workers
    return payload


@main.command("run")
@click.option("--config", "config_path", default=None, help="Experiment INI config.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--seeds", default=None, help="Comma-separated seed list override.")
@click.option("--workers", type=int, default=None, help="Parallel worker processes.")
@server_option
def run_cmd(config_path: str | None, out: str, seeds: str | None, workers: int | None, server: str | None) -> None:
    """Run the full experiment matrix and write CSV/JSON reports."""
    data = call_service(server, "/experiments/run", _experiment_payload(config_path, seeds, workers))
    _emit_experiment_outputs(data, out)
    _print_cells(data)
    if data["failures"]:
        click.echo(f"WARNING: {len(data['failures'])} cell(s) failed; see summary.json", err=True)


@main.command("ablate-context")
@click.option("--config", "config_path", default=None, help="Experiment INI config.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--seeds", default=None, help="Comma-separated seed list override.")
@click.option("--workers", type=int, default=None)
@server_option
def ablate_context_cmd(config_path, out, seeds, workers, server) -> None:
    """Context ablation (none / mobility / temperature / both) with FSNet."""
    data = call_service(server, "/experiments/ablate-context", _experiment_payload(config_path, seeds, workers))
    _emit_experiment_outputs(data, out)
    _print_cells(data)
    for row in data["summary"].get("context_deltas", []):
        parts = [f"{k}={v:+.4f}" for k, v in row.items() if k not in ("period", "strategy")]
        click.echo(f"  deltas [{row['period']}]: {'  '.join(parts)}")


@main.command("compare-strategies")
@click.option("--config", "config_path", default=None, help="Experiment INI config.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--seeds", default=None, help="Comma-separated seed list override.")
@click.option("--workers", type=int, default=None)
@server_option
def compare_strategies_cmd(config_path, out, seeds, workers, server) -> None:
    """Strategy comparison (frozen / OGD / ER / DER++ / FSNet)."""
    data = call_service(server, "/experiments/compare-strategies", _experiment_payload(config_path, seeds, workers))
    _emit_experiment_outputs(data, out)
    _print_cells(data)


@main.command("gradcheck")
@click.option("--trials", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@server_option
def gradcheck_cmd(trials: int, seed: int, server: str | None) -> None:
    """Finite-difference verification of every differentiable operation."""
    data = call_service(server, "/gradcheck", {"trials": trials, "seed": seed})
    for op, err in data["per_op"].items():
        click.echo(f"  {op:<16} max rel err {err:.3e}")
    click.echo(
        f"gradcheck {'PASSED' if data['passed'] else 'FAILED'}: "
        f"max rel err {data['max_rel_err']:.3e} over {data['trials']} trials "
        f"({data['elapsed_seconds']:.2f}s)"
    )
    if not data["passed"]:
        raise click.ClickException("gradient check failed")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(host: str, port: int) -> None:
    """Run the HTTP service with uvicorn."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
