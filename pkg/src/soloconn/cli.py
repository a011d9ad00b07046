"""Command-line client for the service.

Every subcommand is a thin wrapper over one API endpoint. By default the
app runs in-process (no daemon needed); pass --server to target a running
instance instead. Exit codes: 0 success, 1 usage, 2 numeric failure, 3 I/O.
"""

from __future__ import annotations

import json
import sys
from typing import Any, Optional

import click

from .config import apply_overrides, nest_flat, parse_config_file, parse_value, run_config_from_flat
from .errors import ConfigError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

_CATEGORY_EXITS = {"usage": EXIT_USAGE, "numeric": EXIT_NUMERIC, "io": EXIT_IO}


class Client:
    """POSTs to either an in-process app or a remote server."""

    def __init__(self, server: Optional[str]):
        if server:
            import httpx
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient
            from .service.app import create_app
            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        resp = self._client.post(path, json=payload)
        try:
            body = resp.json()
        except ValueError:
            body = {"error": {"category": "io", "message": resp.text[:500]}}
        return resp.status_code, body


def _exit_for(status: int, body: dict) -> int:
    if 200 <= status < 300:
        return EXIT_OK
    if status == 422:  # request-model validation
        return EXIT_USAGE
    category = (body.get("error") or {}).get("category", "io")
    return _CATEGORY_EXITS.get(category, EXIT_IO)


def _fail_message(body: dict) -> str:
    err = body.get("error")
    if err:
        return f"error ({err.get('category')}): {err.get('message')}"
    return json.dumps(body)


def _load_flat_config(config_path: Optional[str], overrides: dict[str, Any],
                      sets: tuple[str, ...]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    if config_path:
        flat = parse_config_file(config_path)
    for pair in sets:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        flat[key.strip()] = parse_value(value)
    flat = apply_overrides(flat, overrides)
    run_config_from_flat(flat)  # validate locally: bad keys fail before any request
    return flat


def _common_options(fn):
    fn = click.option("--config", "config_path", type=str, default=None,
                      help="key=value config file")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--mode", type=str, default=None)(fn)
    fn = click.option("--rank", type=int, default=None, help="adapter rank")(fn)
    fn = click.option("--sparsity", type=float, default=None)(fn)
    fn = click.option("--span", type=int, default=None)(fn)
    fn = click.option("--gate", type=str, default=None,
                      help="homotopy | plain_vector")(fn)
    fn = click.option("--set", "sets", multiple=True,
                      help="override any config key, e.g. --set optim.steps=500")(fn)
    return fn


def _overrides(seed, mode, rank, sparsity, span, gate) -> dict[str, Any]:
    return {
        "seed": seed,
        "mode": mode,
        "solo.rank": rank,
        "solo.sparsity": sparsity,
        "solo.span": span,
        "solo.gate_variant": gate,
    }


@click.group()
@click.option("--server", default=None, help="remote service URL (default: run in-process)")
@click.pass_context
def cli(ctx, server):
    ctx.obj = Client(server)


def _train_command(client: Client, endpoint: str, flat: dict[str, Any], out: str,
                   base: Optional[str]) -> int:
    payload: dict[str, Any] = {"config": nest_flat(flat), "out_dir": out}
    if base:
        payload["base_checkpoint"] = base
    status, body = client.post(endpoint, payload)
    if status != 200:
        click.echo(_fail_message(body), err=True)
        return _exit_for(status, body)
    click.echo(
        f"{body['mode']}: {body['steps']} steps, eval loss "
        f"{body['initial_eval_loss']:.4f} -> {body['final_eval_loss']:.4f} "
        f"(accuracy {body['final_eval_accuracy']:.4f})"
    )
    click.echo(f"checkpoint: {body['checkpoint_path']}")
    click.echo(f"metrics:    {body['metrics_path']} (checksum {body['metrics_checksum'][:16]})")
    click.echo(json.dumps(body, sort_keys=True))
    return EXIT_OK


@cli.command()
@_common_options
@click.option("--out", required=True, help="output directory")
@click.pass_obj
def pretrain(client, config_path, seed, mode, rank, sparsity, span, gate, sets, out):
    """Train the base model from scratch and save its checkpoint."""
    try:
        flat = _load_flat_config(config_path, _overrides(seed, "full_ft", rank, sparsity, span, gate), sets)
    except ConfigError as exc:
        click.echo(f"error (usage): {exc}", err=True)
        sys.exit(EXIT_USAGE)
    sys.exit(_train_command(client, "/pretrain", flat, out, None))


@cli.command()
@_common_options
@click.option("--base", required=True, help="base-model checkpoint")
@click.option("--out", required=True, help="output directory")
@click.pass_obj
def finetune(client, config_path, seed, mode, rank, sparsity, span, gate, sets, base, out):
    """Adapt a frozen base (solo / lora / frozen / full_ft per config)."""
    try:
        flat = _load_flat_config(config_path, _overrides(seed, mode, rank, sparsity, span, gate), sets)
    except ConfigError as exc:
        click.echo(f"error (usage): {exc}", err=True)
        sys.exit(EXIT_USAGE)
    sys.exit(_train_command(client, "/finetune", flat, out, base))


@cli.command("eval")
@_common_options
@click.option("--base", required=True, help="base-model checkpoint")
@click.option("--adapter", default=None, help="adapter checkpoint")
@click.pass_obj
def eval_cmd(client, config_path, seed, mode, rank, sparsity, span, gate, sets, base, adapter):
    """Evaluate a checkpoint on the configured task."""
    try:
        flat = _load_flat_config(config_path, _overrides(seed, mode, rank, sparsity, span, gate), sets)
    except ConfigError as exc:
        click.echo(f"error (usage): {exc}", err=True)
        sys.exit(EXIT_USAGE)
    payload = {"config": nest_flat(flat), "base_checkpoint": base, "adapter_checkpoint": adapter}
    status, body = client.post("/eval", payload)
    if status != 200:
        click.echo(_fail_message(body), err=True)
        sys.exit(_exit_for(status, body))
    click.echo(f"eval loss {body['eval_loss']:.6f}, token accuracy {body['eval_accuracy']:.4f}")
    click.echo(json.dumps(body, sort_keys=True))
    sys.exit(EXIT_OK)


@cli.command()
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.pass_obj
def gradcheck(client, tolerance):
    """Run the full finite-difference suite; nonzero exit on any breach."""
    status, body = client.post("/gradcheck", {"tolerance": tolerance})
    if status != 200:
        click.echo(_fail_message(body), err=True)
        sys.exit(_exit_for(status, body))
    for row in body["checks"]:
        flag = "ok" if row["passed"] else "FAIL"
        click.echo(f"{row['name']:<16} {row['max_rel_error']:>12.3e}  {flag}")
    if not body["passed"]:
        bad = [r["name"] for r in body["checks"] if not r["passed"]]
        click.echo(f"error (numeric): tolerance breach in: {', '.join(bad)}", err=True)
        sys.exit(EXIT_NUMERIC)
    click.echo(f"all {len(body['checks'])} checks passed at {tolerance:g}")
    sys.exit(EXIT_OK)


@cli.command("count-params")
@_common_options
@click.pass_obj
def count_params(client, config_path, seed, mode, rank, sparsity, span, gate, sets):
    """Report the closed-form budget and enumerated trainable counts."""
    try:
        flat = _load_flat_config(config_path, _overrides(seed, mode, rank, sparsity, span, gate), sets)
    except ConfigError as exc:
        click.echo(f"error (usage): {exc}", err=True)
        sys.exit(EXIT_USAGE)
    status, body = client.post("/params/count", {"config": nest_flat(flat)})
    if status != 200:
        click.echo(_fail_message(body), err=True)
        sys.exit(_exit_for(status, body))
    click.echo(body["table"])
    click.echo(json.dumps(body, sort_keys=True))
    sys.exit(EXIT_OK)


@cli.command()
@_common_options
@click.option("--out", required=True, help="output directory")
@click.option("--base", default=None, help="reuse an existing base checkpoint")
@click.option("--workers", type=int, default=1, show_default=True)
@click.pass_obj
def ablate(client, config_path, seed, mode, rank, sparsity, span, gate, sets, out, base, workers):
    """Run a rank/sparsity/span/gate grid; one row per cell."""
    flat: dict[str, Any] = {}
    grid_keys: dict[str, Any] = {}
    try:
        if config_path:
            for key, value in parse_config_file(config_path).items():
                if key.startswith("grid."):
                    grid_keys[key[len("grid."):]] = value
                else:
                    flat[key] = value
        for pair in sets:
            if "=" not in pair:
                raise ConfigError(f"--set expects key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            key = key.strip()
            if key.startswith("grid."):
                grid_keys[key[len("grid."):]] = parse_value(value)
            else:
                flat[key] = parse_value(value)
        flat = apply_overrides(flat, _overrides(seed, "solo", rank, sparsity, span, gate))
        run_config_from_flat(flat)
    except ConfigError as exc:
        click.echo(f"error (usage): {exc}", err=True)
        sys.exit(EXIT_USAGE)

    payload: dict[str, Any] = {"config": nest_flat(flat), "out_dir": out, "workers": workers}
    for axis in ("ranks", "sparsities", "spans", "gates", "codec_trainables",
                 "pretrain_steps", "cell_steps", "pretrain_kind"):
        if axis in grid_keys:
            payload[axis] = grid_keys[axis]
    if base:
        payload["base_checkpoint"] = base
    status, body = client.post("/ablate", payload)
    if status != 200:
        click.echo(_fail_message(body), err=True)
        sys.exit(_exit_for(status, body))
    click.echo(body["table"])
    click.echo(f"results: {body['results_path']}")
    sys.exit(EXIT_OK)


@cli.command("swap-test")
@click.option("--base", required=True, help="base-model checkpoint")
@click.option("--adapter", "adapters", multiple=True, required=True,
              help="adapter checkpoint (pass exactly twice)")
@click.option("--cycles", type=int, default=3, show_default=True)
@click.option("--probes", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_obj
def swap_test_cmd(client, base, adapters, cycles, probes, seed):
    """Alternate two adapters on one frozen base; verify bit-exact logits."""
    if len(adapters) != 2:
        click.echo("error (usage): pass exactly two --adapter paths", err=True)
        sys.exit(EXIT_USAGE)
    payload = {
        "base_checkpoint": base, "adapter_a": adapters[0], "adapter_b": adapters[1],
        "cycles": cycles, "probes": probes, "seed": seed,
    }
    status, body = client.post("/swap-test", payload)
    if status != 200:
        click.echo(_fail_message(body), err=True)
        sys.exit(_exit_for(status, body))
    click.echo(body["detail"])
    if not body["passed"]:
        click.echo("error (numeric): swap test failed", err=True)
        sys.exit(EXIT_NUMERIC)
    sys.exit(EXIT_OK)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the service with uvicorn."""
    import uvicorn
    from .service.app import create_app
    uvicorn.run(create_app(), host=host, port=port)


def main():
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
