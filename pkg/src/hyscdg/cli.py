"""Command line entry point.

Subcommands: stats, plan, generate, assemble, evaluate, manifest,
serve-check. Configuration precedence is flags > ``hyscdg.toml`` > built-in
defaults; every seed ends up in the outputs so a run can be replayed.
Exit codes: 0 success, 1 fatal, 2 partial failure (some variants failed but
the outputs are usable), 64 usage.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
import sys
import time
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .assemble import (
    build_index,
    compute_source_stats,
    generate_variants,
    read_tile_dir,
    write_tile_outputs,
)
from .backend import make_backend
from .conformance import serve_check
from .footprints import FootprintStore, load_footprints
from .manifests import Manifest, ManifestSpec, RemapTable, mix, subsample
from .metrics import evaluate_dataset, write_report
from .planner import PlanConfig
from .raster import ClassTable, default_class_table
from .tileio import list_tile_dirs, write_json

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64

_DEFAULTS = {
    "backend": "procedural",
    "url": None,
    "variants": 3,
    "seed": 0,
    "buffer_px": 8,
    "feather_px": 8,
    "jobs": 1,
    "tau": 1.5,
    "class_table": None,
}


def _load_config(path: str | None) -> dict:
    candidate = Path(path) if path else Path("hyscdg.toml")
    if not candidate.exists():
        if path:
            raise click.UsageError(f"config file {candidate} not found")
        return {}
    with open(candidate, "rb") as fh:
        return tomllib.load(fh)


def _setting(key, flag_value, config):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return _DEFAULTS.get(key)


def _table(path: str | None) -> ClassTable:
    return ClassTable.load(path) if path else default_class_table()


class RunLog:
    """Append-only JSONL event log; the only place timestamps live."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def event(self, name: str, **fields):
        record = {"event": name, "ts": time.time(), **fields}
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


@click.group()
def cli():
    """Bi-temporal change dataset synthesis and evaluation."""


def _common_options(fn):
    fn = click.option("--config", type=str, default=None, help="TOML config file")(fn)
    fn = click.option("--class-table", "class_table", type=str, default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--variants", type=int, default=None)(fn)
    fn = click.option("--buffer-px", "buffer_px", type=int, default=None)(fn)
    fn = click.option("--feather-px", "feather_px", type=int, default=None)(fn)
    fn = click.option("--tau", type=float, default=None)(fn)
    fn = click.option("--jobs", type=int, default=None)(fn)
    return fn


@cli.command()
@click.option("--source", required=True, type=str)
@click.option("--out", type=str, default=None, help="defaults to the source root")
@click.option("--config", type=str, default=None)
@click.option("--class-table", "class_table", type=str, default=None)
def stats(source, out, config, class_table):
    """Compute dataset class statistics into class_stats.json."""
    cfg = _load_config(config)
    table = _table(_setting("class_table", class_table, cfg))
    source_root = Path(source)
    stats_obj = compute_source_stats(source_root, table, dataset_id=source_root.name)
    out_dir = Path(out) if out else source_root
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "class_stats.json", stats_obj.to_json())
    click.echo(f"class_stats.json written for {stats_obj.total} pixels")
    return EXIT_OK


def _run_generation(source, out, backend_name, url, plan_only, **kw):
    cfg = _load_config(kw.get("config"))
    table = _table(_setting("class_table", kw.get("class_table"), cfg))
    plan_cfg = PlanConfig(
        buffer_px=_setting("buffer_px", kw.get("buffer_px"), cfg),
        feather_px=_setting("feather_px", kw.get("feather_px"), cfg),
        variants=_setting("variants", kw.get("variants"), cfg),
        tau=_setting("tau", kw.get("tau"), cfg),
    )
    master_seed = _setting("seed", kw.get("seed"), cfg)
    jobs = max(1, int(_setting("jobs", kw.get("jobs"), cfg)))

    source_root = Path(source)
    out_root = Path(out)
    out_root.mkdir(parents=True, exist_ok=True)

    backend = None
    if not plan_only:
        backend_name = _setting("backend", backend_name, cfg)
        url = _setting("url", url, cfg) or os.environ.get("HYSCDG_BACKEND_URL")
        backend = make_backend(backend_name, url=url, table=table)

    stats_obj = compute_source_stats(source_root, table, dataset_id=source_root.name)
    write_json(out_root / "class_stats.json", stats_obj.to_json())

    fp_path = source_root / "footprints.geojson"
    store = FootprintStore(load_footprints(fp_path).footprints) if fp_path.exists() else FootprintStore([])

    log = RunLog(out_root / "run.log.jsonl")
    log.event("run_start", command="plan" if plan_only else "generate", seed=master_seed)
    failures = 0

    def process(tile_dir: Path) -> int:
        bundle = read_tile_dir(tile_dir)
        extent = bundle.tile.georef.extent(bundle.tile.height, bundle.tile.width)
        fps = store.query(extent)
        outcomes = generate_variants(
            bundle, fps, stats_obj, table, plan_cfg,
            backend, master_seed, plan_only=plan_only,
        )
        write_tile_outputs(out_root, bundle, outcomes, plan_only=plan_only)
        failed = sum(1 for oc in outcomes if oc.error)
        log.event(
            "tile_done",
            tile_id=bundle.tile.tile_id,
            instances=len(fps),
            failed_variants=failed,
        )
        return failed

    tile_dirs = list_tile_dirs(source_root)
    try:
        if jobs == 1:
            for td in tile_dirs:
                failures += process(td)
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
                for n in pool.map(process, tile_dirs):
                    failures += n
    finally:
        log.event("run_end", failed_variants=failures)
        log.close()

    if failures:
        click.echo(f"{failures} variant(s) failed; outputs are partial", err=True)
        return EXIT_PARTIAL
    click.echo(f"{'planned' if plan_only else 'generated'} {len(tile_dirs)} tile(s)")
    return EXIT_OK


@cli.command()
@click.option("--source", required=True, type=str)
@click.option("--out", required=True, type=str)
@_common_options
def plan(source, out, **kw):
    """Write change plans only: no backend calls, no image output."""
    return _run_generation(source, out, None, None, plan_only=True, **kw)


@cli.command()
@click.option("--source", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--backend", "backend_name", type=click.Choice(["procedural", "remote"]), default=None)
@click.option("--url", type=str, default=None)
@_common_options
def generate(source, out, backend_name, url, **kw):
    """Plan and synthesize all tile variants."""
    return _run_generation(source, out, backend_name, url, plan_only=False, **kw)


@cli.command()
@click.option("--out", required=True, type=str, help="root of a generated dataset")
@click.option("--no-siblings", is_flag=True, default=False)
@click.option("--config", type=str, default=None)
@click.option("--class-table", "class_table", type=str, default=None)
def assemble(out, no_siblings, config, class_table):
    """Expand pairs and build index.json over a generated dataset."""
    cfg = _load_config(config)
    table = _table(_setting("class_table", class_table, cfg))
    out_root = Path(out)
    index = build_index(out_root, table, sibling=not no_siblings)
    write_json(out_root / "index.json", index)
    n_pairs = len(index["pairs"])
    n_failed = len(index["failed"])
    click.echo(f"index.json: {n_pairs} pairs, {n_failed} failed variants")
    return EXIT_PARTIAL if n_failed else EXIT_OK


@cli.command()
@click.option("--truth", required=True, type=str)
@click.option("--pred", required=True, type=str)
@click.option("--out", type=str, default=None, help="defaults to the prediction root")
def evaluate(truth, pred, out):
    """Score predicted change maps against a generated dataset."""
    truth_root = Path(truth)
    with open(truth_root / "index.json", "r", encoding="utf-8") as fh:
        k = json.load(fh)["k"]
    report = evaluate_dataset(truth_root, Path(pred), k)
    json_path, csv_path = write_report(report, Path(out) if out else Path(pred))
    click.echo(f"report written: {json_path}, {csv_path}")
    return EXIT_OK


def _pair_ids(dataset: str) -> list[str]:
    path = Path(dataset)
    index_path = path if path.suffix == ".json" else path / "index.json"
    with open(index_path, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    return [p["pair_id"] for p in index["pairs"]]


@cli.command()
@click.option("--scenario", required=True,
              type=click.Choice(["sequential", "low-data", "mixed", "zero-shot"]))
@click.option("--target", required=True, type=str, help="dataset root or index.json")
@click.option("--source", type=str, default=None)
@click.option("--fraction", type=float, default=None, help="low-data: % of the target")
@click.option("--ratio", type=float, default=None, help="mixed: % of target entries")
@click.option("--epoch", type=int, default=None, help="mixed: epoch length")
@click.option("--seed", type=int, default=0)
@click.option("--remap", type=str, default=None, help="zero-shot: remap table json")
@click.option("--out", required=True, type=str)
def manifest(scenario, target, source, fraction, ratio, epoch, seed, remap, out):
    """Build a training manifest for one transfer scenario."""
    target_ids = _pair_ids(target)
    target_name = Path(target).name
    if scenario == "low-data":
        if fraction is None:
            raise click.UsageError("low-data needs --fraction")
        m = subsample(target_ids, fraction, seed, target_id=target_name)
    elif scenario == "mixed":
        if ratio is None or epoch is None or source is None:
            raise click.UsageError("mixed needs --ratio, --epoch and --source")
        m = mix(target_ids, _pair_ids(source), ratio, epoch, seed,
                target_name=target_name, source_name=Path(source).name)
    elif scenario == "zero-shot":
        if remap is None:
            raise click.UsageError("zero-shot needs --remap")
        RemapTable.load(remap)  # validate early
        spec = ManifestSpec(scenario="zero-shot", target_id=target_name, seed=seed, remap=remap)
        m = Manifest(spec=spec,
                     entries=[{"pair_id": p, "origin": "target"} for p in target_ids])
    else:  # sequential: the full target set, epoch order shuffled by seed
        m = subsample(target_ids, 100.0, seed, target_id=target_name)
        m.spec.scenario = "sequential"
    m.save(Path(out))
    click.echo(f"manifest with {m.epoch_length} entries written to {out}")
    return EXIT_OK


@cli.command(name="serve-check")
@click.option("--url", type=str, default=None)
def serve_check_cmd(url):
    """Probe a remote backend for wire-protocol conformance."""
    url = url or os.environ.get("HYSCDG_BACKEND_URL")
    if not url:
        raise click.UsageError("serve-check needs --url or HYSCDG_BACKEND_URL")
    results = serve_check(url)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status} {r.name}" + (f" ({r.detail})" if r.detail else ""))
        all_ok &= r.passed
    return EXIT_OK if all_ok else EXIT_FATAL


def main(argv=None) -> int:
    try:
        result = cli.main(args=argv, standalone_mode=False)
        return int(result) if isinstance(result, int) else EXIT_OK
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_FATAL
    except click.exceptions.Abort:
        return EXIT_FATAL


if __name__ == "__main__":
    raise SystemExit(main())
