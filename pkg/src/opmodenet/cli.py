"""Pipeline CLI: one subcommand per stage plus run-all.

Every stage reads its inputs from disk, writes versioned artifacts plus a
manifest into the configured output directory, and is skipped when its
manifest shows the inputs, config, and outputs are all unchanged. Exit
codes: 0 success, 2 config error, 3 missing upstream artifact, 4 data
validation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import emissions as emissions_mod
from . import evaluation, features, gpx, manifest, matching, mnn, opmode, smoothing, traffic
from .attribution import LinkSecondRecord, attribute_seconds, filter_links, is_plausible_vehicle
from .config import PipelineConfig, load_config
from .errors import (
    ConfigurationError,
    MissingDependencyError,
    OpmodenetError,
    ValidationError,
)
from .roadnet import (
    ElevationGrid,
    apply_grades,
    build_links,
    join_attributes,
    links_from_json,
    links_to_json,
    parse_network,
    read_attribute_records,
)

log = logging.getLogger("opmodenet")

ARTIFACTS = {
    "build-network": ["links.json"],
    "derive-traffic": ["traffic.json"],
    "process-traces": ["link_seconds.csv", "trace_report.json"],
    "ground-truth": ["distributions.json"],
    "featurize": ["encoder.json", "features.json"],
    "train": ["model.bin", "history.json"],
    "predict": ["predictions.json"],
    "baseline": ["baseline.json"],
    "emissions": ["emissions.json"],
    "evaluate": ["report.json"],
}
STAGE_ORDER = list(ARTIFACTS)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _artifact(cfg: PipelineConfig, name: str, producer: str) -> Path:
    path = cfg.output_dir / name
    if not path.exists():
        raise MissingDependencyError(
            f"missing {path}; run the '{producer}' subcommand first"
        )
    return path


def _config_path(cfg: PipelineConfig, key: str) -> Path:
    value = getattr(cfg.paths, key)
    if not value:
        raise ConfigurationError(f"config paths.{key} is required for this stage")
    path = Path(value)
    if not path.exists():
        raise ValidationError(f"paths.{key}: {path} does not exist")
    return path


# ---------------------------------------------------------------------------
# per-stage input declarations (path name -> Path), used for cache checks


def _inputs_build_network(cfg: PipelineConfig) -> dict[str, Path]:
    out = {"network": _config_path(cfg, "network")}
    if cfg.paths.elevation:
        out["elevation"] = _config_path(cfg, "elevation")
    if cfg.paths.attributes:
        out["attributes"] = _config_path(cfg, "attributes")
    return out


def _inputs_derive_traffic(cfg):
    return {"links.json": _artifact(cfg, "links.json", "build-network")}


def _inputs_process_traces(cfg):
    traces_dir = _config_path(cfg, "traces_dir")
    gpx_files = sorted(traces_dir.glob("*.gpx"))
    if not gpx_files:
        raise ValidationError(f"no .gpx files in {traces_dir}")
    out = {"links.json": _artifact(cfg, "links.json", "build-network")}
    for f in gpx_files:
        out[f"traces/{f.name}"] = f
    return out


def _inputs_ground_truth(cfg):
    return {
        "link_seconds.csv": _artifact(cfg, "link_seconds.csv", "process-traces"),
        "links.json": _artifact(cfg, "links.json", "build-network"),
    }


def _inputs_featurize(cfg):
    return {
        "links.json": _artifact(cfg, "links.json", "build-network"),
        "traffic.json": _artifact(cfg, "traffic.json", "derive-traffic"),
        "distributions.json": _artifact(cfg, "distributions.json", "ground-truth"),
        "embeddings": _config_path(cfg, "embeddings"),
    }


def _inputs_train(cfg):
    return {
        "features.json": _artifact(cfg, "features.json", "featurize"),
        "encoder.json": _artifact(cfg, "encoder.json", "featurize"),
        "distributions.json": _artifact(cfg, "distributions.json", "ground-truth"),
    }


def _inputs_predict(cfg):
    return {
        "model.bin": _artifact(cfg, "model.bin", "train"),
        "features.json": _artifact(cfg, "features.json", "featurize"),
        "encoder.json": _artifact(cfg, "encoder.json", "featurize"),
    }


def _inputs_baseline(cfg):
    out = {
        "links.json": _artifact(cfg, "links.json", "build-network"),
        "traffic.json": _artifact(cfg, "traffic.json", "derive-traffic"),
    }
    if cfg.paths.cycle_library:
        out["cycle_library/manifest.csv"] = _config_path(cfg, "cycle_library") / "manifest.csv"
    return out


def _inputs_emissions(cfg):
    out = {
        "links.json": _artifact(cfg, "links.json", "build-network"),
        "traffic.json": _artifact(cfg, "traffic.json", "derive-traffic"),
        "predictions.json": _artifact(cfg, "predictions.json", "predict"),
        "baseline.json": _artifact(cfg, "baseline.json", "baseline"),
        "distributions.json": _artifact(cfg, "distributions.json", "ground-truth"),
    }
    if cfg.paths.rate_table:
        out["rate_table"] = _config_path(cfg, "rate_table")
    return out


def _inputs_evaluate(cfg):
    return {
        "predictions.json": _artifact(cfg, "predictions.json", "predict"),
        "baseline.json": _artifact(cfg, "baseline.json", "baseline"),
        "distributions.json": _artifact(cfg, "distributions.json", "ground-truth"),
        "emissions.json": _artifact(cfg, "emissions.json", "emissions"),
    }


# ---------------------------------------------------------------------------
# stage implementations


def stage_build_network(cfg: PipelineConfig) -> None:
    network_path = _config_path(cfg, "network")
    links = build_links(parse_network(network_path.read_text()))
    log.info("built %d directed links", len(links))

    if cfg.paths.elevation:
        links, failed = apply_grades(
            links, ElevationGrid.from_csv(str(_config_path(cfg, "elevation")))
        )
        if failed:
            log.warning("grade imputed as 0 on %d links", len(failed))

    if cfg.paths.attributes:
        records = read_attribute_records(str(_config_path(cfg, "attributes")))
        links, unmatched = join_attributes(links, records)
        if unmatched:
            log.warning("%d attribute records unmatched", len(unmatched))

    (cfg.output_dir / "links.json").write_text(links_to_json(links) + "\n")


def _load_links(cfg: PipelineConfig):
    return links_from_json(_artifact(cfg, "links.json", "build-network").read_text())


def stage_derive_traffic(cfg: PipelineConfig) -> None:
    states = {
        link.link_id: dataclasses.asdict(traffic.derive_state(link, cfg.traffic))
        for link in _load_links(cfg)
    }
    (cfg.output_dir / "traffic.json").write_text(_dump_json(states))


def _in_window(cfg: PipelineConfig, t: float) -> bool:
    if cfg.window_start_hour is None:
        return True
    hour = datetime.fromtimestamp(t, tz=timezone.utc).hour
    return cfg.window_start_hour <= hour < cfg.window_end_hour


def stage_process_traces(cfg: PipelineConfig) -> None:
    links = _load_links(cfg)
    graph = matching.RoadGraph(links)
    lengths = {l.link_id: graph.length(l.link_id) for l in links}
    grades = {l.link_id: l.grade for l in links}
    traj = cfg.trajectory
    gpx_files = sorted(_config_path(cfg, "traces_dir").glob("*.gpx"))

    records: list[LinkSecondRecord] = []
    report = {
        "n_files": len(gpx_files),
        "n_traces": 0,
        "n_segments": 0,
        "n_matched_segments": 0,
        "n_rejected_segments": 0,
        "n_implausible_segments": 0,
        "n_window_filtered": 0,
        "dropped_points": 0,
        "skipped_tracks": [],
    }
    for f in gpx_files:
        traces, parse_report = gpx.parse_traces(f.read_text(), source_id=f.stem)
        report["n_traces"] += len(traces)
        report["dropped_points"] += parse_report.dropped_points
        report["skipped_tracks"] += parse_report.skipped_tracks
        for trace in traces:
            for segment in gpx.segment_gaps(trace, traj.max_gap_s):
                report["n_segments"] += 1
                if not _in_window(cfg, segment.points[0].t):
                    report["n_window_filtered"] += 1
                    continue
                try:
                    matched = matching.match_segment(
                        segment, graph, traj.sigma_m, traj.lambda_m, traj.radius_m
                    )
                except matching.MatchRejected as exc:
                    log.info("rejected: %s", exc)
                    report["n_rejected_segments"] += 1
                    continue
                for sub in matched:
                    sub = smoothing.smooth(sub)
                    if not is_plausible_vehicle(sub, traj.max_speed_mph):
                        report["n_implausible_segments"] += 1
                        continue
                    report["n_matched_segments"] += 1
                    records.extend(attribute_seconds(sub, lengths, grades))

    with open(cfg.output_dir / "link_seconds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "t", "speed_mph", "accel_mphps", "grade"])
        for r in records:
            w.writerow([r.link_id, repr(r.t), repr(r.speed_mph), repr(r.accel_mphps), repr(r.grade)])
    (cfg.output_dir / "trace_report.json").write_text(_dump_json(report))


def stage_ground_truth(cfg: PipelineConfig) -> None:
    lengths = {l.link_id: l.length_m for l in _load_links(cfg)}
    records = []
    with open(_artifact(cfg, "link_seconds.csv", "process-traces"), newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                LinkSecondRecord(
                    link_id=row["link_id"],
                    t=float(row["t"]),
                    speed_mph=float(row["speed_mph"]),
                    accel_mphps=float(row["accel_mphps"]),
                    grade=float(row["grade"]),
                )
            )
    kept = filter_links(
        records, lengths, cfg.trajectory.min_link_distance_m, cfg.trajectory.min_link_time_s
    )
    log.info("ground truth on %d links (from %d records)", len(kept), len(records))
    dists = {
        link_id: {
            "fractions": opmode.distribution(recs).fractions.tolist(),
            "support_seconds": len(recs),
        }
        for link_id, recs in kept.items()
    }
    (cfg.output_dir / "distributions.json").write_text(_dump_json(dists))


def _load_states(cfg: PipelineConfig) -> dict[str, traffic.LinkTrafficState]:
    raw = json.loads(_artifact(cfg, "traffic.json", "derive-traffic").read_text())
    return {k: traffic.LinkTrafficState(**v) for k, v in raw.items()}


def stage_featurize(cfg: PipelineConfig) -> None:
    links = _load_links(cfg)
    states = _load_states(cfg)
    embeddings = features.read_embeddings(_config_path(cfg, "embeddings"))
    dists = json.loads(_artifact(cfg, "distributions.json", "ground-truth").read_text())

    by_id = {l.link_id: l for l in links}
    dataset_ids = sorted(set(dists) & set(by_id))
    if len(dataset_ids) < 2:
        raise ValidationError(
            f"only {len(dataset_ids)} links have both features and ground truth"
        )
    train_idx, test_idx = mnn.split_indices(
        len(dataset_ids), cfg.seed, cfg.training.test_fraction
    )
    train_links = [by_id[dataset_ids[i]] for i in train_idx]
    train_states = [states[l.link_id] for l in train_links]
    encoder = features.fit_encoder(train_links, train_states, embeddings)

    completed = features.impute_all(links, encoder)
    link_ids, rows = [], []
    for link in sorted(completed, key=lambda l: l.link_id):
        emb = embeddings.get(link.town) if link.town else None
        if emb is None:
            # unknown town: imagery block contributes nothing
            emb = encoder.pca_mean
        rows.append(features.encode(link, states[link.link_id], emb, encoder).tolist())
        link_ids.append(link.link_id)

    (cfg.output_dir / "encoder.json").write_text(encoder.to_json() + "\n")
    payload = {
        "feature_names": encoder.feature_names(),
        "link_ids": link_ids,
        "matrix": rows,
        "dataset_link_ids": dataset_ids,
        "train_indices": train_idx.tolist(),
        "test_indices": test_idx.tolist(),
    }
    (cfg.output_dir / "features.json").write_text(_dump_json(payload))


def stage_train(cfg: PipelineConfig) -> None:
    payload = json.loads(_artifact(cfg, "features.json", "featurize").read_text())
    dists = json.loads(_artifact(cfg, "distributions.json", "ground-truth").read_text())
    row_of = {lid: i for i, lid in enumerate(payload["link_ids"])}
    x = np.array([payload["matrix"][row_of[lid]] for lid in payload["dataset_link_ids"]])
    y = np.array([dists[lid]["fractions"] for lid in payload["dataset_link_ids"]])
    train_cfg = dataclasses.replace(cfg.training, seed=cfg.seed)
    split = (np.array(payload["train_indices"]), np.array(payload["test_indices"]))
    params, history = mnn.train(x, y, train_cfg, split=split)
    log.info(
        "trained %d params, final train loss %.3e, test loss %.3e",
        params.count(),
        history["train"][-1],
        history["test"][-1],
    )
    encoder = features.FittedEncoder.from_json(
        _artifact(cfg, "encoder.json", "featurize").read_text()
    )
    mnn.save_model(cfg.output_dir / "model.bin", params, encoder.digest(), train_cfg)
    (cfg.output_dir / "history.json").write_text(_dump_json(history))


def stage_predict(cfg: PipelineConfig) -> None:
    encoder = features.FittedEncoder.from_json(
        _artifact(cfg, "encoder.json", "featurize").read_text()
    )
    params, _ = mnn.load_model(
        _artifact(cfg, "model.bin", "train"), expect_encoder_digest=encoder.digest()
    )
    payload = json.loads(_artifact(cfg, "features.json", "featurize").read_text())
    probs = mnn.predict(params, np.array(payload["matrix"]))
    out = {lid: probs[i].tolist() for i, lid in enumerate(payload["link_ids"])}
    (cfg.output_dir / "predictions.json").write_text(_dump_json(out))


def stage_baseline(cfg: PipelineConfig) -> None:
    library = opmode.load_cycle_library(cfg.paths.cycle_library or None)
    states = _load_states(cfg)
    cache: dict = {}
    out = {}
    for link in _load_links(cfg):
        dist = opmode.baseline_from_avg_speed(
            states[link.link_id].congested_speed_mph, link.road_type, library, _cache=cache
        )
        out[link.link_id] = dist.fractions.tolist()
    (cfg.output_dir / "baseline.json").write_text(_dump_json(out))


def stage_emissions(cfg: PipelineConfig) -> None:
    rates = emissions_mod.load_rates(cfg.paths.rate_table or None)
    towns = {l.link_id: l.town for l in _load_links(cfg)}
    states = _load_states(cfg)

    arms = {
        "model": json.loads(_artifact(cfg, "predictions.json", "predict").read_text()),
        "baseline": json.loads(_artifact(cfg, "baseline.json", "baseline").read_text()),
        "truth": {
            k: v["fractions"]
            for k, v in json.loads(
                _artifact(cfg, "distributions.json", "ground-truth").read_text()
            ).items()
        },
    }
    report = {}
    for arm, dists in arms.items():
        link_emissions = []
        for link_id in sorted(dists):
            state = states[link_id]
            activity = emissions_mod.activity_veh_hr(
                state.peak_hour_flow_vph, state.travel_time_s
            )
            link_emissions.append(
                emissions_mod.link_emissions(
                    link_id,
                    opmode.OpModeDistribution(np.array(dists[link_id]), support_seconds=1),
                    activity,
                    rates,
                    town=towns.get(link_id),
                )
            )
        report[arm] = {
            "links": {e.link_id: e.grams_per_hr for e in link_emissions},
            "by_town": emissions_mod.aggregate(link_emissions, "town"),
            "region": emissions_mod.aggregate(link_emissions, "region"),
        }
    (cfg.output_dir / "emissions.json").write_text(_dump_json(report))


def stage_evaluate(cfg: PipelineConfig) -> None:
    truth = {
        k: np.array(v["fractions"])
        for k, v in json.loads(
            _artifact(cfg, "distributions.json", "ground-truth").read_text()
        ).items()
    }
    preds = {
        k: np.array(v)
        for k, v in json.loads(_artifact(cfg, "predictions.json", "predict").read_text()).items()
    }
    base = {
        k: np.array(v)
        for k, v in json.loads(_artifact(cfg, "baseline.json", "baseline").read_text()).items()
    }
    aligned = sorted(set(truth) & set(preds) & set(base))
    if len(aligned) < 2:
        raise ValidationError(f"only {len(aligned)} links in all three arms")
    opmode_report = evaluation.per_bin_report(
        {k: preds[k] for k in aligned},
        {k: base[k] for k in aligned},
        {k: truth[k] for k in aligned},
    )
    emis = json.loads(_artifact(cfg, "emissions.json", "emissions").read_text())
    pollutant_report = evaluation.per_pollutant_report(
        {k: emis["model"]["links"][k] for k in aligned},
        {k: emis["baseline"]["links"][k] for k in aligned},
        {k: emis["truth"]["links"][k] for k in aligned},
    )
    report = {"opmode": opmode_report, "emissions": pollutant_report}
    (cfg.output_dir / "report.json").write_text(_dump_json(report))


STAGES = {
    "build-network": (stage_build_network, _inputs_build_network),
    "derive-traffic": (stage_derive_traffic, _inputs_derive_traffic),
    "process-traces": (stage_process_traces, _inputs_process_traces),
    "ground-truth": (stage_ground_truth, _inputs_ground_truth),
    "featurize": (stage_featurize, _inputs_featurize),
    "train": (stage_train, _inputs_train),
    "predict": (stage_predict, _inputs_predict),
    "baseline": (stage_baseline, _inputs_baseline),
    "emissions": (stage_emissions, _inputs_emissions),
    "evaluate": (stage_evaluate, _inputs_evaluate),
}


def run_stage(cfg: PipelineConfig, stage: str, force: bool = False) -> bool:
    """Run one stage with manifest caching; returns True if it executed."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    impl, input_spec = STAGES[stage]
    digest = cfg.digest()
    inputs = {
        key: manifest.sha256_file(path) for key, path in input_spec(cfg).items()
    }
    if manifest.stage_is_fresh(cfg.output_dir, stage, inputs, digest, force):
        log.info("%s: up to date, skipping", stage)
        return False
    impl(cfg)
    outputs = [cfg.output_dir / name for name in ARTIFACTS[stage]]
    manifest.write_manifest(cfg.output_dir, stage, inputs, outputs, digest, cfg.seed)
    log.info("%s: wrote %s", stage, ", ".join(ARTIFACTS[stage]))
    return True


def run(cfg: PipelineConfig, subcommand: str, force: bool = False) -> None:
    if subcommand == "run-all":
        for stage in STAGE_ORDER:
            run_stage(cfg, stage, force)
    else:
        run_stage(cfg, subcommand, force)


# ---------------------------------------------------------------------------


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigurationError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opmodenet",
        description="Link-level operating-mode distribution pipeline.",
    )
    parser.add_argument("subcommand", choices=[*STAGE_ORDER, "run-all"])
    parser.add_argument("--config", required=True, help="YAML pipeline config")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (dotted path); flags win over the file",
    )
    parser.add_argument("--force", action="store_true", help="rerun even if cached")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = dict(_parse_override(s) for s in args.set)
        cfg = load_config(args.config, overrides)
        run(cfg, args.subcommand, force=args.force)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except MissingDependencyError as exc:
        log.error("missing dependency: %s", exc)
        return 3
    except OpmodenetError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
