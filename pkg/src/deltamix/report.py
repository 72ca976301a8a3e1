"""Run reports: JSON-lines records per layer plus plot-ready CSV emissions."""

from __future__ import annotations

import io
import json

from . import container as container_mod
from .exceptions import ConfigError
from .pipeline import LayerResult, ModelRun


def _config_dict(cfg) -> dict:
    return {
        "bits": list(cfg.candidates),
        "alpha": cfg.alpha,
        "g_bits": cfg.g_bits,
        "source_bits": cfg.source_bits,
        "f_max": cfg.f_max,
        "damp_rel": cfg.damp_rel,
        "eps_rel": cfg.eps_rel,
        "use_rtc": cfg.use_rtc,
        "seed": cfg.seed,
    }


def layer_record(res: LayerResult) -> dict:
    """One JSON-serializable report line for a compressed layer."""
    rec = container_mod.record_from_result(res)
    out = {
        "type": "layer",
        "name": res.name,
        "h_out": rec.h_out,
        "h_in": rec.h_in,
        "rank": rec.r,
        "config": _config_dict(res.config),
        "scheme": [int(b) for b in res.scheme.assignment],
        "active_bits": list(res.scheme.active_bits),
        "objective": res.scheme.objective,
        "payload_bits": res.payload_bits,
        "budget_bits": res.budget_bits,
        "metadata_bits": rec.metadata_bits(),
        "padding_bits": rec.padding_bits(),
        "sigma": [float(s) for s in res.sigma],
        "errors": {
            "v_total": res.error_v,
            "u_total": res.error_u,
            "end_to_end": res.error_end_to_end,
            "relative": res.error_relative,
            "all_mean": res.error_all_mean,
            "outlier_mean": res.error_outlier_mean,
        },
        "timings": {k: round(v, 6) for k, v in res.timings.items()},
    }
    if res.table is not None:
        out["table"] = {
            "bits": list(res.table.candidates),
            "scaling": [float(s) for s in res.table.scaling],
            "difference": [
                [float(d) for d in res.table.differences[:, k]]
                for k in range(len(res.table.candidates))
            ],
        }
    return out


def summary_record(run: ModelRun) -> dict:
    groups = {}
    for key, g in run.summary.groups.items():
        groups[key] = {
            "layers": g.names,
            "mean_end_to_end": g.mean_end_to_end,
            "mean_all": g.mean_all,
            "mean_outlier": g.mean_outlier,
        }
    return {
        "type": "summary",
        "groups": groups,
        "mean_end_to_end": run.summary.mean_end_to_end,
        "total_payload_bits": run.summary.total_payload_bits,
        "total_budget_bits": run.summary.total_budget_bits,
        "failures": [
            {"layer": name, "stage": stage, "message": msg}
            for name, stage, msg in run.failures
        ],
    }


def write_report(path, run: ModelRun) -> None:
    with open(path, "w") as fh:
        for res in run.results:
            fh.write(json.dumps(layer_record(res)) + "\n")
        fh.write(json.dumps(summary_record(run)) + "\n")


def read_report(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _layer_records(records: list[dict]) -> list[dict]:
    layers = [r for r in records if r.get("type") == "layer"]
    if not layers:
        raise ConfigError("report contains no layer records")
    return layers


def scheme_csv(records: list[dict]) -> str:
    """Chosen scheme per singular vector: ``layer,row,sigma,bit``."""
    buf = io.StringIO()
    buf.write("layer,row,sigma,bit\n")
    for rec in _layer_records(records):
        for i, (s, b) in enumerate(zip(rec["sigma"], rec["scheme"])):
            buf.write(f"{rec['name']},{i},{s:.17g},{b}\n")
    return buf.getvalue()


def error_csv(records: list[dict]) -> str:
    """Full error table: ``layer,row,bit,scaling,difference,error``."""
    buf = io.StringIO()
    buf.write("layer,row,bit,scaling,difference,error\n")
    for rec in _layer_records(records):
        table = rec.get("table")
        if table is None:
            raise ConfigError(f"layer {rec['name']!r} record carries no error table")
        for i, s in enumerate(table["scaling"]):
            for k, b in enumerate(table["bits"]):
                d = table["difference"][k][i]
                buf.write(f"{rec['name']},{i},{b},{s:.17g},{d:.17g},{s * d:.17g}\n")
    return buf.getvalue()


def decomposition_csv(records: list[dict]) -> str:
    """Per-row scaling next to the per-bit difference columns (plot-ready).

    Header: ``layer,row,scaling,diff_b<bit>...`` with one difference column
    per candidate bit width.
    """
    layers = _layer_records(records)
    bits = None
    for rec in layers:
        table = rec.get("table")
        if table is None:
            raise ConfigError(f"layer {rec['name']!r} record carries no error table")
        if bits is None:
            bits = table["bits"]
        elif table["bits"] != bits:
            raise ConfigError("layers in report use different candidate bit sets")
    buf = io.StringIO()
    buf.write("layer,row,scaling," + ",".join(f"diff_b{b}" for b in bits) + "\n")
    for rec in layers:
        table = rec["table"]
        for i, s in enumerate(table["scaling"]):
            diffs = ",".join(f"{table['difference'][k][i]:.17g}" for k in range(len(bits)))
            buf.write(f"{rec['name']},{i},{s:.17g},{diffs}\n")
    return buf.getvalue()


EMITTERS = {
    "scheme_csv": scheme_csv,
    "error_csv": error_csv,
    "figure2_csv": decomposition_csv,
}


def group_thirds(names: list[str]) -> dict[str, list[str]]:
    """Split an ordered layer list into front/middle/back thirds."""
    n = len(names)
    n_low = n // 3
    n_mid = n // 3
    return {
        "low": names[:n_low],
        "mid": names[n_low : n_low + n_mid],
        "high": names[n_low + n_mid :],
    }
