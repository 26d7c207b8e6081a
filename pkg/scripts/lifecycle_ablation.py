#!/usr/bin/env python3
"""Ablate one memory-lifecycle operator at a time against a pass-through run.

Holds the backend and workload fixed, switches a single operator axis on
per variant, and reports answer quality next to the wall time each axis
bills to its own stage. Tiered/graph-only consolidation variants are
included only when the chosen backend supports them.

    python3 scripts/lifecycle_ablation.py --backend inverted_vector
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from memstream.config import (  # noqa: E402
    CheckpointSchedule,
    ConsolidateConfig,
    ExperimentConfig,
    FormulateConfig,
    GatewayConfig,
    IntegrateConfig,
    NormalizeConfig,
    OperatorConfig,
    StoreConfig,
)
from memstream.orchestrator import run_experiment  # noqa: E402
from memstream.stores import BACKENDS, build_store  # noqa: E402
from memstream.workloads import SyntheticSpec, synth_workload  # noqa: E402

STAGE_FOR_AXIS = {
    "normalize": "PreIns",
    "consolidate": "PostIns",
    "formulate": "PreRet",
    "integrate": "PostRet",
}


def variants_for(backend):
    probe = build_store(backend, embed_dim=8)
    rows = [("baseline", None, "none")]
    rows += [("normalize", "normalize", s) for s in ("enrich", "rewrite")]
    consolidate = ["crud", "forgetting_curve", "semantic_consolidation"]
    if probe.supports_tiers:
        consolidate.append("heat_migration")
    if probe.supports_links:
        consolidate.append("link_evolution")
    rows += [("consolidate", "consolidate", s) for s in consolidate]
    rows += [("formulate", "formulate", s)
             for s in ("validate", "keyword", "decompose")]
    rows += [("integrate", "integrate", s)
             for s in ("time_weighted", "threshold", "multi_tier", "augment",
                       "multi_query")]
    return rows


def make_operators(axis, strategy):
    ops = OperatorConfig(
        normalize=NormalizeConfig(),
        consolidate=ConsolidateConfig(),
        formulate=FormulateConfig(),
        integrate=IntegrateConfig(),
    )
    if axis is not None:
        getattr(ops, axis).strategy = strategy
    return ops


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--backend", default="inverted_vector",
                        choices=sorted(BACKENDS))
    parser.add_argument("--facts", type=int, default=200)
    parser.add_argument("--rounds", type=int, default=4)
    parser.add_argument("--queries-per-round", type=int, default=10)
    parser.add_argument("--sessions", type=int, default=2)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--gateway", choices=("mock", "remote"), default="mock")
    return parser.parse_args()


def main():
    args = parse_args()
    spec = SyntheticSpec(seed=args.seed, n_facts=args.facts, update_rate=0.0,
                         n_sessions=args.sessions, rounds=args.rounds,
                         queries_per_round=args.queries_per_round,
                         paraphrase_rate=0.25)
    manifest, _ = synth_workload(spec)
    print(f"backend={args.backend}  workload={len(manifest.requests)} requests")

    header = (f"{'variant':<36} {'mean_f1':>8} {'dF1':>7} "
              f"{'own_stage':>9} {'mean_us':>9} {'flags':<24}")
    print(header)
    print("-" * len(header))
    baseline_f1 = None
    for label, axis, strategy in variants_for(args.backend):
        name = "baseline" if axis is None else f"{axis}={strategy}"
        cfg = ExperimentConfig(
            store=StoreConfig(args.backend),
            operators=make_operators(axis, strategy),
            checkpoint=CheckpointSchedule(fraction=1.0 / args.rounds),
            gateway=GatewayConfig(kind=args.gateway, embed_dim=args.embed_dim),
            seed=args.seed,
            output_dir="unused",
        )
        result = run_experiment(cfg, manifest)
        if result.status != "complete":
            print(f"{name:<36} ABORTED: {result.error}")
            continue
        summary = result.summary()
        mean_f1 = summary["mean_f1"]
        if baseline_f1 is None:
            baseline_f1 = mean_f1
        stage = STAGE_FOR_AXIS.get(axis or "", "-")
        stage_mean = (summary["latency"]["stages"]
                      .get(stage, {}).get("mean_us", 0.0))
        flags = ",".join(sorted(summary["flags"])) or "-"
        print(f"{name:<36} {mean_f1:>8.3f} {mean_f1 - baseline_f1:>+7.3f} "
              f"{stage:>9} {stage_mean:>9.1f} {flags:<24}")


if __name__ == "__main__":
    main()
