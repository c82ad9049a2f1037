from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from hetnet.commands._common import add_common_arguments, build_spec, load_scenario, run_and_report
from hetnet.services.config_service import SolverSettings
from hetnet.services.dcd_service import association_value, dcd_solve, duality_gap_bound
from hetnet.services.dependencies import get_output_service
from hetnet.services.network_service import (
    NetworkInstance,
    gen_topology,
    load_instance,
    max_power,
    utility_matrix,
)
from hetnet.services.oracle_service import exhaustive_oracle, joint_brute_oracle

logger = logging.getLogger(__name__)

FIXED_POWER_METHODS = ("max-sinr", "dcd", "subgradient")


def register(subparsers: argparse._SubParsersAction) -> None:
    assoc = subparsers.add_parser("assoc", help="fixed-power association methods")
    add_common_arguments(assoc)
    assoc.set_defaults(func=run_assoc)

    oracle = subparsers.add_parser("oracle", help="brute-force optimum of a tiny instance")
    add_common_arguments(oracle, methods=False)
    oracle.add_argument("--instance", type=Path, help="instance JSON instead of generating one")
    oracle.add_argument("--joint", action="store_true", help="optimize power too (L <= 3, K <= 6)")
    oracle.add_argument("--grid", type=int, default=10, help="power grid points per BS for --joint")
    oracle.set_defaults(func=run_oracle)


def run_assoc(args: argparse.Namespace) -> int:
    spec = build_spec(args, allowed=FIXED_POWER_METHODS, default=("max-sinr", "dcd"))
    return run_and_report(spec)


def _oracle_payload(inst: NetworkInstance, args: argparse.Namespace, settings: SolverSettings) -> dict:
    if args.joint:
        result = joint_brute_oracle(inst, args.grid, settings.newton)
        return {
            "utility": result.utility,
            "assignment": result.association.bs_of.tolist(),
            "psd": result.p.tolist(),
        }
    a = utility_matrix(inst, max_power(inst))
    result = exhaustive_oracle(a, inst.num_users, inst.num_bs)
    dcd = dcd_solve(a, inst.num_users, settings.dcd)
    return {
        "utility": result.utility,
        "assignment": result.association.bs_of.tolist(),
        "dcd_utility": association_value(a, dcd.association),
        "dcd_gap_bound": duality_gap_bound(dcd.association, dcd.dual.mu, dcd.dual.nu),
    }


def run_oracle(args: argparse.Namespace) -> int:
    scenario = load_scenario(args)
    settings = SolverSettings.from_sections(scenario.solver_options)
    output = get_output_service(args.out)
    results = {}
    if args.instance is not None:
        results["instance"] = _oracle_payload(load_instance(args.instance), args, settings)
    else:
        for seed in args.seed:
            inst = gen_topology(scenario.network.model_copy(update={"seed": seed}))
            results[f"seed{seed}"] = _oracle_payload(inst, args, settings)
    if output is not None:
        output.write_json("oracle.json", results)
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0
