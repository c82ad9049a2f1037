from __future__ import annotations

import argparse
import logging

from hetnet.commands._common import add_common_arguments, load_scenario
from hetnet.services.dependencies import get_output_service
from hetnet.services.network_service import dump_instance, gen_topology

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gen", help="generate network instances as JSON documents")
    add_common_arguments(parser, methods=False)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args)
    output = get_output_service(args.out)
    if output is None and len(args.seed) > 1:
        raise ValueError("several seeds need --out")
    for seed in args.seed:
        inst = gen_topology(scenario.network.model_copy(update={"seed": seed}))
        document = dump_instance(inst)
        if output is None:
            print(document)
        else:
            path = output.write_text(f"instance_seed{seed}.json", document + "\n")
            logger.info("Seed %d: K=%d L=%d -> %s", seed, inst.num_users, inst.num_bs, path)
    return 0
