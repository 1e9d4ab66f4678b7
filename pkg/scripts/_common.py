"""Shared argument handling for the experiment scripts."""

import argparse
import logging
import os

from swarm_gov.config import load


def parser(description, default_config):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=default_config, help="scenario JSON (default: %(default)s)")
    p.add_argument("--seed", type=int, action="append", help="seed, repeatable; overrides the config")
    p.add_argument("--jobs", type=int, default=1)
    return p


def setup(args):
    logging.basicConfig(level=os.environ.get("SWARM_GOV_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(message)s")
    return load(args.config)


def config_path(name):
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "configs", name)
