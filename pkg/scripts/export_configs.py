"""Write the canned scenarios to configs/*.json."""

import json
import os

from swarm_gov.scenarios import default_burst, default_comparative, default_sweep

from _common import config_path

CANNED = {
    "comparative.json": default_comparative,
    "agent_sweep.json": default_sweep,
    "burst.json": default_burst,
}


def main():
    for name, make in CANNED.items():
        path = os.path.normpath(config_path(name))
        with open(path, "w") as fh:
            json.dump(make().to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(path)


if __name__ == "__main__":
    main()
