"""Builds a fixture workspace (one failed and one successful episode) and
serves it, for the console's end-to-end tests."""

import argparse
import sys

import uvicorn

from wayforge.kinematics import default_models
from wayforge.rollout import ScriptedExpert, execute_rollout
from wayforge.service.app import create_app
from wayforge.tasks import builtin_tasks
from wayforge.world import DomainParams
from wayforge.workspace import Workspace


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--workspace", required=True)
    parser.add_argument("--port", type=int, default=8741)
    args = parser.parse_args()

    ws = Workspace.locate(args.workspace).init()
    models = default_models()
    task = builtin_tasks()["bottle_collecting"]
    offset_domain = DomainParams.shifted(obs_offset=(0.0, 0.0, 0.03))
    for seed in range(30):
        res = execute_rollout(task, ScriptedExpert(), seed, offset_domain, models)
        if not res.outcome.success:
            res.log.write(ws.episode_path("failed-demo"))
            break
    ok = execute_rollout(task, ScriptedExpert(), 3, DomainParams.nominal(), models)
    ok.log.write(ws.episode_path("success-demo"))

    uvicorn.run(create_app(ws), host="127.0.0.1", port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
