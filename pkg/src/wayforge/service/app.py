"""FastAPI service: read-only HTTP endpoints over the workspace plus the
session WebSocket carrying the correction loop to interactive clients.

Each WebSocket connection owns at most one live session (one world); a
background task advances the replay at the simulator tick rate and streams
state snapshots. Malformed or unknown messages produce error replies and
never close the connection; a failure inside one session never disturbs
others.
"""

from __future__ import annotations

import asyncio
import json
import traceback

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from ..dataset import Dataset
from ..episode import EpisodeLog
from ..hitl import CorrectionConfig, CorrectionMode, append_to_corrections, start_replay
from ..kinematics import default_models
from ..policy.checkpoint import load_checkpoint
from ..policy.training import PolicyLowLevel
from ..rollout import execute_rollout
from ..workspace import Workspace
from .schemas import (
    FinalizePayload,
    GripperPayload,
    ResidualDeltaPayload,
    SessionMessage,
    SetModePayload,
    StartReplayPayload,
    StartRolloutPayload,
    ValidationError,
    snapshot_payload,
)

TICK_SECONDS = 0.05  # 20 Hz snapshot cadence


def create_app(ws: Workspace) -> FastAPI:
    app = FastAPI(title="wayforge service")
    models = default_models()

    @app.get("/tasks")
    def list_tasks():
        out = []
        for tid in ws.list_tasks():
            try:
                out.append(ws.load_task(tid).to_dict())
            except FileNotFoundError:
                continue
        return {"tasks": out}

    @app.get("/episodes")
    def list_episodes():
        return {"episodes": [n[:-6] for n in ws.list_dir("episodes") if n.endswith(".jsonl")]}

    @app.get("/episodes/{episode_id}")
    def get_episode(episode_id: str):
        path = ws.episode_path(episode_id)
        if not path.exists():
            raise HTTPException(404, f"no episode {episode_id}")
        log = EpisodeLog.read(path)
        return {"id": episode_id, "header": log.header_dict(), "records": log.records}

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [n[:-6] for n in ws.list_dir("sessions") if n.endswith(".jsonl")]}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        path = ws.session_path(session_id)
        if not path.exists():
            raise HTTPException(404, f"no session {session_id}")
        log = EpisodeLog.read(path)
        return {"id": session_id, "header": log.header_dict(), "records": log.records}

    @app.get("/reports")
    def list_reports():
        return {"reports": [n[:-5] for n in ws.list_dir("reports") if n.endswith(".json")]}

    @app.get("/reports/{report_id}")
    def get_report(report_id: str):
        path = ws.report_path(report_id)
        if not path.exists():
            raise HTTPException(404, f"no report {report_id}")
        return json.loads(path.read_text())

    @app.get("/checkpoints")
    def list_checkpoints():
        return {"checkpoints": [n for n in ws.list_dir("checkpoints") if n.endswith(".ckpt")]}

    @app.get("/datasets")
    def list_datasets():
        return {"datasets": ws.list_dir("datasets")}

    @app.websocket("/session")
    async def session_socket(sock: WebSocket):
        await sock.accept()
        handler = SessionHandler(ws, models, sock)
        try:
            await handler.run()
        except WebSocketDisconnect:
            pass
        finally:
            handler.stop()

    return app


class SessionHandler:
    """One WebSocket connection: command handling plus the tick pump."""

    def __init__(self, ws: Workspace, models: dict, sock: WebSocket):
        self.ws = ws
        self.models = models
        self.sock = sock
        self.session = None
        self.session_id = None
        self.paused = False
        self._pump: asyncio.Task | None = None
        self._counter = 0

    async def run(self):
        while True:
            raw = await self.sock.receive_text()
            try:
                msg = SessionMessage.model_validate_json(raw)
            except ValidationError as exc:
                await self.reply("error", {"error": "invalid message", "detail": str(exc)})
                continue
            try:
                await self.handle(msg)
            except WebSocketDisconnect:
                raise
            except Exception as exc:  # session errors never kill the socket
                await self.reply(
                    "error",
                    {"error": type(exc).__name__, "detail": str(exc),
                     "trace": traceback.format_exc(limit=3)},
                )

    def stop(self):
        if self._pump is not None:
            self._pump.cancel()

    async def reply(self, mtype: str, payload: dict):
        await self.sock.send_text(
            json.dumps({"type": mtype, "session_id": self.session_id, "payload": payload})
        )

    async def snapshot(self):
        if self.session is not None:
            await self.reply("state_snapshot", snapshot_payload(self.session))

    async def handle(self, msg: SessionMessage):
        t = msg.type
        if t == "start_replay":
            p = StartReplayPayload.model_validate(msg.payload)
            path = self.ws.episode_path(p.episode_id)
            if not path.exists():
                path = self.ws.session_path(p.episode_id)
            log = EpisodeLog.read(path)
            task = self.ws.load_task(log.task_id)
            self._counter += 1
            self.session_id = f"{p.episode_id}-s{self._counter}"
            self.session = start_replay(
                log, CorrectionConfig(alpha=p.alpha, beta=p.beta), task, self.models,
                allow_success=p.allow_success, session_id=self.session_id,
            )
            self.session.paused = False
            self.paused = False
            await self.reply("event", {"event": "session_started", "source": p.episode_id})
            await self.snapshot()
            self._start_pump()
        elif t == "start_rollout":
            p = StartRolloutPayload.model_validate(msg.payload)
            task = self.ws.load_task(p.task_id)
            policy = load_checkpoint(self.ws.checkpoint_path(p.checkpoint))
            from ..world import DomainParams

            dom = DomainParams.named(p.domain, obs_offset=p.domain_offset)
            result = execute_rollout(task, PolicyLowLevel(policy), p.seed, dom, self.models)
            self._counter += 1
            rollout_id = f"{result.log.episode_id}-live{self._counter}"
            self.ws.write_text(self.ws.session_path(rollout_id), result.log.to_jsonl(), force=True)
            self.session_id = rollout_id
            self.session = start_replay(
                result.log, CorrectionConfig(), task, self.models,
                allow_success=True, session_id=rollout_id,
            )
            self.session.paused = False
            self.paused = False
            await self.reply(
                "event",
                {"event": "session_started", "rollout_outcome": result.outcome.to_dict()},
            )
            await self.snapshot()
            self._start_pump()
        elif self.session is None:
            await self.reply("error", {"error": "no active session", "got": t})
        elif t == "residual_delta":
            p = ResidualDeltaPayload.model_validate(msg.payload)
            from ..trajectory import Arm

            arm = Arm(p.arm)
            if self.session.mode is CorrectionMode.RESIDUAL:
                applied = self.session.apply_residual(arm, p.delta)
            else:
                applied = self.session.teleop_delta(arm, p.delta)
            await self.reply(
                "event",
                {"event": "correction", "arm": p.arm,
                 "raw": list(p.delta), "applied": [float(v) for v in applied],
                 "mode": self.session.mode.value},
            )
        elif t == "set_mode":
            p = SetModePayload.model_validate(msg.payload)
            mode = self.session.set_mode(p.mode)
            await self.reply("event", {"event": "mode", "mode": mode.value})
        elif t in ("grasp", "release"):
            p = GripperPayload.model_validate(msg.payload)
            from ..trajectory import Arm

            self.session.command_gripper(Arm(p.arm), close=(t == "grasp"))
            await self.reply("event", {"event": t, "arm": p.arm})
            await self.snapshot()
        elif t == "pause":
            self.paused = True
            self.session.paused = True
            await self.reply("event", {"event": "paused"})
        elif t == "resume":
            self.paused = False
            self.session.paused = False
            await self.reply("event", {"event": "resumed"})
        elif t == "finalize":
            p = FinalizePayload.model_validate(msg.payload)
            if self._pump is not None:
                self._pump.cancel()
                self._pump = None
            self.session.run(finish_incomplete=p.complete)
            corrected, outcome = self.session.finalize()
            self.ws.write_text(
                self.ws.session_path(self.session_id), corrected.to_jsonl(), force=True
            )
            added = 0
            if outcome.success and p.dataset:
                ddir = self.ws.dataset_dir(p.dataset)
                ds = Dataset.load(ddir) if (ddir / "manifest.json").exists() else Dataset()
                added = append_to_corrections(ds, corrected)
                ds.save(ddir)
            await self.reply(
                "outcome",
                {"outcome": outcome.to_dict(), "corrections_added": added,
                 "log": self.session_id},
            )
            self.session = None
        else:
            await self.reply("error", {"error": f"unknown message type {t!r}"})

    def _start_pump(self):
        if self._pump is not None:
            self._pump.cancel()
        self._pump = asyncio.create_task(self._tick_pump())

    async def _tick_pump(self):
        try:
            while self.session is not None:
                await asyncio.sleep(TICK_SECONDS)
                if self.paused or self.session is None:
                    continue
                alive = self.session.step()
                await self.snapshot()
                if not alive:
                    break
        except asyncio.CancelledError:
            pass
        except Exception as exc:
            try:
                await self.reply("error", {"error": type(exc).__name__, "detail": str(exc)})
            except Exception:
                pass
