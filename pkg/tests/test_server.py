import asyncio
import json

import pytest
import websockets

from isot.scenario import load_scenario, packaged_scenario_path
from isot.server import serve_async

PORT = 8971


@pytest.fixture()
def scenario():
    return load_scenario(packaged_scenario_path("interactive"))


async def _with_server(scenario, speed, coro):
    ready = asyncio.Event()
    server_task = asyncio.create_task(
        serve_async(scenario, port=PORT, speed=speed, ready=ready))
    await asyncio.wait_for(ready.wait(), 10)
    try:
        async with websockets.connect(f"ws://127.0.0.1:{PORT}") as ws:
            return await coro(ws)
    finally:
        server_task.cancel()
        try:
            await server_task
        except asyncio.CancelledError:
            pass


async def _recv_json(ws, timeout=5.0):
    return json.loads(await asyncio.wait_for(ws.recv(), timeout))


async def _next_of_type(ws, kind, timeout=10.0):
    while True:
        frame = await _recv_json(ws, timeout)
        if frame["type"] == kind:
            return frame


def test_handshake_and_stream(scenario):
    async def run(ws):
        hello = await _recv_json(ws)
        assert hello["type"] == "hello"
        assert len(hello["chain"]["dh"]) == 7
        assert hello["scenario"] == "interactive"
        frames = [await _next_of_type(ws, "state") for _ in range(8)]
        assert frames[0]["phase"] == "homing"
        assert all(len(f["q"]) == 7 for f in frames)
        ts = [f["t"] for f in frames]
        assert all(b >= a for a, b in zip(ts, ts[1:]))
        return frames

    asyncio.run(_with_server(scenario, 1.0, run))


def test_wrist_drag_reaches_pregrasp(scenario):
    async def run(ws):
        await _recv_json(ws)  # hello
        obj_xy = [0.42, 0.0]
        await ws.send(json.dumps({"type": "wrist_pose", "xyz": [obj_xy[0], obj_xy[1], 0.09]}))
        ack = await _next_of_type(ws, "ack")
        assert ack["command"] == "wrist_pose"
        deadline = asyncio.get_event_loop().time() + 25
        while True:
            frame = await _next_of_type(ws, "state")
            if frame["phase"] == "pregrasp":
                return
            assert asyncio.get_event_loop().time() < deadline, "never reached pregrasp"

    asyncio.run(_with_server(scenario, 4.0, run))


def test_gesture_in_wrong_phase_rejected(scenario):
    async def run(ws):
        await _recv_json(ws)
        await ws.send(json.dumps({"type": "gesture", "name": "open_palm"}))
        err = await _next_of_type(ws, "error")
        assert err["code"] == "bad_phase"
        # session survives: stream continues
        frame = await _next_of_type(ws, "state")
        assert frame["phase"] == "homing"

    asyncio.run(_with_server(scenario, 1.0, run))


def test_malformed_frame_survived(scenario):
    async def run(ws):
        await _recv_json(ws)
        await ws.send("this is not json {")
        err = await _next_of_type(ws, "error")
        assert err["code"] == "bad_frame"
        await ws.send(json.dumps({"type": "mystery"}))
        err = await _next_of_type(ws, "error")
        assert err["code"] == "bad_frame"
        frame = await _next_of_type(ws, "state")
        assert "q" in frame

    asyncio.run(_with_server(scenario, 1.0, run))


def test_place_object_phase_rules(scenario):
    async def run(ws):
        await _recv_json(ws)
        await ws.send(json.dumps({
            "type": "place_object", "shape": "block",
            "dims": [0.04, 0.04, 0.024], "pose": [0.38, -0.1, 0.012],
        }))
        ack = await _next_of_type(ws, "ack")
        assert ack["command"] == "place_object"
        frame = await _next_of_type(ws, "state")
        assert len(frame["objects"]) == 2

        await ws.send(json.dumps({"type": "wrist_pose", "xyz": [0.8, 0.8, 0.5]}))
        err = await _next_of_type(ws, "error")
        assert err["code"] == "out_of_workspace"

    asyncio.run(_with_server(scenario, 1.0, run))


def test_reset_restarts_clock(scenario):
    async def run(ws):
        await _recv_json(ws)
        for _ in range(5):
            frame = await _next_of_type(ws, "state")
        assert frame["t"] > 0.0
        await ws.send(json.dumps({"type": "reset"}))
        await _next_of_type(ws, "ack")

    asyncio.run(_with_server(scenario, 1.0, run))
