"""Walkthrough: drive an episode over the newline-JSON wire protocol, the
same surface an external (learned) policy or trainer uses.

Run from the repo root:  python3 demos/03_wire_protocol.py
"""

import json
import math
import threading

from nbvsim.env import EnvConfig, Scene, build_ground_truth
from nbvsim.geometry import CameraIntrinsics, build_bvh, normalize_mesh
from nbvsim.houses import generate_house
from nbvsim.mapping import GridConfig
from nbvsim.server import ProtocolClient, ProtocolServer

grid = GridConfig()  # paper-sized 20x20x20 grid over the action box
config = EnvConfig(
    intrinsics=CameraIntrinsics(width=96, height=96,
                                vertical_fov=math.pi / 2, max_range=40.0),
    grid=grid)
mesh = normalize_mesh(generate_house(5), (10.0, 10.0, 6.0))
scene = Scene("house_5", mesh, build_bvh(mesh),
              build_ground_truth(mesh, grid, seed=0))

server = ProtocolServer(config, [scene], bind="127.0.0.1:0", quiet=True)
threading.Thread(target=server.serve_forever, daemon=True).start()
host, port = server.server_address
print(f"server on {host}:{port}")

client = ProtocolClient(host, port)
hello = client.request({"type": "hello", "want_frames": False})
print("capabilities:", json.dumps({k: hello[k] for k in
                                   ("version", "grid_dims", "action_box")}))

reply = client.request({"type": "reset", "scene": "house_5", "seed": 0})
obs = reply["obs"]
print(f"reset: CR_0 = {obs['coverage']:.2f}%, "
      f"payload carries {len(obs['grid_logodds'])} grid cells")

# orbit the house vs. whatever the grid says — here a scripted orbit
for k in range(6):
    phi = 2 * math.pi * k / 6
    action = [9 * math.cos(phi), 9 * math.sin(phi), 4.0, -0.35,
              math.atan2(-math.sin(phi), -math.cos(phi))]
    reply = client.request({"type": "step", "action": action})
    print(f"step {k + 1}: reward {reply['reward']:+.4f}, "
          f"CR {reply['info']['cr']:6.2f}%, terminated={reply['terminated']}")
    if reply["terminated"]:
        break

# protocol errors are replies, never crashes
bad = client.request({"type": "step", "action": [1, 2, 3]})
print("bad action ->", bad["code"])

client.close()
server.shutdown()
server.server_close()
