"""Local HTTP service exposing the avatar engine to scripts and the browser viewer.

Plain JSON + PNG over HTTP, no push channel: clients re-fetch /v1/render after
mutating. Mutations are serialized by a single-writer lock and bump a revision
counter; renders take an immutable snapshot (state objects are replaced, never
mutated in place), so every returned image corresponds to exactly one revision.
"""
from __future__ import annotations

import io
import json
import threading
import zipfile
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import quat
from .avatar import Avatar
from .avatar_ops import TexturePatch, edit_texture
from .errors import AvatarError
from .imageio import to_png_bytes
from .renderer import Camera, Intrinsics, auto_camera, make_rig, render
from .template import Pose, identity_pose


@dataclass
class _Snapshot:
    avatar: Avatar
    pose: Pose
    camera: Camera
    revision: int


class AvatarSession:
    """Single mutable avatar behind a single-writer lock with snapshot reads."""

    def __init__(self, avatar: Avatar, camera: Camera | None = None):
        self._lock = threading.Lock()
        self._avatar = avatar
        self._pose = identity_pose(avatar.template)
        self._camera = camera or auto_camera(avatar.shaped_vertices, 512, 512)
        self._revision = 0

    # -- reads ------------------------------------------------------------
    def snapshot(self) -> _Snapshot:
        with self._lock:
            return _Snapshot(self._avatar, self._pose, self._camera, self._revision)

    def joints(self) -> dict:
        t = self._avatar.template
        return {"names": list(t.joint_names), "parents": [int(p) for p in t.parents]}

    def state(self) -> dict:
        snap = self.snapshot()
        return {
            "pose": {
                "root_t": [float(v) for v in snap.pose.root_translation],
                "rot": [[float(c) for c in q] for q in snap.pose.joint_rotations],
            },
            "beta": [float(b) for b in snap.avatar.beta],
            "camera": _camera_to_json(snap.camera),
            "revision": snap.revision,
        }

    # -- mutations ---------------------------------------------------------
    def _commit(self, mutate, expected_revision) -> int:
        with self._lock:
            if expected_revision is not None and expected_revision != self._revision:
                raise RevisionConflict(f"expected revision {expected_revision}, at {self._revision}")
            mutate()
            self._revision += 1
            return self._revision

    def set_pose(self, pose: Pose, expected_revision=None) -> int:
        pose.validate()
        if pose.joint_rotations.shape[0] != self._avatar.template.joint_count:
            raise AvatarError("pose has the wrong number of joints")

        def mutate():
            self._pose = pose

        return self._commit(mutate, expected_revision)

    def set_shape(self, beta, expected_revision=None) -> int:
        new_avatar = self._avatar.with_shape(beta)  # heavy rebuild outside the lock

        def mutate():
            self._avatar = new_avatar

        return self._commit(mutate, expected_revision)

    def set_camera(self, camera: Camera, expected_revision=None) -> int:
        camera.validate()

        def mutate():
            self._camera = camera

        return self._commit(mutate, expected_revision)

    def apply_texture_patch(self, patch: TexturePatch, expected_revision=None) -> int:
        with self._lock:
            if expected_revision is not None and expected_revision != self._revision:
                raise RevisionConflict(f"expected revision {expected_revision}, at {self._revision}")
            self._avatar = self._avatar.with_maps(edit_texture(self._avatar.maps, patch))
            self._revision += 1
            return self._revision

    # -- rendering ----------------------------------------------------------
    def render_png(self, width=None, height=None) -> bytes:
        snap = self.snapshot()
        cam = snap.camera
        if width or height:
            cam = cam.resized(int(width or cam.width), int(height or cam.height))
        return to_png_bytes(render(snap.avatar, snap.pose, cam, snap.avatar.background))

    def turntable_zip(self, n_views: int) -> bytes:
        snap = self.snapshot()
        cam = snap.camera
        verts = snap.avatar.shaped_vertices
        target = 0.5 * (verts.min(axis=0) + verts.max(axis=0))
        cam_center = -cam.world_to_cam[:3, :3].T @ cam.world_to_cam[:3, 3]
        radius = float(np.linalg.norm(cam_center - target))
        intr = Intrinsics(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, cam.near)
        rig = make_rig(n_views, 0.0, radius, target, intr)
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for i, view_cam in enumerate(rig):
                png = to_png_bytes(render(snap.avatar, snap.pose, view_cam, snap.avatar.background))
                info = zipfile.ZipInfo(f"view_{i:03d}.png", date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, png)
        return buf.getvalue()


class RevisionConflict(AvatarError):
    pass


def _camera_to_json(camera: Camera) -> dict:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height, "near": camera.near,
        "world_to_cam": [float(v) for v in camera.world_to_cam.reshape(-1)],
    }


def _camera_from_json(obj: dict) -> Camera:
    cam = Camera(
        fx=float(obj["fx"]), fy=float(obj["fy"]), cx=float(obj["cx"]), cy=float(obj["cy"]),
        width=int(obj["width"]), height=int(obj["height"]),
        world_to_cam=np.asarray(obj["world_to_cam"], dtype=np.float64).reshape(4, 4),
        near=float(obj.get("near", 0.01)),
    )
    cam.validate()
    return cam


def _pose_from_json(obj: dict, joint_count: int) -> Pose:
    rot = np.asarray(obj["rot"], dtype=np.float64)
    if rot.shape != (joint_count, 4):
        raise AvatarError(f"pose rot must be ({joint_count}, 4)")
    return Pose(np.asarray(obj["root_t"], dtype=np.float64), quat.normalize(rot))


def make_handler(session: AvatarSession, ui_dir=None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code: int, body: bytes, content_type: str):
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _json(self, code: int, obj):
            self._send(code, json.dumps(obj).encode("utf-8"), "application/json")

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length", "0"))
            return self.rfile.read(length) if length else b""

        def _dispatch(self, method: str):
            url = urlparse(self.path)
            query = parse_qs(url.query)
            try:
                self._route(method, url.path, query)
            except RevisionConflict as exc:
                self._json(409, {"error": str(exc), "revision": session.snapshot().revision})
            except (AvatarError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                self._json(400, {"error": str(exc)})
            except BrokenPipeError:
                pass
            except Exception as exc:  # internal invariant failure
                self._json(500, {"error": f"internal error: {exc}"})

        def _route(self, method: str, path: str, query):
            if method == "GET" and path == "/v1/state":
                return self._json(200, session.state())
            if method == "GET" and path == "/v1/joints":
                return self._json(200, session.joints())
            if method == "GET" and path == "/v1/render":
                w = query.get("w", [None])[0]
                h = query.get("h", [None])[0]
                return self._send(200, session.render_png(w, h), "image/png")
            if method == "GET" and path == "/v1/turntable":
                n = int(query.get("n", ["24"])[0])
                if n < 1:
                    raise AvatarError("n must be >= 1")
                return self._send(200, session.turntable_zip(n), "application/zip")
            if method == "GET" and (path == "/ui" or path.startswith("/ui/")):
                return self._static(path)
            if method == "PUT" and path in ("/v1/pose", "/v1/shape", "/v1/camera"):
                obj = json.loads(self._read_body().decode("utf-8"))
                expected = obj.pop("expected_revision", None)
                if path == "/v1/pose":
                    rev = session.set_pose(
                        _pose_from_json(obj, session.snapshot().avatar.template.joint_count), expected)
                elif path == "/v1/shape":
                    rev = session.set_shape(np.asarray(obj["beta"], dtype=np.float64), expected)
                else:
                    rev = session.set_camera(_camera_from_json(obj), expected)
                return self._json(200, {"revision": rev})
            if method == "POST" and path == "/v1/texture/patch":
                rect = tuple(float(query[k][0]) for k in ("u0", "v0", "u1", "v1"))
                body = self._read_body()
                from PIL import Image as PILImage

                from .imageio import srgb_to_linear

                with PILImage.open(io.BytesIO(body)) as img:
                    rgba = np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0
                rgba[..., :3] = srgb_to_linear(rgba[..., :3])
                expected = query.get("expected_revision", [None])[0]
                expected = int(expected) if expected is not None else None
                rev = session.apply_texture_patch(
                    TexturePatch(rgba.astype(np.float32), rect), expected)
                return self._json(200, {"revision": rev})
            self._json(404, {"error": f"no route {method} {path}"})

        def _static(self, path: str):
            import os

            if ui_dir is None:
                return self._json(404, {"error": "no UI assets configured"})
            rel = path[len("/ui"):].lstrip("/") or "index.html"
            base = os.path.realpath(ui_dir)
            full = os.path.realpath(os.path.join(base, rel))
            if not full.startswith(base + os.sep) and full != base:
                return self._json(404, {"error": "not found"})
            if not os.path.isfile(full):
                return self._json(404, {"error": "not found"})
            ctype = {
                ".html": "text/html", ".js": "application/javascript",
                ".css": "text/css", ".png": "image/png", ".map": "application/json",
            }.get(os.path.splitext(full)[1], "application/octet-stream")
            with open(full, "rb") as f:
                self._send(200, f.read(), ctype)

        def do_GET(self):
            self._dispatch("GET")

        def do_PUT(self):
            self._dispatch("PUT")

        def do_POST(self):
            self._dispatch("POST")

    return Handler


def serve(session: AvatarSession, port: int, host: str = "127.0.0.1", ui_dir=None) -> ThreadingHTTPServer:
    """Create (but do not start) the HTTP server; call serve_forever() to run."""
    handler = make_handler(session, ui_dir=ui_dir)
    return ThreadingHTTPServer((host, port), handler)
