"""Image metrics and analytic-gradient fitting of the color/opacity planes.

The fitting objective is the mean-squared error between rendered and target
views (mean over pixels and channels, averaged over views, so step sizes are
resolution-independent). Gradients flow through the compositing rule
analytically:

    dC(x)/dc_k  = a'_k(x) * T_k(x)
    dC(x)/da_k  = [ c_k T_k - (sum_{j>k} c_j a'_j T_j + T_final * bg) / (1 - a'_k) ] * G_k(x)

where G_k is the Gaussian footprint (a'_k = alpha_k * G_k). Splats skipped by
the 1/255 rule and splats whose a' hit the 0.99 clamp get zero alpha-gradient
(subgradient convention); texels whose Gaussians are culled or invisible get
exactly zero gradient. A pluggable perceptual-loss callback slot exists for
interface completeness but no implementation ships.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .avatar import Avatar
from .avatar_ops import render_threads
from .errors import DimensionMismatch, NonFiniteLoss
from .imageio import Image
from .renderer import (
    ALPHA_CLAMP,
    T_TERMINATE,
    TILE,
    _CHUNK,
    Camera,
    Splat2D,
    _alpha_prime,
    _conics,
    _screen_radius,
    _sorted_splats,
    project,
    rasterize,
)
from .skinning import skin_gaussians
from .template import Pose, forward_kinematics

PSNR_CAP_DB = 99.0


@dataclass
class FitConfig:
    views: list  # of (Camera, Image, Pose)
    iterations: int = 200
    step_size: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    optimize_opacity: bool = False
    # optional callback(pred: Image, gt: Image) -> (loss, dloss_dpred (H,W,3));
    # no implementation ships. lambda defaults to a 1:1 balance when attached.
    perceptual_loss: object = None
    lambda_perceptual: float | None = None

    @property
    def effective_lambda(self) -> float:
        if self.lambda_perceptual is not None:
            return self.lambda_perceptual
        return 1.0 if self.perceptual_loss is not None else 0.0

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size < 0.0:
            raise ValueError("step size must be >= 0")
        if not self.views:
            raise ValueError("at least one view is required")


def mse(a: Image, b: Image) -> float:
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def psnr(a: Image, b: Image) -> float:
    return psnr_from_mse(mse(a, b))


def psnr_from_mse(value: float) -> float:
    if value <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / value))


# ---------------------------------------------------------------------------
# backward pass through the rasterizer

def _splat_loss_and_gradients(splats: Splat2D, camera: Camera, background,
                              target: Image, want_alpha: bool,
                              extra_grad_pixels=None):
    """One fused forward + backward tile walk.

    Per tile: a forward chunked pass composites the tile (identical math to
    the rasterizer, so the loss is measured on the same f32-cast image render
    would produce), then a second chunked pass accumulates per-splat gradients
    with running prefix color/transmittance. `extra_grad_pixels` is an extra
    dLoss/dpixel term (e.g. from a perceptual plugin) added to the MSE one.
    Returns (mse_loss, grad_color, grad_alpha) with gradients in input order.
    """
    m = len(splats)
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    target64 = target.data.astype(np.float64)
    n_values = target64.size
    grad_color = np.zeros((m, 3))
    grad_alpha = np.zeros(m)
    if m == 0:
        diff = np.clip(np.broadcast_to(bg, target64.shape), 0.0, 1.0).astype(np.float32).astype(np.float64) - target64
        return float(np.sum(diff * diff) / n_values), grad_color, grad_alpha

    order = _sorted_splats(splats)
    mean2d = splats.mean2d[order]
    cov2d = splats.cov2d[order]
    color = splats.color[order]
    alpha = splats.alpha[order]
    conic = _conics(cov2d)
    radius = _screen_radius(cov2d, alpha)

    ntx = (w + TILE - 1) // TILE
    nty = (h + TILE - 1) // TILE
    c0 = np.maximum(np.ceil(mean2d[:, 0] - radius - 0.5).astype(np.int64), 0)
    c1 = np.minimum(np.floor(mean2d[:, 0] + radius - 0.5).astype(np.int64), w - 1)
    r0 = np.maximum(np.ceil(mean2d[:, 1] - radius - 0.5).astype(np.int64), 0)
    r1 = np.minimum(np.floor(mean2d[:, 1] + radius - 0.5).astype(np.int64), h - 1)
    ok = (radius > 0.0) & (c0 <= c1) & (r0 <= r1)
    tx0, tx1 = c0 // TILE, c1 // TILE
    ty0, ty1 = r0 // TILE, r1 // TILE
    nx = np.where(ok, tx1 - tx0 + 1, 0)
    ny = np.where(ok, ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total:
        splat_of_pair = np.repeat(np.arange(counts.shape[0]), counts)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        within = np.arange(total) - starts[splat_of_pair]
        dx = within % nx[splat_of_pair]
        dy = within // nx[splat_of_pair]
        tile_of_pair = (ty0[splat_of_pair] + dy) * ntx + (tx0[splat_of_pair] + dx)
        pair_order = np.argsort(tile_of_pair, kind="stable")
        tile_sorted = tile_of_pair[pair_order]
        splat_sorted = splat_of_pair[pair_order]
        boundaries = np.searchsorted(tile_sorted, np.arange(ntx * nty + 1))
    else:
        boundaries = np.zeros(ntx * nty + 1, dtype=np.int64)
        splat_sorted = np.zeros(0, dtype=np.int64)

    grad_color_sorted = np.zeros((m, 3))
    grad_alpha_sorted = np.zeros(m)
    sq_err_total = 0.0

    for ty in range(nty):
        ys, ye = ty * TILE, min(ty * TILE + TILE, h)
        for tx in range(ntx):
            xs, xe = tx * TILE, min(tx * TILE + TILE, w)
            tid = ty * ntx + tx
            members = splat_sorted[boundaries[tid] : boundaries[tid + 1]]
            gy, gx = np.mgrid[ys:ye, xs:xe]
            px = gx.ravel() + 0.5
            py = gy.ravel() + 0.5
            npx = px.shape[0]
            tgt = target64[ys:ye, xs:xe].reshape(npx, 3)

            # pass 1: composite the tile and cache per-chunk alphas
            c_nobg = np.zeros((npx, 3))
            t_run = np.ones(npx)
            cached = []
            for lo in range(0, members.shape[0], _CHUNK):
                sel = members[lo : lo + _CHUNK]
                ap = _alpha_prime(mean2d[sel], tuple(c[sel] for c in conic), alpha[sel], px, py)
                cached.append(ap)
                q = np.cumprod(1.0 - ap, axis=0)
                t_before = np.concatenate([np.ones((1, npx)), q[:-1]], axis=0) * t_run[None, :]
                live = t_before >= T_TERMINATE
                wgt = ap * t_before * live
                c_nobg += np.einsum("kp,kc->pc", wgt, color[sel])
                p_full = t_run[None, :] * q
                crossed = p_full < T_TERMINATE
                any_cross = crossed.any(axis=0)
                k_star = np.argmax(crossed, axis=0)
                t_new = np.where(any_cross, np.take_along_axis(p_full, k_star[None, :], axis=0)[0], p_full[-1])
                t_run = np.where(t_run < T_TERMINATE, t_run, t_new)
            t_final = t_run

            # the loss is measured on the f32 image exactly as rasterize emits it
            tile_img = np.clip(c_nobg + t_final[:, None] * bg[None, :], 0.0, 1.0).astype(np.float32)
            diff = tile_img.astype(np.float64) - tgt
            sq_err_total += float(np.sum(diff * diff))
            g_l = 2.0 * diff / n_values
            if extra_grad_pixels is not None:
                g_l = g_l + extra_grad_pixels[ys:ye, xs:xe].reshape(npx, 3)

            if not members.size:
                continue

            # pass 2: per-splat gradients with running prefixes
            s_prefix = np.zeros((npx, 3))
            t_run = np.ones(npx)
            for ci, lo in enumerate(range(0, members.shape[0], _CHUNK)):
                sel = members[lo : lo + _CHUNK]
                ap = cached[ci]
                q = np.cumprod(1.0 - ap, axis=0)
                t_before = np.concatenate([np.ones((1, npx)), q[:-1]], axis=0) * t_run[None, :]
                live = t_before >= T_TERMINATE
                contributes = live & (ap > 0.0)
                wgt = np.where(contributes, ap * t_before, 0.0)

                grad_color_sorted[sel] += np.einsum("kp,pc->kc", wgt, g_l)

                if want_alpha:
                    contrib_c = wgt[:, :, None] * color[sel][:, None, :]
                    s_after = s_prefix[None, :, :] + np.cumsum(contrib_c, axis=0)
                    downstream = (c_nobg[None, :, :] - s_after) + t_final[None, :, None] * bg[None, None, :]
                    dc_dap = color[sel][:, None, :] * t_before[:, :, None] - downstream / (1.0 - ap)[:, :, None]
                    # footprint factor: a' = alpha * G; clamped splats get zero subgradient
                    g_foot = np.where(alpha[sel][:, None] > 0.0, ap / np.maximum(alpha[sel][:, None], 1e-300), 0.0)
                    unclamped = ap < ALPHA_CLAMP
                    scale = np.where(contributes & unclamped, g_foot, 0.0)
                    grad_alpha_sorted[sel] += np.einsum("kpc,kp->k", dc_dap * g_l[None, :, :], scale)
                    s_prefix += contrib_c.sum(axis=0)

                p_full = t_run[None, :] * q
                crossed = p_full < T_TERMINATE
                any_cross = crossed.any(axis=0)
                k_star = np.argmax(crossed, axis=0)
                t_new = np.where(any_cross, np.take_along_axis(p_full, k_star[None, :], axis=0)[0], p_full[-1])
                t_run = np.where(t_run < T_TERMINATE, t_run, t_new)

    grad_color[order] = grad_color_sorted
    grad_alpha[order] = grad_alpha_sorted
    return sq_err_total / n_values, grad_color, grad_alpha


def _view_loss_and_gradients(avatar: Avatar, splats: Splat2D, camera: Camera,
                             target: Image, want_alpha: bool,
                             perceptual=None, lam: float = 0.0):
    """Fused forward/backward for one view; gradients scattered onto texel planes."""
    if (target.height, target.width) != (camera.height, camera.width):
        raise DimensionMismatch("target image does not match the camera resolution")
    extra = None
    p_loss = 0.0
    if perceptual is not None and lam != 0.0:
        # plugin losses see the whole frame, so render it up front
        rendered = rasterize(splats, camera, avatar.background)
        p_loss, dldp = perceptual(rendered, target)
        extra = lam * np.asarray(dldp, dtype=np.float64).reshape(target.data.shape)
    loss, grad_c, grad_a = _splat_loss_and_gradients(splats, camera, avatar.background,
                                                     target, want_alpha, extra_grad_pixels=extra)
    loss = loss + lam * p_loss
    h, w = avatar.maps.height, avatar.maps.width
    plane_c = np.zeros((h, w, 3))
    plane_a = np.zeros((h, w))
    if splats.source_index is not None and len(splats):
        tex = avatar.anchors.texel_index[splats.source_index]
        iy, ix = np.divmod(tex, w)
        np.add.at(plane_c, (iy, ix), grad_c)
        if want_alpha:
            np.add.at(plane_a, (iy, ix), grad_a)
    return loss, plane_c, plane_a


def color_backward(avatar: Avatar, pose: Pose, camera: Camera, target: Image,
                   optimize_opacity: bool = False):
    """Gradient of the single-view MSE loss w.r.t. the color (and opacity) texels.

    Returns (loss, color_gradient_plane, opacity_gradient_plane).
    """
    canonical = avatar.canonical_gaussians()
    posed = skin_gaussians(canonical, forward_kinematics(avatar.template, pose))
    splats = project(camera, posed)
    return _view_loss_and_gradients(avatar, splats, camera, target, optimize_opacity)


# ---------------------------------------------------------------------------
# optimization loop

@dataclass
class _Adam:
    step: float
    beta1: float
    beta2: float
    epsilon: float
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    t: int = 0

    def update(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return x - self.step * mhat / (np.sqrt(vhat) + self.epsilon)


def fit_color(avatar: Avatar, config: FitConfig):
    """Full-batch adaptive gradient descent on the color (and opacity) planes.

    Geometry never changes during the fit, so per-view skinning/projection is
    done once and only the texel-dependent splat attributes are refreshed each
    iteration. Returns (updated maps, trace) with trace rows (iter, loss, psnr);
    the last row is evaluated after the final step.
    """
    config.validate()
    for cam, target, _pose in config.views:
        if (target.height, target.width) != (cam.height, cam.width):
            raise DimensionMismatch("a target image does not match its camera resolution")

    maps = avatar.maps.copy()
    work = avatar.with_maps(maps)
    canonical = work.canonical_gaussians()
    view_splats = []
    for cam, _target, pose in config.views:
        posed = skin_gaussians(canonical, forward_kinematics(avatar.template, pose))
        view_splats.append(project(cam, posed))

    tex = avatar.anchors.texel_index
    iy, ix = np.divmod(tex, maps.width)

    opt_c = _Adam(config.step_size, config.beta1, config.beta2, config.epsilon)
    opt_a = _Adam(config.step_size, config.beta1, config.beta2, config.epsilon)
    n_views = len(config.views)
    trace = []

    def refresh_splats():
        color = maps.color[iy, ix].astype(np.float64)
        alpha = maps.opacity[iy, ix].astype(np.float64)
        for sp in view_splats:
            src = sp.source_index
            sp.color = color[src]
            sp.alpha = alpha[src]

    def evaluate(want_grads: bool):
        # per-view passes may run concurrently; the reduction happens here,
        # single-owner, in fixed view order, so results are deterministic
        lam = config.effective_lambda

        def one(args):
            (cam, target, _pose), sp = args
            if want_grads:
                return _view_loss_and_gradients(work, sp, cam, target, config.optimize_opacity,
                                                perceptual=config.perceptual_loss, lam=lam)
            loss = mse(rasterize(sp, cam, avatar.background), target)
            if config.perceptual_loss is not None and lam != 0.0:
                loss += lam * config.perceptual_loss(rasterize(sp, cam, avatar.background), target)[0]
            return loss, None, None

        jobs = list(zip(config.views, view_splats))
        workers = render_threads()
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, jobs))
        else:
            results = [one(j) for j in jobs]

        total = 0.0
        gc = np.zeros((maps.height, maps.width, 3))
        ga = np.zeros((maps.height, maps.width))
        for loss, pc, pa in results:
            total += loss
            if pc is not None:
                gc += pc
                ga += pa
        return total / n_views, gc / n_views, ga / n_views

    for it in range(config.iterations):
        refresh_splats()
        loss, grad_c, grad_a = evaluate(want_grads=True)
        trace.append((it, loss, psnr_from_mse(loss)))
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became non-finite at iteration {it}", trace)
        maps.color = np.clip(
            opt_c.update(maps.color.astype(np.float64), grad_c), 0.0, 1.0
        ).astype(np.float32)
        if config.optimize_opacity:
            maps.opacity = np.clip(
                opt_a.update(maps.opacity.astype(np.float64), grad_a), 0.0, 1.0
            ).astype(np.float32)

    refresh_splats()
    final_loss, _, _ = evaluate(want_grads=False)
    trace.append((config.iterations, final_loss, psnr_from_mse(final_loss)))
    if not math.isfinite(final_loss):
        raise NonFiniteLoss("final loss is non-finite", trace)
    return maps, trace


def write_trace_csv(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("iter,loss,psnr\n")
        for it, loss, db in trace:
            f.write(f"{it},{loss:.10g},{db:.10g}\n")


def plot_trace(trace, path) -> None:
    """Loss/PSNR curves rendered to an image file next to the CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    its = [row[0] for row in trace]
    losses = [row[1] for row in trace]
    dbs = [row[2] for row in trace]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(its, losses, color="tab:red", label="loss")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("MSE loss", color="tab:red")
    ax1.set_yscale("log")
    ax2 = ax1.twinx()
    ax2.plot(its, dbs, color="tab:blue", label="PSNR")
    ax2.set_ylabel("PSNR (dB)", color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
