"""Procedural head renderer standing in for real gaze datasets.

A head is an orthographically projected sphere, lit from the camera, on a
noisy background. Skin covers the spherical cap of half-angle ``face_angle``
centered on the gaze direction and hair covers the rest, so the face slides
and foreshortens as the gaze turns, and faces away from the camera show
mostly hair. The skin/hair mix at a surface point ``q`` is a linear ramp in
``<q, g>`` of width ``edge``, which keeps the rendering exactly invertible on
the boundary band (see :func:`decode_oracle`).

Image pixel axes are x right, y down; a pixel at offset ``(u, v)`` from the
head center (radius units) shows the surface point ``(-u, -v, -sqrt(1 - u^2
- v^2))`` in eye coordinates.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DegenerateVector
from ..geometry import (angular_error_deg, normalize3, project_to_2d, sample_cap,
                        slerp_gaze)
from .manifest import SampleRecord, write_manifest, write_oracle


@dataclass(frozen=True)
class DomainParams:
    skin: tuple[float, float, float] = (0.95, 0.8, 0.65)
    hair: tuple[float, float, float] = (0.3, 0.18, 0.1)
    background: tuple[float, float, float] = (0.2, 0.3, 0.25)
    noise: float = 0.02
    cap_center: tuple[float, float, float] = (0.0, 0.0, -1.0)
    cap_half_angle: float = 60.0
    face_angle: float = 60.0
    edge: float = 0.3
    ambient: float = 0.35
    frame_size: int = 96
    head_frac: float = 0.3
    jitter: float = 0.05
    max_step_deg: float = 25.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainParams":
        d = dict(d)
        for k in ("skin", "hair", "background", "cap_center"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


PALETTE_A = dict(skin=(0.95, 0.8, 0.65), hair=(0.3, 0.18, 0.1), background=(0.2, 0.3, 0.25))
PALETTE_B = dict(skin=(0.7, 0.75, 0.95), hair=(0.12, 0.1, 0.25), background=(0.4, 0.25, 0.3))

PRESETS = {
    "3d": DomainParams(**PALETTE_A, cap_half_angle=60.0),
    "2d": DomainParams(**PALETTE_B, cap_half_angle=150.0, noise=0.03),
    "test": DomainParams(**PALETTE_B, cap_half_angle=150.0, noise=0.03),
}

# narrow source domain vs. wide target domain, for self-training experiments
CROSS_DOMAIN = {
    "3d": DomainParams(**PALETTE_A, cap_half_angle=50.0),
    "2d": DomainParams(**PALETTE_B, cap_half_angle=150.0, noise=0.03),
    "test": DomainParams(**PALETTE_B, cap_half_angle=150.0, noise=0.03),
}


def _surface(S: int, center, radius: float):
    """Per-pixel sphere geometry: offsets ``u, v``, inside mask, and ``lam = -q_z``."""
    coords = np.arange(S) + 0.5
    u = np.broadcast_to((coords[None, :] - center[0]) / radius, (S, S))
    v = np.broadcast_to((coords[:, None] - center[1]) / radius, (S, S))
    r2 = u**2 + v**2
    return u, v, r2 <= 1.0, np.sqrt(np.clip(1.0 - r2, 0.0, None))


def render_frame(gaze, center, radius: float, domain: DomainParams,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Render one ``(S, S, 3)`` float32 frame in [0, 1]."""
    g = normalize3(gaze)
    u, v, inside, lam = _surface(domain.frame_size, center, radius)
    cos_q = -u * g[0] - v * g[1] - lam * g[2]
    w = np.clip((cos_q - np.cos(np.radians(domain.face_angle))) / domain.edge + 0.5, 0.0, 1.0)
    skin, hair = np.asarray(domain.skin), np.asarray(domain.hair)
    shade = domain.ambient + (1.0 - domain.ambient) * lam
    color = (hair + w[..., None] * (skin - hair)) * shade[..., None]
    img = np.where(inside[..., None], color, np.asarray(domain.background))
    if rng is not None and domain.noise > 0:
        img = img + rng.normal(0.0, domain.noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render_synth(spec: dict) -> np.ndarray:
    """Render an inline manifest ``synth`` spec to ``(T, S, S, 3)``."""
    domain = DomainParams.from_dict(spec.get("domain", {}))
    rng = np.random.default_rng(spec["noise_seed"]) if "noise_seed" in spec else None
    return np.stack([render_frame(g, c, spec["radius"], domain, rng)
                     for g, c in zip(spec["gazes"], spec["centers"])])


def _trajectory(rng, domain: DomainParams, clip_len: int) -> np.ndarray:
    g0 = sample_cap(rng, 1, domain.cap_center, domain.cap_half_angle)[0]
    if clip_len == 1:
        return g0[None]
    g1 = sample_cap(rng, 1, domain.cap_center, domain.cap_half_angle)[0]
    ang = angular_error_deg(g0, g1)
    if ang > domain.max_step_deg:
        g1 = slerp_gaze(g0, g1, domain.max_step_deg / ang)
    return np.stack([slerp_gaze(g0, g1, k / (clip_len - 1)) for k in range(clip_len)])


def _layout(rng, domain: DomainParams, clip_len: int):
    S = domain.frame_size
    radius = domain.head_frac * S
    c0 = S / 2.0 + rng.uniform(-domain.jitter, domain.jitter, 2) * S
    drift = rng.uniform(-1.0, 1.0, 2)
    u = np.linspace(0.0, 1.0, clip_len)[:, None] if clip_len > 1 else np.zeros((1, 1))
    centers = c0[None] + u * drift[None]
    mean_c = centers.mean(axis=0)
    head_box = (float(mean_c[0] - radius), float(mean_c[1] - radius), float(2 * radius), float(2 * radius))
    return centers, radius, head_box


def random_synth_spec(rng: np.random.Generator, domain: DomainParams, clip_len: int) -> dict:
    """One random clip as an inline spec (plus its ``head_box``)."""
    gazes = _trajectory(rng, domain, clip_len)
    centers, radius, head_box = _layout(rng, domain, clip_len)
    return {"gazes": gazes.tolist(), "centers": centers.tolist(), "radius": radius,
            "domain": domain.to_dict(), "noise_seed": int(rng.integers(0, 2**31 - 1)),
            "head_box": list(head_box)}


def _save_png(path: Path, frame: np.ndarray):
    Image.fromarray(np.round(frame * 255.0).astype(np.uint8)).save(path, optimize=False)


def _generate(count, domain, seed, out_dir, name, clip_len, dataset, inline, keep_xy_away_from_axis=False):
    out_dir = Path(out_dir)
    frame_dir = out_dir / name
    if not inline:
        frame_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        gazes = _trajectory(rng, domain, clip_len)
        while keep_xy_away_from_axis and np.hypot(*gazes[0, :2]) < 1e-3:
            gazes = _trajectory(rng, domain, clip_len)
        centers, radius, head_box = _layout(rng, domain, clip_len)
        noise_seed = int(rng.integers(0, 2**31 - 1))
        sid = f"{name}-{i:06d}"
        rec = SampleRecord(id=sid, dataset=dataset or name, head_box=head_box, fps=8.0, root=out_dir)
        spec = {"gazes": gazes.tolist(), "centers": centers.tolist(), "radius": radius,
                "domain": domain.to_dict(), "noise_seed": noise_seed}
        if inline:
            rec.synth = spec
        else:
            frames = render_synth(spec)
            paths = []
            for k, frame in enumerate(frames):
                rel = f"{name}/{sid}_f{k}.png"
                _save_png(out_dir / rel, frame)
                paths.append(rel)
            rec.frames = paths
        rows.append((rec, gazes))
    return rows


def synth_generate_3d(count: int, domain: DomainParams, seed: int, out_dir, name: str = "synth3d",
                      clip_len: int = 8, dataset: str | None = None, inline: bool = False):
    """Render ``count`` 3D-labelled samples (clips of ``clip_len`` frames).

    Returns ``(records, manifest_path)``.
    """
    rows = _generate(count, domain, seed, out_dir, name, clip_len, dataset, inline)
    records = []
    for rec, gazes in rows:
        rec.gaze3d = gazes
        records.append(rec)
    return records, write_manifest(Path(out_dir) / f"{name}.jsonl", records)


def synth_generate_2d(count: int, domain: DomainParams, seed: int, out_dir, name: str = "synth2d",
                      dataset: str | None = None):
    """Render ``count`` images labelled only with their 2D gaze direction.

    The hidden 3D gaze goes to ``<name>.oracle.jsonl`` for offline scoring;
    training code never reads it. Returns ``(records, manifest_path, oracle_path)``.
    """
    rows = _generate(count, domain, seed, out_dir, name, 1, dataset, inline=False,
                     keep_xy_away_from_axis=True)
    records, hidden = [], []
    for rec, gazes in rows:
        v = project_to_2d(gazes[0])
        rec.gaze2d = v
        records.append(rec)
        hidden.append(gazes[0])
    out_dir = Path(out_dir)
    manifest = write_manifest(out_dir / f"{name}.jsonl", records)
    oracle = write_oracle(out_dir / f"{name}.oracle.jsonl", [r.id for r in records], hidden)
    return records, manifest, oracle


def decode_oracle(frame: np.ndarray, head_box, domain: DomainParams, inner: float = 0.9,
                  band: float = 0.15) -> np.ndarray:
    """Recover gaze from a clean render by least squares on the face boundary.

    Knows the renderer's lighting, palette and skin ramp: on boundary pixels
    the ramp inverts to a linear equation ``<q, g> = c`` per pixel. Pixels
    whose mix lies within ``band`` of pure skin or hair are dropped so that
    pixel noise does not leak saturated pixels into the fit. It is a
    learnability certificate for the synthetic task, not a model. Raises
    ``DegenerateVector`` when the head faces so far away that no boundary
    shows.
    """
    x, y, w, h = head_box
    radius = w / 2.0
    u, v, inside, lam = _surface(frame.shape[0], (x + radius, y + radius), radius)
    sel = inside & (u**2 + v**2 <= inner**2)
    skin, hair = np.asarray(domain.skin), np.asarray(domain.hair)
    shade = domain.ambient + (1.0 - domain.ambient) * lam[sel]
    d = skin - hair
    mix = ((frame[sel] / shade[:, None] - hair) @ d) / (d @ d)
    keep = (mix > band) & (mix < 1.0 - band)
    if keep.sum() < 3:
        raise DegenerateVector("face boundary not visible; gaze cannot be decoded")
    q = np.stack([-u[sel], -v[sel], -lam[sel]], axis=1)[keep]
    rhs = np.cos(np.radians(domain.face_angle)) + (mix[keep] - 0.5) * domain.edge
    g, *_ = np.linalg.lstsq(q, rhs, rcond=None)
    return normalize3(g)
