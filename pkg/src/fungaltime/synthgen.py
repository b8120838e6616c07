"""Procedural generator for the time-aligned fungal growth dataset.

Every sample is a quadruple: an RGB image, a growth-stage label
(spore=0, hyphae=1, mycelium=2), a timestamp in hours and a templated
text description. Generation is fully deterministic: all geometry and
noise derive from per-sample seeds, and the timestamp only selects how
much of a precomputed scene is drawn. Drawing more of the same scene
never removes foreground pixels, so visual density is non-decreasing in
time for a fixed seed.
"""

from __future__ import annotations

import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .config import STAGE_NAMES, SPLIT_NAMES, GenConfig
from .errors import ConfigError, DataError, InputError

SPORE, HYPHAE, MYCELIUM = 0, 1, 2

MANIFEST_NAME = "manifest.tsv"
IMAGES_SUBDIR = "images"
MANIFEST_HEADER = "#image_path\tlabel_index\ttimestamp_hours\tdescription\tsplit"

# Pixels darker than this mean-channel value count as foreground; the
# background stays in [232, 252] and all drawn structures are <= 110.
FOREGROUND_THRESHOLD = 160

TIME_PHRASES = ("early", "mid", "late")

DESCRIPTION_TEMPLATES = {
    SPORE: (
        "a microscopy image of spore structures at an {phrase} time point",
        "round spore bodies scattered on the substrate, {phrase} in this stage",
        "synthetic culture showing the spore stage during its {phrase} phase",
        "dormant spore units before germination, {phrase} period",
    ),
    HYPHAE: (
        "a microscopy image of branching hyphae at an {phrase} time point",
        "filamentous hyphae extending from germinated spores, {phrase} in this stage",
        "synthetic culture showing the hyphae stage during its {phrase} phase",
        "thin hyphae threads colonizing the substrate, {phrase} period",
    ),
    MYCELIUM: (
        "a microscopy image of dense mycelium at an {phrase} time point",
        "an interconnected mycelium mat covering the substrate, {phrase} in this stage",
        "synthetic culture showing the mycelium stage during its {phrase} phase",
        "a mature mycelium network of fused hyphae, {phrase} period",
    ),
}


@dataclass(frozen=True)
class Sample:
    """One dataset record as stored in the manifest."""

    image_path: str
    label: int
    timestamp_hours: float
    description: str
    split: str

    def validate(self) -> None:
        if self.label not in (SPORE, HYPHAE, MYCELIUM):
            raise DataError(f"label index must be 0, 1 or 2, got {self.label}")
        if not math.isfinite(self.timestamp_hours) or self.timestamp_hours < 0:
            raise DataError(f"timestamp must be a nonnegative finite number, got {self.timestamp_hours}")
        if not self.description:
            raise DataError("description must be non-empty")
        if self.split not in SPLIT_NAMES:
            raise DataError(f"split must be one of {SPLIT_NAMES}, got {self.split!r}")


@dataclass(frozen=True)
class StageParams:
    """Continuous rendering parameters for one point in the lifecycle.

    All fields are non-decreasing functions of the timestamp, which is
    what makes rendered density monotone over time.
    """

    stage: int
    progress: float        # overall lifecycle position in [0, 1]
    spore_fill: float      # fraction of potential spore bodies present
    filament_growth: float # fraction of the filament trees grown
    mesh_density: float    # fraction of mesh connectors drawn


def growth_params_from_time(t: float, cfg: GenConfig) -> StageParams:
    """Map a timestamp to a stage label and continuous density parameters.

    Stage bands: [t_min, T1) spore, [T1, T2) hyphae, [T2, t_max] mycelium.
    Filaments and mesh each appear with a small initial offset at their
    band boundary so the three stages stay visually distinct.
    """
    if not (cfg.t_min <= t <= cfg.t_max):
        raise InputError(f"timestamp {t} outside generation range [{cfg.t_min}, {cfg.t_max}]")
    t1, t2 = cfg.stage_boundaries
    progress = (t - cfg.t_min) / (cfg.t_max - cfg.t_min)

    if t < t1:
        stage = SPORE
    elif t < t2:
        stage = HYPHAE
    else:
        stage = MYCELIUM

    spore_fill = 0.3 + 0.7 * min(1.0, (t - cfg.t_min) / (t1 - cfg.t_min))
    if t < t1:
        filament_growth = 0.0
    else:
        filament_growth = min(1.0, 0.15 + 0.85 * (t - t1) / (t2 - t1))
    if t < t2:
        mesh_density = 0.0
    else:
        mesh_density = 0.25 + 0.75 * (t - t2) / (cfg.t_max - t2)

    return StageParams(
        stage=stage,
        progress=progress,
        spore_fill=spore_fill,
        filament_growth=filament_growth,
        mesh_density=mesh_density,
    )


# ── Scene construction ───────────────────────────────────────────────────

_SPORE_COLOR = (72, 52, 38)
_FILAMENT_COLOR = (58, 48, 40)
_MESH_COLOR = (66, 54, 44)


def _build_scene(seed: int, size: int) -> dict:
    """Precompute the fully grown scene for one sample seed.

    Returns spore bodies, filament tree segments in growth order and mesh
    connector segments. Geometry depends only on the seed and image size,
    never on the timestamp.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    s = float(size)
    margin = 0.08 * s

    n_spores = int(rng.integers(18, 27))
    spores = []
    for _ in range(n_spores):
        cx = rng.uniform(margin, s - margin)
        cy = rng.uniform(margin, s - margin)
        r = rng.uniform(0.022, 0.042) * s
        aspect = rng.uniform(0.8, 1.2)
        spores.append((cx, cy, r, r * aspect))

    # Filament trees sprout from the first few spore centres (germ points).
    n_trees = int(rng.integers(6, 9))
    segments = []          # ((x0, y0), (x1, y1), width), in growth order
    step = 0.045 * s
    frontier = []
    for k in range(min(n_trees, n_spores)):
        cx, cy, _, _ = spores[k]
        theta = rng.uniform(0.0, 2.0 * math.pi)
        frontier.append((cx, cy, theta, 0))
    tips = []
    max_depth = 14
    while frontier:
        next_frontier = []
        for (x, y, theta, depth) in frontier:
            if depth >= max_depth:
                tips.append((x, y))
                continue
            theta2 = theta + rng.uniform(-0.55, 0.55)
            x2 = x + step * math.cos(theta2)
            y2 = y + step * math.sin(theta2)
            x2 = min(max(x2, 1.0), s - 1.0)
            y2 = min(max(y2, 1.0), s - 1.0)
            width = max(1, round((2.2 - 0.09 * depth) * s / 96.0))
            segments.append(((x, y), (x2, y2), width))
            next_frontier.append((x2, y2, theta2, depth + 1))
            # Occasional side branch; keeps trees visibly ramified.
            if 1 <= depth <= 10 and rng.random() < 0.28:
                theta3 = theta2 + rng.choice((-1.0, 1.0)) * rng.uniform(0.6, 1.1)
                next_frontier.append((x2, y2, theta3, depth + 2))
        frontier = next_frontier
    if not tips:
        tips = [(spores[0][0], spores[0][1])]

    # Mesh connectors link random tips / anchor points into a mat.
    n_mesh = int(rng.integers(42, 55))
    anchors = tips + [(sp[0], sp[1]) for sp in spores]
    mesh = []
    for _ in range(n_mesh):
        i = int(rng.integers(0, len(anchors)))
        j = int(rng.integers(0, len(anchors)))
        if i == j:
            j = (j + 1) % len(anchors)
        (x0, y0), (x1, y1) = anchors[i], anchors[j]
        # Bend each connector through a jittered midpoint for a woven look.
        mx = (x0 + x1) / 2 + rng.uniform(-0.05, 0.05) * s
        my = (y0 + y1) / 2 + rng.uniform(-0.05, 0.05) * s
        width = max(1, round(1.4 * s / 96.0))
        mesh.append(((x0, y0), (mx, my), (x1, y1), width))

    return {"spores": spores, "segments": segments, "mesh": mesh}


def _background(seed: int, size: int) -> Image.Image:
    """Near-white canvas with mild seeded noise, independent of time."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    base = rng.integers(232, 252, size=(size, size, 1), dtype=np.uint8)
    pixels = np.repeat(base, 3, axis=2)
    tint = rng.integers(0, 4, size=(size, size, 3), dtype=np.uint8)
    pixels = np.clip(pixels.astype(np.int16) - tint, 0, 255).astype(np.uint8)
    return Image.fromarray(pixels, mode="RGB")


def render_stage_image(params: StageParams, seed: int, image_size: int) -> Image.Image:
    """Render one sample deterministically.

    Spores are filled ellipses, hyphae are branching filament polylines
    grown from germ points, mycelium adds an interconnected mesh on top.
    Identical (params, seed, image_size) yield bit-identical images.
    """
    if image_size < 32:
        raise ConfigError(f"image_size must be >= 32, got {image_size}")
    scene = _build_scene(seed, image_size)
    img = _background(seed, image_size)
    draw = ImageDraw.Draw(img)

    spores = scene["spores"]
    n_draw = max(1, round(params.spore_fill * len(spores)))
    for (cx, cy, rx, ry) in spores[:n_draw]:
        draw.ellipse((cx - rx, cy - ry, cx + rx, cy + ry), fill=_SPORE_COLOR)

    segments = scene["segments"]
    n_seg = round(params.filament_growth * len(segments))
    for ((x0, y0), (x1, y1), width) in segments[:n_seg]:
        draw.line((x0, y0, x1, y1), fill=_FILAMENT_COLOR, width=width)

    mesh = scene["mesh"]
    n_mesh = round(params.mesh_density * len(mesh))
    for ((x0, y0), (mx, my), (x1, y1), width) in mesh[:n_mesh]:
        draw.line((x0, y0, mx, my), fill=_MESH_COLOR, width=width)
        draw.line((mx, my, x1, y1), fill=_MESH_COLOR, width=width)

    return img


def foreground_fraction(img: Image.Image) -> float:
    """Fraction of pixels darker than the foreground threshold."""
    arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return float((arr.mean(axis=2) < FOREGROUND_THRESHOLD).mean())


# ── Text descriptions ────────────────────────────────────────────────────

def _time_phrase(stage: int, t: float, cfg: GenConfig) -> str:
    """Coarse position of t within its stage band: early / mid / late."""
    t1, t2 = cfg.stage_boundaries
    bands = {
        SPORE: (cfg.t_min, t1),
        HYPHAE: (t1, t2),
        MYCELIUM: (t2, cfg.t_max),
    }
    lo, hi = bands[stage]
    rel = (t - lo) / (hi - lo) if hi > lo else 0.0
    idx = min(2, int(rel * 3))
    return TIME_PHRASES[idx]


def describe_sample(stage: int, t: float, template_seed: int, cfg: GenConfig | None = None) -> str:
    """Produce a deterministic templated description of one sample."""
    if stage not in DESCRIPTION_TEMPLATES:
        raise InputError(f"unknown stage index {stage}")
    cfg = cfg if cfg is not None else GenConfig()
    if not (cfg.t_min <= t <= cfg.t_max):
        raise InputError(f"timestamp {t} outside range [{cfg.t_min}, {cfg.t_max}]")
    templates = DESCRIPTION_TEMPLATES[stage]
    template = templates[template_seed % len(templates)]
    return template.format(phrase=_time_phrase(stage, t, cfg))


# ── Manifest I/O ─────────────────────────────────────────────────────────

def write_manifest(samples: list[Sample], path: Path) -> None:
    """Write one tab-separated record per line, atomically."""
    lines = [MANIFEST_HEADER]
    for s in samples:
        lines.append(
            f"{s.image_path}\t{s.label}\t{s.timestamp_hours:.6f}\t{s.description}\t{s.split}"
        )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_manifest(path: Path) -> list[Sample]:
    """Parse a manifest file, validating every record."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    samples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        image_path, label_s, t_s, description, split = parts
        try:
            sample = Sample(image_path, int(label_s), float(t_s), description, split)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        sample.validate()
        samples.append(sample)
    return samples


# ── Dataset generation ───────────────────────────────────────────────────

def _split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Per-stage split sizes; val/test floor, remainder goes to train."""
    n_val = int(math.floor(ratios[1] * n))
    n_test = int(math.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    if n_train <= 0:
        raise ConfigError(f"split ratios {ratios} leave no training samples for n={n}")
    return n_train, n_val, n_test


def _stage_band(stage: int, cfg: GenConfig) -> tuple[float, float]:
    t1, t2 = cfg.stage_boundaries
    return {
        SPORE: (cfg.t_min, t1),
        HYPHAE: (t1, t2),
        MYCELIUM: (t2, cfg.t_max),
    }[stage]


def generate_dataset(cfg: GenConfig, out_dir: str | Path, force: bool = False) -> list[Sample]:
    """Generate images plus a manifest under out_dir.

    Emits 3 * n_per_stage samples with per-stage uniform timestamps and a
    stratified seeded split. Repeated runs with the same config produce
    byte-identical artifacts. Refuses to overwrite an existing dataset
    unless force is set.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    images_dir = out_dir / IMAGES_SUBDIR
    if manifest_path.exists() or images_dir.exists():
        if not force:
            raise DataError(
                f"dataset already exists under {out_dir}; pass force=True (--force) to regenerate"
            )
        if images_dir.exists():
            shutil.rmtree(images_dir)
        manifest_path.unlink(missing_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)

    samples: list[Sample] = []
    split_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 9999])))
    for stage in (SPORE, HYPHAE, MYCELIUM):
        lo, hi = _stage_band(stage, cfg)
        t_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 100 + stage])))
        timestamps = t_rng.uniform(lo, hi, size=cfg.n_per_stage)

        n_train, n_val, n_test = _split_counts(cfg.n_per_stage, cfg.split_ratios)
        order = split_rng.permutation(cfg.n_per_stage)
        split_of = {}
        for pos, idx in enumerate(order):
            if pos < n_train:
                split_of[int(idx)] = "train"
            elif pos < n_train + n_val:
                split_of[int(idx)] = "val"
            else:
                split_of[int(idx)] = "test"

        for i in range(cfg.n_per_stage):
            t = float(timestamps[i])
            params = growth_params_from_time(t, cfg)
            if params.stage != stage:
                raise DataError(
                    f"internal: timestamp {t} sampled for stage {stage} maps to stage {params.stage}"
                )
            keys = np.random.SeedSequence([cfg.seed, stage, i]).generate_state(2)
            render_seed = int(keys[0])
            template_seed = int(keys[1])

            img = render_stage_image(params, render_seed, cfg.image_size)
            rel_path = f"{IMAGES_SUBDIR}/{STAGE_NAMES[stage]}_{i:04d}.png"
            img.save(out_dir / rel_path, format="PNG")

            samples.append(
                Sample(
                    image_path=rel_path,
                    label=stage,
                    timestamp_hours=t,
                    description=describe_sample(stage, t, template_seed, cfg),
                    split=split_of[i],
                )
            )

    write_manifest(samples, manifest_path)
    return samples
