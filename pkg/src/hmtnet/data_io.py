"""Dataset descriptors, on-disk canonical format, public-layout importers and a
seeded synthetic depth-hand generator.

Canonical dataset directory::

    descriptor.json      name, topology, intrinsics, image size, sample index
    labels.txt           one line per frame, 3J world-mm values
    frames/NNNNNN.depth  uint32 width, uint32 height, then uint16 depth (mm), all little-endian
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import Intrinsics, unproject
from .errors import DatasetIndexError, ParseError
from .preprocessing import DepthFrame
from .topology import FINGERS, Topology, topology_for

DESCRIPTOR_NAME = "descriptor.json"
LABELS_NAME = "labels.txt"
FORMAT_VERSION = 1
MSRA_SUBJECTS = tuple(f"P{i}" for i in range(9))

# commonly used calibrations; override per dataset when known
DEFAULT_INTRINSICS = {
    "icvl": Intrinsics(241.42, 241.42, 160.0, 120.0),
    "msra": Intrinsics(241.42, 241.42, 160.0, 120.0),
    "nyu": Intrinsics(588.03, 587.07, 320.0, 240.0),
}
DEFAULT_IMAGE_SIZE = {"icvl": (320, 240), "msra": (320, 240), "nyu": (640, 480)}


# -- raw frame files -----------------------------------------------------------------


def write_depth_file(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    if depth.min(initial=0) < 0 or depth.max(initial=0) > 65535:
        raise ValueError("canonical frames store depth as uint16 millimetres")
    h, w = depth.shape
    raw = struct.pack("<II", w, h) + np.ascontiguousarray(np.rint(depth), dtype="<u2").tobytes()
    Path(path).write_bytes(raw)


def read_depth_file(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise ParseError(f"{path}: truncated depth file")
    w, h = struct.unpack_from("<II", buf, 0)
    if len(buf) != 8 + 2 * w * h:
        raise ParseError(f"{path}: expected {w}x{h} uint16 payload, got {len(buf) - 8} bytes")
    return np.frombuffer(buf, dtype="<u2", offset=8).reshape(h, w).copy()


def read_msra_bin(path) -> np.ndarray:
    """MSRA bounding-box depth file: 6 int32 (width, height, left, top, right, bottom) + float32 box."""
    buf = Path(path).read_bytes()
    w, h, left, top, right, bottom = struct.unpack_from("<6i", buf, 0)
    box = np.frombuffer(buf, dtype="<f4", offset=24)
    if box.size != (bottom - top) * (right - left):
        raise ParseError(f"{path}: box {right - left}x{bottom - top} does not match payload {box.size}")
    depth = np.zeros((h, w), dtype=np.float32)
    depth[top:bottom, left:right] = box.reshape(bottom - top, right - left)
    return depth


def read_png_depth(path, encoding: str = "gray16") -> np.ndarray:
    """16-bit grayscale PNG, or NYU's RGB packing (high byte in G, low byte in B)."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img)
    if encoding == "nyu_rgb":
        if arr.ndim != 3:
            raise ParseError(f"{path}: expected an RGB image for nyu_rgb encoding")
        return (arr[..., 1].astype(np.uint16) << 8) | arr[..., 2].astype(np.uint16)
    if arr.ndim != 2:
        raise ParseError(f"{path}: expected a single-channel depth image")
    return arr.astype(np.uint16)


# -- descriptor ----------------------------------------------------------------------


@dataclass
class Sample:
    frame: str
    label: int
    subject: str | None = None
    com: tuple[float, float, float] | None = None

    def to_dict(self) -> dict:
        d = {"frame": self.frame, "label": self.label}
        if self.subject is not None:
            d["subject"] = self.subject
        if self.com is not None:
            d["com"] = list(self.com)
        return d


@dataclass
class DatasetDescriptor:
    name: str
    intrinsics: Intrinsics
    topology: str
    samples: list[Sample]
    labels: np.ndarray  # (N, J, 3) world mm
    width: int
    height: int
    root: Path | None = None
    png_encoding: str = "gray16"
    frames: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        J = topology_for(self.topology).J
        if self.labels.ndim != 3 or self.labels.shape[1:] != (J, 3):
            raise DatasetIndexError(f"labels must be (N, {J}, 3), got {self.labels.shape}")
        for s in self.samples:
            if not 0 <= s.label < len(self.labels):
                raise DatasetIndexError(f"sample {s.frame} points at missing label line {s.label}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def topo(self) -> Topology:
        return topology_for(self.topology)

    def joints(self, i: int) -> np.ndarray:
        return self.labels[self.samples[i].label]

    def depth(self, i: int) -> np.ndarray:
        if self.frames is not None:
            return self.frames[i]
        path = Path(self.samples[i].frame)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        if not path.exists():
            raise DatasetIndexError(f"frame file {path} does not exist")
        suffix = path.suffix.lower()
        if suffix == ".depth":
            return read_depth_file(path)
        if suffix == ".bin":
            return read_msra_bin(path)
        if suffix == ".png":
            return read_png_depth(path, self.png_encoding)
        raise DatasetIndexError(f"unknown frame format {path.suffix}")

    def frame(self, i: int) -> DepthFrame:
        return DepthFrame(self.depth(i), self.intrinsics)

    def subset(self, indices: Sequence[int], name: str | None = None) -> "DatasetDescriptor":
        indices = list(indices)
        return DatasetDescriptor(
            name=name or self.name,
            intrinsics=self.intrinsics,
            topology=self.topology,
            samples=[Sample(self.samples[i].frame, k, self.samples[i].subject, self.samples[i].com)
                     for k, i in enumerate(indices)],
            labels=self.labels[[self.samples[i].label for i in indices]].reshape(-1, self.topo.J, 3),
            width=self.width,
            height=self.height,
            root=self.root,
            png_encoding=self.png_encoding,
            frames=[self.frames[i] for i in indices] if self.frames is not None else None,
        )


def _format_label_line(joints: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in joints.reshape(-1))


def write_dataset(desc: DatasetDescriptor, out_dir) -> Path:
    """Write ``desc`` in canonical form; returns the descriptor path."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    samples = []
    for i, s in enumerate(desc.samples):
        rel = f"frames/{i:06d}.depth"
        write_depth_file(out / rel, desc.depth(i))
        samples.append(Sample(rel, i, s.subject, s.com).to_dict())
    lines = [_format_label_line(desc.joints(i)) for i in range(len(desc))]
    (out / LABELS_NAME).write_text("".join(line + "\n" for line in lines))
    meta = {
        "format": "hmtnet-dataset",
        "version": FORMAT_VERSION,
        "name": desc.name,
        "topology": desc.topology,
        "intrinsics": desc.intrinsics.as_dict(),
        "width": desc.width,
        "height": desc.height,
        "labels": LABELS_NAME,
        "samples": samples,
    }
    path = out / DESCRIPTOR_NAME
    path.write_text(json.dumps(meta, indent=1) + "\n")
    return path


def read_dataset(path) -> DatasetDescriptor:
    """Load a canonical dataset from its directory or descriptor file."""
    path = Path(path)
    if path.is_dir():
        path = path / DESCRIPTOR_NAME
    try:
        meta = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: cannot read descriptor ({exc})") from exc
    if meta.get("format") != "hmtnet-dataset":
        raise ParseError(f"{path}: not an hmtnet dataset descriptor")
    root = path.parent
    J = topology_for(meta["topology"]).J
    labels = []
    for n, line in enumerate((root / meta["labels"]).read_text().splitlines(), start=1):
        values = line.split()
        if len(values) != 3 * J:
            raise ParseError(f"{root / meta['labels']}:{n}: expected {3 * J} values, got {len(values)}")
        labels.append([float(v) for v in values])
    samples = [Sample(s["frame"], s["label"], s.get("subject"),
                      tuple(s["com"]) if "com" in s else None) for s in meta["samples"]]
    return DatasetDescriptor(
        name=meta["name"],
        intrinsics=Intrinsics(**meta["intrinsics"]),
        topology=meta["topology"],
        samples=samples,
        labels=np.asarray(labels, dtype=np.float64).reshape(-1, J, 3),
        width=meta["width"],
        height=meta["height"],
        root=root,
    )


# -- importers -----------------------------------------------------------------------


def import_uvd_listing(label_file, image_root, dataset: str, intrinsics: Intrinsics | None = None,
                       png_encoding: str = "gray16", limit: int | None = None,
                       check_images: bool = True) -> DatasetDescriptor:
    """Parse ``<image path> u1 v1 d1 ... uJ vJ dJ`` lines (pixels + depth mm).

    A line may also carry the dataset's full raw joint list when the
    topology defines ``source_indices`` (e.g. NYU's 36 joints), in which
    case the selected subset is kept.
    """
    topo = topology_for(dataset)
    k = intrinsics or DEFAULT_INTRINSICS[dataset]
    image_root = Path(image_root)
    samples, labels = [], []
    with open(label_file) as fh:
        for n, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            values = parts[1:]
            try:
                uvd = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{label_file}:{n}: non-numeric value ({exc})") from exc
            if uvd.size != 3 * topo.J:
                if topo.source_indices is not None and uvd.size % 3 == 0 and uvd.size // 3 > max(topo.source_indices):
                    uvd = uvd.reshape(-1, 3)[list(topo.source_indices)].reshape(-1)
                else:
                    raise ParseError(f"{label_file}:{n}: expected {3 * topo.J} values, got {uvd.size}")
            uvd = uvd.reshape(topo.J, 3)
            if check_images and not (image_root / parts[0]).exists():
                raise DatasetIndexError(f"{label_file}:{n}: image {image_root / parts[0]} not found")
            samples.append(Sample(parts[0], len(labels)))
            labels.append(unproject(uvd[:, 0], uvd[:, 1], uvd[:, 2], k))
            if limit is not None and len(samples) >= limit:
                break
    w, h = DEFAULT_IMAGE_SIZE[dataset]
    return DatasetDescriptor(dataset, k, dataset, samples, np.asarray(labels).reshape(-1, topo.J, 3),
                             w, h, root=image_root, png_encoding=png_encoding)


def import_icvl(label_file, image_root, **kwargs) -> DatasetDescriptor:
    """ICVL listing: image path then 16 x (u px, v px, z mm)."""
    return import_uvd_listing(label_file, image_root, "icvl", **kwargs)


def import_nyu(label_file, image_root, **kwargs) -> DatasetDescriptor:
    """NYU after a one-time export of ``joint_data.mat`` uvd annotations to a text listing.

    Each line: image path then either the 14 selected or all 36 (u, v, d)
    triplets. Depth PNGs use the RGB packing.
    """
    kwargs.setdefault("png_encoding", "nyu_rgb")
    return import_uvd_listing(label_file, image_root, "nyu", **kwargs)


def import_msra(root, intrinsics: Intrinsics | None = None, subjects: Sequence[str] = MSRA_SUBJECTS,
                limit: int | None = None) -> DatasetDescriptor:
    """MSRA layout ``P*/<gesture>/joint.txt`` + ``NNNNNN_depth.bin``.

    ``joint.txt`` holds a count line then 21 x 3 world coordinates per frame
    with the camera looking down -z; z is negated on import.
    """
    root = Path(root)
    k = intrinsics or DEFAULT_INTRINSICS["msra"]
    samples, labels = [], []
    for subject in subjects:
        sdir = root / subject
        if not sdir.is_dir():
            raise DatasetIndexError(f"MSRA subject directory {sdir} not found")
        for gesture in sorted(p.name for p in sdir.iterdir() if p.is_dir()):
            jfile = sdir / gesture / "joint.txt"
            with open(jfile) as fh:
                try:
                    count = int(fh.readline())
                except ValueError as exc:
                    raise ParseError(f"{jfile}:1: missing frame count") from exc
                for i in range(count):
                    values = fh.readline().split()
                    if len(values) != 63:
                        raise ParseError(f"{jfile}:{i + 2}: expected 63 values, got {len(values)}")
                    joints = np.asarray(values, dtype=np.float64).reshape(21, 3)
                    joints[:, 2] *= -1.0
                    rel = f"{subject}/{gesture}/{i:06d}_depth.bin"
                    if not (root / rel).exists():
                        raise DatasetIndexError(f"{root / rel} not found")
                    samples.append(Sample(rel, len(labels), subject))
                    labels.append(joints)
                    if limit is not None and len(samples) >= limit:
                        break
    w, h = DEFAULT_IMAGE_SIZE["msra"]
    return DatasetDescriptor("msra", k, "msra", samples, np.asarray(labels).reshape(-1, 21, 3), w, h, root=root)


# -- MSRA protocol ---------------------------------------------------------------------


def msra_splits(desc: DatasetDescriptor) -> list[tuple[list[int], list[int]]]:
    """Leave-one-subject-out: pair k tests on subject Pk and trains on the other eight."""
    subjects = []
    for i, s in enumerate(desc.samples):
        if s.subject not in MSRA_SUBJECTS:
            raise DatasetIndexError(f"sample {i} ({s.frame}) has no MSRA subject tag (got {s.subject!r})")
        subjects.append(s.subject)
    subjects = np.asarray(subjects)
    splits = []
    for held_out in MSRA_SUBJECTS:
        test = np.flatnonzero(subjects == held_out).tolist()
        train = np.flatnonzero(subjects != held_out).tolist()
        splits.append((train, test))
    return splits


# -- synthetic hands -------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    topology: str = "msra"
    intrinsics: Intrinsics = DEFAULT_INTRINSICS["msra"]
    width: int = 320
    height: int = 240
    root_depth: tuple[float, float] = (400.0, 600.0)
    root_xy: float = 40.0  # root x, y drawn uniformly in +-root_xy mm
    in_plane_rotation: float = 30.0  # degrees, uniform +-
    blob_radius: float = 10.0
    palm_length: tuple[float, float] = (55.0, 75.0)
    bone_length: tuple[float, float] = (18.0, 32.0)
    max_flexion: float = 50.0  # degrees per bone, bending toward the camera
    background_depth: float | None = None  # optional wall behind the hand
    subjects: tuple[str, ...] = ()  # tags assigned round-robin when set


# finger splay (degrees from the palm's "up" direction) and palm attachment fraction
_FINGER_LAYOUT = {"T": (-55.0, 0.45), "I": (-18.0, 1.0), "M": (0.0, 1.0), "R": (15.0, 0.95), "P": (30.0, 0.85)}


def _sample_pose(rng: np.random.Generator, spec: SyntheticSpec, topo: Topology) -> np.ndarray:
    joints = np.zeros((topo.J, 3))
    root = np.array([rng.uniform(-spec.root_xy, spec.root_xy),
                     rng.uniform(-spec.root_xy, spec.root_xy) + 40.0,
                     rng.uniform(*spec.root_depth)])
    theta = np.deg2rad(rng.uniform(-spec.in_plane_rotation, spec.in_plane_rotation))
    tilt = np.deg2rad(rng.uniform(-20.0, 20.0))
    # palm frame: "up" in the image is -y
    up = np.array([np.sin(theta), -np.cos(theta) * np.cos(tilt), np.sin(tilt) * -1.0])
    side = np.array([np.cos(theta), np.sin(theta), 0.0])
    toward_camera = np.cross(side, up)
    if toward_camera[2] > 0:
        toward_camera = -toward_camera
    joints[topo.root] = root
    palm_len = rng.uniform(*spec.palm_length)
    for i, j in enumerate(topo.palm):
        angle = np.deg2rad(-40.0 + 80.0 * i / max(1, len(topo.palm) - 1))
        joints[j] = root + 0.35 * palm_len * (np.cos(angle) * up + np.sin(angle) * side)
    for finger, chain in zip(FINGERS, topo.chains):
        splay, attach = _FINGER_LAYOUT[finger]
        a = np.deg2rad(splay + rng.uniform(-6.0, 6.0))
        direction = np.cos(a) * up + np.sin(a) * side
        base = root + attach * palm_len * direction
        pos = base
        for n, j in enumerate(chain):
            if n == 0:
                joints[j] = base
                continue
            flex = np.deg2rad(rng.uniform(0.0, spec.max_flexion)) * n / len(chain)
            direction = np.cos(flex) * direction + np.sin(flex) * toward_camera
            direction /= np.linalg.norm(direction)
            pos = pos + rng.uniform(*spec.bone_length) * (0.85 ** n) * direction
            joints[j] = pos
    return joints


def _spheres_for(joints: np.ndarray, topo: Topology, radius: float) -> list[tuple[np.ndarray, float]]:
    spheres = [(p, radius) for p in joints]
    bone_r = 0.8 * radius
    edges = [(topo.root, j) for j in topo.palm]
    for chain in topo.chains:
        prev = topo.root
        for j in chain:
            edges.append((prev, j))
            prev = j
    for a, b in edges:
        length = np.linalg.norm(joints[b] - joints[a])
        for t in np.linspace(0.0, 1.0, max(2, int(length / (0.5 * bone_r))))[1:-1]:
            spheres.append((joints[a] + t * (joints[b] - joints[a]), bone_r))
    # fill the palm between the root and each finger's first joint
    first = [chain[0] for chain in topo.chains]
    for a, b in zip(first[:-1], first[1:]):
        for s in np.linspace(0.2, 1.0, 4):
            for t in np.linspace(0.0, 1.0, 4):
                p = joints[topo.root] + s * ((1 - t) * (joints[a] - joints[topo.root]) + t * (joints[b] - joints[topo.root]))
                spheres.append((p, radius))
    return spheres


def _render(spheres, k: Intrinsics, width: int, height: int) -> np.ndarray:
    """Exact ray/sphere z-buffer; 0 where nothing is hit."""
    zbuf = np.full((height, width), np.inf)
    for c, r in spheres:
        uvd_lo = [(k.fx * (c[0] + sx * r) / (c[2] - r) + k.cx, k.fy * (c[1] + sy * r) / (c[2] - r) + k.cy)
                  for sx in (-1, 1) for sy in (-1, 1)]
        us = [p[0] for p in uvd_lo]
        vs = [p[1] for p in uvd_lo]
        u0, u1 = max(0, int(np.floor(min(us))) - 1), min(width, int(np.ceil(max(us))) + 2)
        v0, v1 = max(0, int(np.floor(min(vs))) - 1), min(height, int(np.ceil(max(vs))) + 2)
        if u0 >= u1 or v0 >= v1:
            continue
        uu, vv = np.meshgrid(np.arange(u0, u1), np.arange(v0, v1))
        dx = (uu - k.cx) / k.fx
        dy = (vv - k.cy) / k.fy
        # ray p = t*(dx, dy, 1): |t*d - c|^2 = r^2, solve for the nearest t (= depth)
        a = dx * dx + dy * dy + 1.0
        b = -2.0 * (dx * c[0] + dy * c[1] + c[2])
        cc = c @ c - r * r
        disc = b * b - 4.0 * a * cc
        hit = disc >= 0
        t = (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2.0 * a)
        region = zbuf[v0:v1, u0:u1]
        np.minimum(region, np.where(hit, t, np.inf), out=region)
    return zbuf


def _joint_visible(zbuf: np.ndarray, joints: np.ndarray, k: Intrinsics, radius: float) -> bool:
    u = np.rint(k.fx * joints[:, 0] / joints[:, 2] + k.cx).astype(int)
    v = np.rint(k.fy * joints[:, 1] / joints[:, 2] + k.cy).astype(int)
    h, w = zbuf.shape
    if np.any((u < 0) | (u >= w) | (v < 0) | (v >= h)):
        return False
    return bool(np.all(np.abs(zbuf[v, u] - joints[:, 2]) <= radius))


def _chains_monotone(joints: np.ndarray, topo: Topology) -> bool:
    root = joints[topo.root]
    for chain in topo.chains:
        dist = np.linalg.norm(joints[list(chain)] - root, axis=1)
        if np.any(np.diff(dist) <= 0):
            return False
    return True


def render_hand(joints: np.ndarray, topo: Topology, spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(uint16 depth, float centroid of visible hand surface in mm)``."""
    zbuf = _render(_spheres_for(joints, topo, spec.blob_radius), spec.intrinsics, spec.width, spec.height)
    return _rasterize(zbuf, spec)


def _rasterize(zbuf: np.ndarray, spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    k = spec.intrinsics
    hand = np.isfinite(zbuf)
    v, u = np.nonzero(hand)
    centroid = unproject(u, v, zbuf[v, u], k).mean(axis=0)
    depth = np.where(hand, zbuf, 0.0)
    if spec.background_depth is not None:
        depth = np.where(hand, depth, spec.background_depth)
    return np.rint(depth).astype(np.uint16), centroid


def generate_synthetic(spec: SyntheticSpec, n: int) -> DatasetDescriptor:
    """``n`` seeded frames with exact labels; ``Sample.com`` holds the planted centroid."""
    if n < 1:
        raise ValueError("need at least one frame")
    topo = topology_for(spec.topology)
    rng = np.random.default_rng(spec.seed)
    frames, labels, samples = [], [], []
    while len(frames) < n:
        joints = _sample_pose(rng, spec, topo)
        if not _chains_monotone(joints, topo):
            continue
        zbuf = _render(_spheres_for(joints, topo, spec.blob_radius), spec.intrinsics, spec.width, spec.height)
        if not _joint_visible(zbuf, joints, spec.intrinsics, spec.blob_radius):
            continue
        depth, centroid = _rasterize(zbuf, spec)
        i = len(frames)
        subject = spec.subjects[i % len(spec.subjects)] if spec.subjects else None
        frames.append(depth)
        labels.append(joints)
        samples.append(Sample(f"frames/{i:06d}.depth", i, subject, tuple(float(c) for c in centroid)))
    return DatasetDescriptor(
        name=f"synthetic-{spec.topology}-{spec.seed}",
        intrinsics=spec.intrinsics,
        topology=spec.topology,
        samples=samples,
        labels=np.asarray(labels),
        width=spec.width,
        height=spec.height,
        frames=frames,
    )


def dataset_files_equal(a, b) -> bool:
    """Byte comparison of two canonical dataset directories."""
    a, b = Path(a), Path(b)
    names_a = sorted(str(p.relative_to(a)) for p in a.rglob("*") if p.is_file())
    names_b = sorted(str(p.relative_to(b)) for p in b.rglob("*") if p.is_file())
    if names_a != names_b:
        return False
    return all((a / n).read_bytes() == (b / n).read_bytes() for n in names_a)

