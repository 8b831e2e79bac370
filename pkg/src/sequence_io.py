"""Frame sequences on disk and the offline noise bank container.

Sequences are numbered lossless PNG frames plus a JSON manifest. The noise
bank is a fixed-stride binary file:

    magic "NSQB" | version u32 | count u32 | n u32 | c u32 | h u32 | w u32
    count * n * c * h * w little-endian float32 values
    (entry-major, frame-major, channel-major, row-major)

with per-entry provenance in a ``<path>.meta.json`` sidecar.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field

import cv2
import numpy as np

from src.core import VideoSequence, clamp01
from src.errors import FormatError, InvalidArgumentError, StorageError, UnsupportedVersionError

MANIFEST_NAME = "manifest.json"
BANK_MAGIC = b"NSQB"
BANK_VERSION = 1
BANK_HEADER = struct.Struct("<4s6I")

_DEPTH_MAX = {8: 255, 16: 65535}
_DEPTH_DTYPE = {8: np.uint8, 16: np.uint16}
_COLOR_CHANNELS = {"gray": 1, "rgb": 3}


@dataclass(frozen=True)
class SequenceManifest:
    frames: tuple
    channels: int
    height: int
    width: int
    color: str = "rgb"
    base_dir: str = "."

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.color not in _COLOR_CHANNELS:
            raise FormatError(f"unknown color space {self.color!r}", module="io")
        if _COLOR_CHANNELS[self.color] != self.channels:
            raise FormatError(
                f"color {self.color!r} needs {_COLOR_CHANNELS[self.color]} channels, "
                f"manifest declares {self.channels}",
                module="io",
            )

    def resolve(self, name):
        return os.path.join(self.base_dir, name)

    def to_dict(self):
        return {
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "color": self.color,
            "frames": list(self.frames),
        }

    @classmethod
    def from_dict(cls, data, base_dir="."):
        try:
            channels = int(data["channels"])
            return cls(
                frames=tuple(data["frames"]),
                channels=channels,
                height=int(data["height"]),
                width=int(data["width"]),
                color=data.get("color", "gray" if channels == 1 else "rgb"),
                base_dir=base_dir,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed manifest: {e}", module="io")


def load_manifest(path):
    """Read a manifest; frame paths resolve relative to its directory"""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise StorageError(f"manifest not found: {path}", module="io")
    except OSError as e:
        raise StorageError(f"cannot read manifest {path}: {e}", module="io")
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest {path} is not valid JSON (line {e.lineno})", module="io")
    return SequenceManifest.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def _decode_png(path):
    if not os.path.isfile(path):
        raise StorageError(f"missing frame file: {path}", module="io")
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FormatError(f"cannot decode frame {path}", module="io")
    if image.dtype == np.uint8:
        scale = 255.0
    elif image.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"unsupported pixel type {image.dtype} in {path}", module="io")

    if image.ndim == 2:
        planar = image[None]
    elif image.ndim == 3 and image.shape[2] == 3:
        planar = cv2.cvtColor(image, cv2.COLOR_BGR2RGB).transpose(2, 0, 1)
    else:
        raise FormatError(f"unsupported channel layout {image.shape} in {path}", module="io")
    return planar.astype(np.float64) / scale


def load_sequence(manifest):
    """Decode the listed frames in order and normalize them to [0, 1]"""
    expected = (manifest.channels, manifest.height, manifest.width)
    frames = []
    for name in manifest.frames:
        path = manifest.resolve(name)
        data = _decode_png(path)
        if data.shape != expected:
            raise FormatError(
                f"frame {path} decodes to {data.shape}, manifest declares {expected}",
                module="io",
            )
        frames.append(data)
    if not frames:
        raise FormatError("manifest lists no frames", module="io")
    logging.info(f"Loaded {len(frames)} frames of shape {expected} from {manifest.base_dir}")
    return VideoSequence(np.stack(frames))


def quantize(data, bit_depth):
    """Round-half-up quantization of [0, 1] values to integer codes"""
    if bit_depth not in _DEPTH_MAX:
        raise InvalidArgumentError(f"bit depth must be 8 or 16, got {bit_depth}", module="io")
    codes = np.floor(clamp01(data) * _DEPTH_MAX[bit_depth] + 0.5)
    return codes.astype(_DEPTH_DTYPE[bit_depth])


def write_png(path, planar, bit_depth=8):
    codes = quantize(planar, bit_depth)
    if codes.shape[0] == 1:
        image = codes[0]
    elif codes.shape[0] == 3:
        image = cv2.cvtColor(np.ascontiguousarray(codes.transpose(1, 2, 0)), cv2.COLOR_RGB2BGR)
    else:
        raise InvalidArgumentError(
            f"PNG frames need 1 or 3 channels, got {codes.shape[0]}", module="io"
        )
    try:
        ok = cv2.imwrite(path, image)
    except cv2.error as e:
        raise StorageError(f"cannot write {path}: {e}", module="io")
    if not ok:
        raise StorageError(f"cannot write {path}", module="io")


def save_sequence(video, dir_path, bit_depth=8):
    """Write numbered PNG frames plus manifest.json; returns the manifest"""
    if bit_depth not in _DEPTH_MAX:
        raise InvalidArgumentError(f"bit depth must be 8 or 16, got {bit_depth}", module="io")
    try:
        os.makedirs(dir_path, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {dir_path}: {e}", module="io")

    names = []
    for idx, frame in enumerate(video.data):
        name = f"f{idx:03d}.png"
        write_png(os.path.join(dir_path, name), frame, bit_depth)
        names.append(name)

    manifest = SequenceManifest(
        frames=tuple(names),
        channels=video.channels,
        height=video.height,
        width=video.width,
        color="gray" if video.channels == 1 else "rgb",
        base_dir=os.path.abspath(dir_path),
    )
    write_json(os.path.join(dir_path, MANIFEST_NAME), manifest.to_dict())
    logging.info(f"Saved {video.n} frames ({bit_depth}-bit) to {dir_path}")
    return manifest


def write_json(path, payload):
    """Deterministic JSON artifact (sorted keys, trailing newline)"""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}", module="io")


# Noise bank

@dataclass(frozen=True)
class NoiseEntryMeta:
    source_id: str = ""
    origin: tuple = (0, 0)
    means: tuple = ()
    variances: tuple = ()

    def to_dict(self):
        return {
            "source_id": self.source_id,
            "origin": list(self.origin),
            "means": [float(v) for v in self.means],
            "variances": [float(v) for v in self.variances],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            source_id=str(data.get("source_id", "")),
            origin=tuple(int(v) for v in data.get("origin", (0, 0))),
            means=tuple(float(v) for v in data.get("means", ())),
            variances=tuple(float(v) for v in data.get("variances", ())),
        )


@dataclass(frozen=True, eq=False)
class NoiseBank:
    """Accepted noise sequences stacked as float32 (count, n, c, h, w)"""

    dims: tuple
    data: np.ndarray = None
    entries: tuple = ()
    thresholds: dict = field(default_factory=dict)
    window: tuple = ()
    mode: str = "raw"
    variance: str = "population"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or min(dims) < 1:
            raise InvalidArgumentError(f"bank dims must be (n, c, h, w), got {self.dims}", module="io")
        data = self.data
        if data is None:
            data = np.zeros((0,) + dims, dtype=np.float32)
        data = np.array(data, dtype=np.float32, order="C")
        if data.ndim != 5 or data.shape[1:] != dims:
            raise InvalidArgumentError(
                f"bank payload shape {data.shape} does not match dims {dims}", module="io"
            )
        data.flags.writeable = False
        entries = tuple(self.entries) or tuple(NoiseEntryMeta() for _ in range(data.shape[0]))
        if len(entries) != data.shape[0]:
            raise InvalidArgumentError(
                f"{len(entries)} metadata records for {data.shape[0]} entries", module="io"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "window", tuple(self.window) or dims[2:])
        object.__setattr__(self, "thresholds", dict(self.thresholds))

    @property
    def count(self):
        return self.data.shape[0]

    def __len__(self):
        return self.count

    def entry(self, index):
        """Noise sequence ``index`` as a float64 VideoSequence"""
        return VideoSequence(self.data[index].astype(np.float64))

    @classmethod
    def concatenate(cls, banks, dims=None):
        banks = list(banks)
        if not banks:
            if dims is None:
                raise InvalidArgumentError("cannot infer dims of an empty bank list", module="io")
            return cls(dims=dims)
        first = banks[0]
        for bank in banks[1:]:
            if bank.dims != first.dims:
                raise InvalidArgumentError(
                    f"bank dims {bank.dims} differ from {first.dims}", module="io"
                )
        return cls(
            dims=first.dims,
            data=np.concatenate([b.data for b in banks]),
            entries=tuple(e for b in banks for e in b.entries),
            thresholds=first.thresholds,
            window=first.window,
            mode=first.mode,
            variance=first.variance,
        )

    def metadata(self):
        return {
            "version": BANK_VERSION,
            "dims": list(self.dims),
            "window": list(self.window),
            "mode": self.mode,
            "variance": self.variance,
            "thresholds": self.thresholds,
            "entries": [e.to_dict() for e in self.entries],
        }


def sidecar_path(path):
    return f"{path}.meta.json"


def write_noise_bank(bank, path):
    """Write the binary container and its JSON sidecar; returns bytes written"""
    n, c, h, w = bank.dims
    header = BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.count, n, c, h, w)
    payload = bank.data.astype("<f4").tobytes(order="C")
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise StorageError(f"cannot write noise bank {path}: {e}", module="io")
    write_json(sidecar_path(path), bank.metadata())
    logging.info(f"Wrote noise bank with {bank.count} entries of {bank.dims} to {path}")
    return len(header) + len(payload)


def read_noise_bank(path):
    """Exact inverse of write_noise_bank"""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise StorageError(f"noise bank not found: {path}", module="io")
    except OSError as e:
        raise StorageError(f"cannot read noise bank {path}: {e}", module="io")

    if len(blob) < BANK_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)", module="io")
    magic, version, count, n, c, h, w = BANK_HEADER.unpack_from(blob)
    if magic != BANK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", module="io")
    if version != BANK_VERSION:
        raise UnsupportedVersionError(f"{path}: container version {version}", module="io")
    if min(n, c, h, w) < 1:
        raise FormatError(f"{path}: invalid dims {(n, c, h, w)}", module="io")

    expected = count * n * c * h * w * 4
    payload = blob[BANK_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}",
            module="io",
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(count, n, c, h, w)

    meta = _read_sidecar(path)
    entries = tuple(NoiseEntryMeta.from_dict(e) for e in meta.get("entries", ()))
    if entries and len(entries) != count:
        raise FormatError(
            f"{sidecar_path(path)}: {len(entries)} metadata records for {count} entries",
            module="io",
        )
    return NoiseBank(
        dims=(n, c, h, w),
        data=data,
        entries=entries,
        thresholds=meta.get("thresholds") or {},
        window=tuple(meta.get("window", (h, w))),
        mode=meta.get("mode", "raw"),
        variance=meta.get("variance", "population"),
    )


def _read_sidecar(path):
    meta_path = sidecar_path(path)
    if not os.path.exists(meta_path):
        logging.warning(f"No metadata sidecar next to {path}; entries carry no provenance")
        return {}
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise StorageError(f"cannot read {meta_path}: {e}", module="io")
    except json.JSONDecodeError as e:
        raise FormatError(f"{meta_path} is not valid JSON (line {e.lineno})", module="io")
