"""Parametric three-phase fault waveform synthesis and dataset persistence.

Each instance holds six channels in the fixed order V_A, V_B, V_C, I_A,
I_B, I_C. Pre-fault, the voltages form a balanced three-phase sinusoid set
and the currents lag them by a fixed load angle. From the fault sample
onward, faulted phases have their voltage scaled by a sag factor and their
current by a surge factor; ground faults additionally shift the faulted
currents by a zero-sequence offset. Gaussian noise is added everywhere.
Generation is a pure function of (params, label, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DegenerateChannelError, DimensionError, ParameterError

CHANNEL_NAMES = ("V_A", "V_B", "V_C", "I_A", "I_B", "I_C")
DATASET_HEADER = "t,Va,Vb,Vc,Ia,Ib,Ic"
MANIFEST_NAME = "manifest.json"
DATASET_FORMAT_VERSION = 1

_PHASES = {
    "AB": ("A", "B"),
    "ABG": ("A", "B"),
    "AG": ("A",),
    "BC": ("B", "C"),
    "BCG": ("B", "C"),
    "BG": ("B",),
    "CA": ("C", "A"),
    "CAG": ("C", "A"),
    "CG": ("C",),
}


class FaultClass(Enum):
    """The nine short-circuit fault labels."""

    AB = "AB"
    ABG = "ABG"
    AG = "AG"
    BC = "BC"
    BCG = "BCG"
    BG = "BG"
    CA = "CA"
    CAG = "CAG"
    CG = "CG"

    @classmethod
    def parse(cls, text: str) -> "FaultClass":
        try:
            return cls(str(text).strip().upper())
        except ValueError:
            valid = ", ".join(c.value for c in cls)
            raise ParameterError(f"unknown fault class {text!r}; expected one of {valid}") from None

    @property
    def phases(self) -> frozenset:
        """The affected phases, a subset of {A, B, C}."""
        return frozenset(_PHASES[self.value])

    @property
    def grounded(self) -> bool:
        """Whether the fault involves ground."""
        return self.value.endswith("G")

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SynthParams:
    """Waveform generator parameters.

    Amplitudes are in per-unit. ``phase_offsets_deg`` assigns each phase its
    electrical angle; rotating it together with a cyclic phase relabeling
    reproduces the relabeled fault class exactly.
    """

    base_frequency: float = 50.0
    sample_count: int = 6001
    amplitude_v: float = 1.0
    amplitude_i: float = 1.0
    fault_start_fraction: float = 0.5
    sag_factor: float = 0.5
    surge_factor: float = 5.0
    ground_offset: float = 0.3
    noise_sigma: float = 0.02
    seed: int = 0
    duration_s: float = 0.2
    load_angle_deg: float = 30.0
    phase_offsets_deg: tuple = (0.0, -120.0, 120.0)

    def __post_init__(self):
        if self.sample_count < 2:
            raise ParameterError(f"sample_count must be >= 2, got {self.sample_count}")
        if not 0.0 < self.fault_start_fraction < 1.0:
            raise ParameterError(
                f"fault_start_fraction must be in (0, 1), got {self.fault_start_fraction}"
            )
        if not 0.0 < self.sag_factor < 1.0:
            raise ParameterError(f"sag_factor must be in (0, 1), got {self.sag_factor}")
        if self.surge_factor <= 1.0:
            raise ParameterError(f"surge_factor must be > 1, got {self.surge_factor}")
        if self.noise_sigma < 0.0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.base_frequency <= 0.0:
            raise ParameterError(f"base_frequency must be > 0, got {self.base_frequency}")
        if self.duration_s <= 0.0:
            raise ParameterError(f"duration_s must be > 0, got {self.duration_s}")
        if self.seed < 0:
            raise ParameterError(f"seed must be >= 0, got {self.seed}")
        if len(self.phase_offsets_deg) != 3:
            raise ParameterError("phase_offsets_deg must list three angles")


@dataclass(frozen=True)
class JitterRanges:
    """Per-instance parameter ranges used when synthesizing a dataset."""

    sag: tuple = (0.3, 0.7)
    surge: tuple = (3.0, 8.0)
    fault_start: tuple = (0.3, 0.7)
    noise_sigma: tuple = (0.01, 0.05)

    def __post_init__(self):
        for name, (lo, hi) in (
            ("sag", self.sag),
            ("surge", self.surge),
            ("fault_start", self.fault_start),
            ("noise_sigma", self.noise_sigma),
        ):
            if lo > hi:
                raise ParameterError(f"jitter range {name} has lo > hi: ({lo}, {hi})")


@dataclass
class WaveformInstance:
    """One labeled capture: a 6 x T channel matrix plus its fault class."""

    channels: np.ndarray
    label: FaultClass
    instance_id: str

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != len(CHANNEL_NAMES):
            raise DimensionError(
                f"channels must be {len(CHANNEL_NAMES)} x T, got shape {self.channels.shape}"
            )
        if not np.isfinite(self.channels).all():
            raise ParameterError(f"instance {self.instance_id!r} contains non-finite samples")

    @property
    def sample_count(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class ManifestEntry:
    instance_id: str
    path: str
    label: FaultClass


@dataclass
class DatasetManifest:
    """Index of a dataset: entries, per-class counts, and the master seed.

    ``instances`` carries the in-memory waveforms between synthesis and
    persistence; it is not part of the serialized manifest.
    """

    entries: list
    per_class_count: dict
    seed: int
    instances: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ids = [e.instance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ParameterError("manifest contains duplicate instance_ids")


def synth_instance(params: SynthParams, label: FaultClass, instance_id: str = None) -> WaveformInstance:
    """Generate one labeled waveform instance deterministically from its seed."""
    t = params.sample_count
    times = np.linspace(0.0, params.duration_s, t)
    omega = 2.0 * math.pi * params.base_frequency
    lag = math.radians(params.load_angle_deg)

    channels = np.empty((6, t), dtype=np.float64)
    for idx, phase in enumerate("ABC"):
        offset = math.radians(params.phase_offsets_deg[idx])
        channels[idx] = params.amplitude_v * np.sin(omega * times + offset)
        channels[idx + 3] = params.amplitude_i * np.sin(omega * times + offset - lag)

    start = int(math.floor(params.fault_start_fraction * t))
    for idx, phase in enumerate("ABC"):
        if phase in label.phases:
            channels[idx, start:] *= params.sag_factor
            channels[idx + 3, start:] *= params.surge_factor
            if label.grounded:
                channels[idx + 3, start:] += params.ground_offset

    if params.noise_sigma > 0.0:
        rng = np.random.default_rng(params.seed)
        channels += rng.normal(0.0, params.noise_sigma, size=channels.shape)

    if instance_id is None:
        instance_id = f"{label.value}-{params.seed:016x}"
    return WaveformInstance(channels, label, instance_id)


def _instance_params(params: SynthParams, jitter: JitterRanges, class_index: int, k: int) -> SynthParams:
    rng = np.random.default_rng([params.seed, class_index, k])
    drawn = dict(
        fault_start_fraction=rng.uniform(*jitter.fault_start),
        sag_factor=rng.uniform(*jitter.sag),
        surge_factor=rng.uniform(*jitter.surge),
        noise_sigma=rng.uniform(*jitter.noise_sigma),
        seed=int(rng.integers(0, 2**63 - 1)),
    )
    return replace(params, **drawn)


def synth_dataset(params: SynthParams, per_class: int, jitter: JitterRanges = None) -> DatasetManifest:
    """Generate ``per_class`` instances of every fault class.

    Per-instance seeds and jittered fault parameters are derived
    deterministically from the master seed, so the whole dataset is a pure
    function of (params, per_class, jitter).
    """
    if per_class < 1:
        raise ParameterError(f"per_class must be >= 1, got {per_class}")
    jitter = jitter if jitter is not None else JitterRanges()

    entries = []
    instances = {}
    for class_index, label in enumerate(FaultClass):
        for k in range(per_class):
            inst_params = _instance_params(params, jitter, class_index, k)
            instance_id = f"{label.value}-{k:04d}"
            inst = synth_instance(inst_params, label, instance_id)
            entries.append(ManifestEntry(instance_id, f"waves/{instance_id}.csv", label))
            instances[instance_id] = inst

    per_class_count = {label: per_class for label in FaultClass}
    return DatasetManifest(entries, per_class_count, params.seed, instances)


def zscore_normalize(instance: WaveformInstance) -> WaveformInstance:
    """Return a copy with each channel shifted to mean 0 and scaled to std 1.

    Uses the population standard deviation. A constant channel cannot be
    scaled and raises DegenerateChannelError naming the channel.
    """
    channels = instance.channels
    means = channels.mean(axis=1, keepdims=True)
    stds = channels.std(axis=1, keepdims=True)
    flat = np.nonzero(stds.ravel() == 0.0)[0]
    if flat.size:
        name = CHANNEL_NAMES[flat[0]]
        raise DegenerateChannelError(
            f"channel {name} of instance {instance.instance_id!r} is constant"
        )
    return WaveformInstance((channels - means) / stds, instance.label, instance.instance_id)


def write_dataset(manifest: DatasetManifest, directory) -> None:
    """Write every instance as a CSV file plus a JSON manifest.

    Sample values are written with shortest round-trip formatting, so a
    write/read cycle reproduces them bit for bit. The ``t`` column carries
    the sample index.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        instance = manifest.instances.get(entry.instance_id)
        if instance is None:
            raise ParameterError(f"manifest has no in-memory instance for {entry.instance_id!r}")
        path = directory / entry.path
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [DATASET_HEADER]
        cols = instance.channels
        for i in range(instance.sample_count):
            lines.append(f"{i}," + ",".join(repr(float(v)) for v in cols[:, i]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    doc = {
        "format_version": DATASET_FORMAT_VERSION,
        "seed": manifest.seed,
        "per_class_count": {label.value: n for label, n in manifest.per_class_count.items()},
        "entries": [
            {"instance_id": e.instance_id, "path": e.path, "label": e.label.value}
            for e in manifest.entries
        ],
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def read_manifest(directory) -> DatasetManifest:
    """Load the manifest index (without waveform data)."""
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest is not valid JSON: {exc}", file=path) from exc
    for key in ("format_version", "seed", "per_class_count", "entries"):
        if key not in doc:
            raise DataFormatError(f"manifest missing key {key!r}", file=path)
    entries = [
        ManifestEntry(e["instance_id"], e["path"], FaultClass.parse(e["label"]))
        for e in doc["entries"]
    ]
    per_class = {FaultClass.parse(k): int(v) for k, v in doc["per_class_count"].items()}
    return DatasetManifest(entries, per_class, int(doc["seed"]))


def _parse_instance_file(path: Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != DATASET_HEADER:
            expected = DATASET_HEADER.split(",")
            got = header.split(",")
            column = next((i for i, (a, b) in enumerate(zip(expected, got)) if a != b), 0)
            raise DataFormatError(
                f"bad header {header!r}, expected {DATASET_HEADER!r}",
                file=path, row=1, column=column,
            )
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 7:
            raise ValueError(f"expected 7 columns, found {data.shape[1]}")
    except ValueError:
        _locate_parse_failure(path)
        raise  # unreachable unless the file changed under us
    return data[:, 1:7].T.copy()


def _locate_parse_failure(path: Path) -> None:
    """Rescan a file that numpy rejected and report the exact bad cell."""
    with open(path, "r", encoding="utf-8") as fh:
        for row, line in enumerate(fh, start=1):
            if row == 1:
                continue
            cells = line.rstrip("\n").split(",")
            if len(cells) != 7:
                raise DataFormatError(
                    f"expected 7 comma-separated values, found {len(cells)}",
                    file=path, row=row,
                )
            for column, cell in enumerate(cells):
                try:
                    float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"cannot parse {cell!r} as a number",
                        file=path, row=row, column=column,
                    ) from None
    raise DataFormatError("file could not be parsed", file=path)


def read_dataset(directory) -> list:
    """Load every instance listed in a dataset directory's manifest."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    instances = []
    for entry in manifest.entries:
        path = directory / entry.path
        if not path.exists():
            raise FileNotFoundError(f"dataset file listed in manifest not found: {path}")
        channels = _parse_instance_file(path)
        instances.append(WaveformInstance(channels, entry.label, entry.instance_id))
    return instances
