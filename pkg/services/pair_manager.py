"""Registry of thick/thin volume pairs"""

import json
import logging
import os
from dataclasses import asdict, dataclass

from errors import ValidationError, VolumeFormatError
from storage import atomic_write
from volumes.volume import read_volume

logger = logging.getLogger(__name__)

THIN_SUFFIX = ".thin.vsrv"
THICK_SUFFIX = ".thick.vsrv"
MANIFEST_NAME = "pairs.json"


@dataclass(frozen=True)
class VolumePair:
    """A thick (low-res) and thin (high-res) acquisition of the same scan"""

    stem: str
    thin: str
    thick: str

    def load(self):
        """Read both volumes; returns (thick, thin)"""
        return read_volume(self.thick, name=f"{self.stem}.thick"), read_volume(self.thin, name=f"{self.stem}.thin")


class PairManager:
    """Manages the pairs available for training and evaluation"""

    def __init__(self):
        """Initialize an empty registry"""
        self.pairs = []
        self.unpaired = []

    def add_pair(self, pair: VolumePair):
        """Add a pair to the registry"""
        if any(p.stem == pair.stem for p in self.pairs):
            raise ValidationError(f"pair {pair.stem!r} already registered")
        self.pairs.append(pair)

    def remove_pair(self, stem):
        """Remove a pair from the registry"""
        self.pairs = [p for p in self.pairs if p.stem != stem]

    def get_all_pairs(self):
        """Get all pairs, ordered by stem"""
        return sorted(self.pairs, key=lambda p: p.stem)

    def discover(self, directory):
        """
        Register every ``<stem>.thin.vsrv`` / ``<stem>.thick.vsrv`` pair in ``directory``

        Files without a partner are remembered in ``unpaired``.
        """
        thin, thick = {}, {}
        for entry in sorted(os.listdir(directory)):
            path = os.path.join(directory, entry)
            if entry.endswith(THIN_SUFFIX):
                thin[entry[: -len(THIN_SUFFIX)]] = path
            elif entry.endswith(THICK_SUFFIX):
                thick[entry[: -len(THICK_SUFFIX)]] = path
        for stem in sorted(thin.keys() & thick.keys()):
            self.add_pair(VolumePair(stem, thin[stem], thick[stem]))
        self.unpaired = sorted(
            [thin[s] for s in thin.keys() - thick.keys()] + [thick[s] for s in thick.keys() - thin.keys()]
        )
        for path in self.unpaired:
            logger.warning("No partner for %s", path)
        logger.info("Found %d pair(s) in %s", len(self.pairs), directory)
        return self.get_all_pairs()

    def load_manifest(self, path):
        """Register the pairs listed in a ``pairs.json`` manifest; relative paths resolve against it"""
        with open(path, "r", encoding="utf-8") as f:
            try:
                entries = json.load(f)
            except json.JSONDecodeError as e:
                raise VolumeFormatError(f"{path}: unreadable pair manifest ({e})") from e
        if not isinstance(entries, list):
            raise VolumeFormatError(f"{path}: pair manifest must be a list")
        base = os.path.dirname(os.path.abspath(path))
        for entry in entries:
            try:
                stem, thin, thick = entry["stem"], entry["thin"], entry["thick"]
            except (KeyError, TypeError):
                raise VolumeFormatError(f"{path}: each entry needs stem, thin and thick") from None
            self.add_pair(VolumePair(stem, os.path.join(base, thin), os.path.join(base, thick)))
        return self.get_all_pairs()

    def save_manifest(self, path):
        with atomic_write(path, "w") as f:
            json.dump([asdict(p) for p in self.get_all_pairs()], f, indent=2)

    @classmethod
    def from_path(cls, path):
        """A registry filled from a directory (discovery, or its pairs.json if present) or a manifest file"""
        manager = cls()
        if os.path.isdir(path):
            manifest = os.path.join(path, MANIFEST_NAME)
            if os.path.exists(manifest):
                manager.load_manifest(manifest)
            else:
                manager.discover(path)
        else:
            manager.load_manifest(path)
        if not manager.pairs:
            raise ValidationError(f"no volume pairs found in {path}")
        return manager
