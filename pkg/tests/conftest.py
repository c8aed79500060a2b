import numpy as np
import pytest

from millwear.dataset import build_cycles, read_manifest
from millwear.features import FeatureWindowConfig, ProcessFrequencies
from millwear.signal import SegmentationParams
from millwear.spectral import WindowConfig
from millwear.synth import MillingConfig, generate_dataset

# Small-but-real pipeline configuration shared by dataset/service/CLI tests.
SMALL_WCFG = WindowConfig(frame_len=512, hop=256)
SMALL_FCFG = FeatureWindowConfig(window_len=2048, hop=1024)
SMALL_SEG = SegmentationParams()
SMALL_SYNTH = dict(process_s=2.5, idle_s=0.8, wear_transition=0.55)
SMALL_DURATION = 18.0


def small_config(profile: str = "A") -> MillingConfig:
    return MillingConfig(machine_profile=profile, **SMALL_SYNTH)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """3-cycle synthetic dataset on disk plus its featurized cycles."""
    out = tmp_path_factory.mktemp("smallds")
    manifest_path = generate_dataset(
        small_config(), n_cycles=3, seed=42, out_dir=out, duration_s=SMALL_DURATION
    )
    manifest = read_manifest(manifest_path)
    procfreq = ProcessFrequencies.from_process(
        manifest.spindle_rpm,
        manifest.flutes,
        manifest.sample_interval,
        SMALL_WCFG.frame_len,
    )
    cycles = build_cycles(manifest, SMALL_SEG, SMALL_FCFG, SMALL_WCFG, procfreq)
    return {"manifest_path": manifest_path, "manifest": manifest, "cycles": cycles}


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
