from dpc.data.manifest import DatasetManifest, Record, group_labels, load_manifest, write_manifest
from dpc.data.preprocess import PreprocessConfig, preprocess
from dpc.data.split import split
from dpc.data.synthetic import SyntheticSpec, make_synthetic

__all__ = [
    "DatasetManifest",
    "PreprocessConfig",
    "Record",
    "SyntheticSpec",
    "group_labels",
    "load_manifest",
    "make_synthetic",
    "preprocess",
    "split",
    "write_manifest",
]
