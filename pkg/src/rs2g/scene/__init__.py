from .objects import (
    ATTRIBUTE_WIDTH,
    CATEGORIES,
    Dataset,
    DetectedObject,
    Frame,
    SceneSequence,
    encode_attributes,
    encode_frame,
    encode_sequence,
    min_ego_gap,
    risk_label,
)
from .generator import DOMAIN_A, DOMAIN_B, DomainConfig, domain_config, generate_synthetic
from .dataset import load_dataset, save_dataset, split

__all__ = [name for name in dir() if not name.startswith("_")]
