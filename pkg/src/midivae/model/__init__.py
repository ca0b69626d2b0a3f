from .config import ModelConfig
from .layers import CompoundEmbedding, GuidanceDecoder, HierarchicalEncoder, IntraDecoder, QueryPool

__all__ = ["CompoundEmbedding", "GuidanceDecoder", "HierarchicalEncoder", "IntraDecoder", "ModelConfig", "QueryPool"]
