from .container import (
    MAX_GAUSSIANS_DEFAULT,
    GopModel,
    decode_features,
    decode_gop,
    decode_keyframe,
    encode_gop,
    parse_segment,
)
from .quantize import QuantEntry, default_quant_spec, dequantize_attribute, observed_entry, quantize_attribute
from .sorting import (
    GridLayout,
    attribute_matrix,
    build_attribute_grids,
    features_to_grids,
    grid_to_attributes,
    grids_to_features,
    morton_order,
    neighbor_dissimilarity,
    sort_to_grid,
    tile_feature_grid,
    untile_feature_grid,
)
from .video import (
    DecodeError,
    ExternalCodec,
    FeatureVideo,
    decode_feature_video,
    encode_feature_video,
    qp_step,
)

__all__ = [
    "MAX_GAUSSIANS_DEFAULT",
    "GopModel",
    "GridLayout",
    "QuantEntry",
    "DecodeError",
    "ExternalCodec",
    "FeatureVideo",
    "attribute_matrix",
    "build_attribute_grids",
    "decode_features",
    "decode_feature_video",
    "decode_gop",
    "decode_keyframe",
    "default_quant_spec",
    "dequantize_attribute",
    "encode_feature_video",
    "encode_gop",
    "features_to_grids",
    "grid_to_attributes",
    "grids_to_features",
    "morton_order",
    "neighbor_dissimilarity",
    "observed_entry",
    "parse_segment",
    "qp_step",
    "quantize_attribute",
    "sort_to_grid",
    "tile_feature_grid",
    "untile_feature_grid",
]
