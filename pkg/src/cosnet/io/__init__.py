from .checkpoint import (
    CheckpointConfigError,
    CheckpointCRCError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    FeatureDumpError,
    decode_checkpoint,
    decode_features,
    dump_features,
    encode_checkpoint,
    encode_features,
    load_checkpoint,
    load_config,
    load_features,
    save_checkpoint,
    save_config,
)
from .images import (
    DEFAULT_PALETTE,
    ImageFormatError,
    MalformedHeaderError,
    PaletteError,
    TruncatedPayloadError,
    UnknownColorError,
    UnsupportedMaxvalError,
    decode_pnm,
    encode_pnm,
    image_to_mask,
    load_image,
    load_mask,
    mask_to_image,
    save_image,
    save_mask,
)
