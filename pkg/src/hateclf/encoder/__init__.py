from .model import (
    BASE_CONFIG,
    EncoderConfig,
    TransformerEncoder,
    build_mini,
    default_dtype,
    forward,
    parameter_count,
)
from .pretrained import convert_state_dict, load_pretrained, save_encoder
from .vocab import (
    CLS,
    MAX_LEN,
    PAD,
    SEP,
    UNK,
    TokenSequence,
    Vocabulary,
    batch_tensors,
    build_vocab,
    tokenize,
    wordpiece,
)
