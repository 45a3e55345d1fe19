"""Joint POS tagging and dependency parsing (C++ core)."""

from ._posdep import (
    AlignmentError,
    ConfigError,
    Error,
    IoError,
    Model,
    ModelSpec,
    ParseError,
    Sentence,
    ShapeError,
    Token,
    ValidationError,
    decode_tree_greedy,
    decode_tree_mst,
    evaluate,
    format_conll,
    framework_names,
    is_arborescence,
    make_folds,
    parse_conll,
    read_conll,
    read_tag_corpus,
    significance,
    tree_defect,
    tree_score,
    write_conll,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
