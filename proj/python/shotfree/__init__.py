"""Shot-free few-shot classification: python surface of the C++ core."""

from ._core import (
    Checkpoint,
    ShotfreeError,
    SplitDataset,
    TrainConfig,
    __version__,
    chi,
    collapse_demo,
    embed_rows,
    evaluate,
    gen_synthetic,
    gradcheck,
    meta_train,
    posterior,
    protonet_train,
)

__all__ = [
    "Checkpoint",
    "ShotfreeError",
    "SplitDataset",
    "TrainConfig",
    "__version__",
    "chi",
    "collapse_demo",
    "embed_rows",
    "evaluate",
    "gen_synthetic",
    "gradcheck",
    "meta_train",
    "posterior",
    "protonet_train",
]
