"""Font-classifier training stack with max-response suppression."""

try:
    from ._hesup import (
        evaluate,
        generate_dataset,
        gradcheck_suite,
        predict,
        score,
        suppress,
        train,
    )
except ImportError:  # in-tree builds put the extension directly on sys.path
    from _hesup import (
        evaluate,
        generate_dataset,
        gradcheck_suite,
        predict,
        score,
        suppress,
        train,
    )

__all__ = [
    "evaluate",
    "generate_dataset",
    "gradcheck_suite",
    "predict",
    "score",
    "suppress",
    "train",
]
