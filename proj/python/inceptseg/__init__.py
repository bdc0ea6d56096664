try:
    # installed wheel layout: the extension lives inside the package
    from inceptseg._inceptseg import (
        ConfigError,
        IoError,
        Model,
        NumericalError,
        bilinear_resize,
        confusion,
        conv2d,
        generate_synthetic,
        jaccard,
        maxpool2x2,
        roc_auc,
        scalar_metrics,
    )
except ImportError:
    # in-tree build layout: the extension sits on sys.path directly
    from _inceptseg import (
        ConfigError,
        IoError,
        Model,
        NumericalError,
        bilinear_resize,
        confusion,
        conv2d,
        generate_synthetic,
        jaccard,
        maxpool2x2,
        roc_auc,
        scalar_metrics,
    )

__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "NumericalError",
    "bilinear_resize",
    "confusion",
    "conv2d",
    "generate_synthetic",
    "jaccard",
    "maxpool2x2",
    "roc_auc",
    "scalar_metrics",
]
