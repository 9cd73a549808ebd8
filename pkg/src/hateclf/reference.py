"""Published reference numbers, kept as constants for comparison only."""

# Class distribution per split; class order follows the label scheme.
PUBLISHED_SPLIT_COUNTS = {
    "waseem": {
        "train": (1693, 3337, 10787),
        "validation": (210, 415, 1315),
        "test": (210, 415, 1315),
        "total": (2113, 4167, 13417),
    },
    "davidson": {
        "train": (1146, 15354, 3333),
        "validation": (142, 1918, 415),
        "test": (142, 1918, 415),
        "total": (1430, 19190, 4163),
    },
}

# Cells that no single floor/round rule reproduces; reported, never matched.
PUBLISHED_SPLIT_DISCREPANCIES = {
    ("waseem", "train", "neither"),
    ("waseem", "validation", "neither"),
    ("waseem", "test", "neither"),
}

SPLIT_COUNT_TOLERANCE = 2

# (precision, recall, f1) in percent; None where not reported.
PUBLISHED_SCORES = {
    ("waseem_hovy_lr", "waseem"): (72.87, 77.75, 73.89),
    ("davidson_lr", "davidson"): (91.0, 90.0, 90.0),
    ("waseem_mtl", "waseem"): (None, None, 80.0),
    ("waseem_mtl", "davidson"): (None, None, 89.0),
    ("linear", "waseem"): (81.0, 81.0, 81.0),
    ("linear", "davidson"): (91.0, 91.0, 91.0),
    ("mlp", "waseem"): (73.0, 85.0, 76.0),
    ("mlp", "davidson"): (76.0, 78.0, 77.0),
    ("bilstm", "waseem"): (87.0, 86.0, 86.0),
    ("bilstm", "davidson"): (91.0, 92.0, 92.0),
    ("cnn", "waseem"): (89.0, 87.0, 88.0),
    ("cnn", "davidson"): (92.0, 92.0, 92.0),
}

# Share of gold-hate test tweets predicted offensive by the CNN head.
DAVIDSON_HATE_AS_OFFENSIVE = 0.63
