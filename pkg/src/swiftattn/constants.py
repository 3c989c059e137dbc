"""Published parameter counts (millions) and GMACs at 224x224 for the presets.

Version 1.  Any edit here must be mirrored in tests/test_constants.py.
"""

CONSTANTS_VERSION = 1

TARGET_PARAMS_M = {"xs": 3.5, "s": 6.1, "l1": 12.1, "l3": 28.5}
TARGET_GMACS = {"xs": 0.6, "s": 1.0, "l1": 1.6, "l3": 4.0}

PARAM_TOLERANCE = 0.05
MAC_TOLERANCE = 0.10

# ImageNet-1K classifier width and evaluation resolution
NUM_CLASSES = 1000
INPUT_SIZE = 224
