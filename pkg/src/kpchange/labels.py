"""Change class nomenclature shared across the toolkit.

Class 0 is the no-change class; metrics over "classes of change" exclude it.
"""

CLASS_NAMES = (
    "unchanged",
    "new_building",
    "demolition",
    "new_vegetation",
    "vegetation_growth",
    "missing_vegetation",
    "mobile_object",
)

N_CLASSES = len(CLASS_NAMES)
UNCHANGED = 0
