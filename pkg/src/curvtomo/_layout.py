"""Packed parameter layout shared by the numba and numpy kernels.

Force fields and domains that come from the built-in catalog are flattened
into a float64 vector so the jitted kernels can branch on the kind code.
"""

# trajectory status codes
EXITED = 0
TRAPPED = 1
INVALID = 2

# potential kinds
POT_ZERO = 0
POT_HARMONIC = 1
POT_GAUSSIAN = 2
POT_GRID = 3

# magnetic kinds
MAG_NONE = 0
MAG_CONSTANT = 1
MAG_RADIAL = 2
MAG_GRID = 3

# force parameter slots
F_POT_KIND = 0
F_POT_A = 1
F_POT_W = 2
F_POT_CX = 3
F_POT_CY = 4
F_MAG_KIND = 5
F_MAG_B0 = 6
F_MAG_B2 = 7
F_MAG_CX = 8
F_MAG_CY = 9
F_PG_X0 = 10
F_PG_Y0 = 11
F_PG_DX = 12
F_PG_DY = 13
F_MG_X0 = 14
F_MG_Y0 = 15
F_MG_DX = 16
F_MG_DY = 17
F_SIZE = 18

# domain kinds and slots
DOM_DISC = 0
DOM_ELLIPSE = 1

D_KIND = 0
D_CX = 1
D_CY = 2
D_A = 3  # radius for a disc, first semi-axis for an ellipse
D_B = 4
D_ROT = 5
D_SIZE = 6

# veltkamp splitting constant for error-free products
SPLIT = 134217729.0
