import math

# closed-form minimal excursion cost from 0 for N(-1, 1) increments with p = 1
GAUSSIAN_B0 = 4.0 / math.sqrt(6.0)
# two-point walk, q = 0.3, p = 1 (direct solver, m = 400)
TWO_POINT_B0 = 0.44253505
# two-point walk, q = 0.3: beta = log(7/3), pi(0) = 4/7, E T_1 = 7/4, lambda = 3/4
TWO_POINT_PI0 = 4.0 / 7.0
TWO_POINT_LAMBDA = 0.75
