"""Design, simulate, calibrate and exploit a mirror-augmented nodding 2D Lidar."""

