"""Core geometry: jet arithmetic, charts, scalar/metric fields, grids."""
