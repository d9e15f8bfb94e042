"""White-box building, heat pump and hot-water tank simulation."""
