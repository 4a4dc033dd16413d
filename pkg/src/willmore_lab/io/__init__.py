"""Configuration, mesh generation and persistence."""
