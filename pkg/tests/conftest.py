"""Makes the tests directory importable (for the shared scene builders)."""
