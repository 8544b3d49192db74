"""Configuration, sweeps, serialisation and the command-line interface."""
