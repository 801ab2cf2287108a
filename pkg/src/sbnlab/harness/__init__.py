"""Experiment drivers, configuration, I/O and the command line."""
