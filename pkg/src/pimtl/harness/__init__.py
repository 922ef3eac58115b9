"""Experiment runners, configuration and the command-line interface."""
