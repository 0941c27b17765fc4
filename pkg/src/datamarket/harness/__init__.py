"""Scenarios, configuration files, experiment drivers and the command line."""
