"""Scenario files, refinement driver, experiment registry and CLI."""
