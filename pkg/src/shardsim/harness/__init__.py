"""Scenario runner, verifiers, reporting and the command line."""
