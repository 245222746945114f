"""Scenario runner for krflab experiments."""
