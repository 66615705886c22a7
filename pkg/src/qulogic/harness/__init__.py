"""Config-driven scenario runner, reports and command-line entry point."""
