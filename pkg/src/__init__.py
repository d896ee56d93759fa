"""
One script per CLI subcommand.
"""
