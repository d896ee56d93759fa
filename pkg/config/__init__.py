"""
Run configuration: environment constants and the JSON master config.
"""
