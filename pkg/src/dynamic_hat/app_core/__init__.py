"""
app_core package for dynamic_hat.
Logging, settings, artifact persistence and reporting shared by the CLI.
"""
