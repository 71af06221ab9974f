"""Proportional switched networks: schedulers, simulation and fluid diagnostics."""
