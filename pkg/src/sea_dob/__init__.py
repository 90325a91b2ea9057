"""Velocity-sourced series elastic actuator toolkit."""
