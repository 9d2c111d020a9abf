"""Objective-driven coding agents with a sandboxed tool loop."""

__version__ = "0.1.0"
