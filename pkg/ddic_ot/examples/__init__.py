"""
DDIC-OT Examples

This package contains runnable examples of the clustering pipeline.
"""
