"""Routers HTTP del laboratorio."""
