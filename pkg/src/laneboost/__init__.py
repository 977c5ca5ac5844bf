"""Simulation and replay toolkit for express-lane ordering auctions with a resale intermediary."""

__version__ = "0.1.0"
