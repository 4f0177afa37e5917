"""Misspelled-handwriting detection by convolving recognizer features with text."""

__version__ = "0.1.0"
