"""Cross-lingual dependency parsing with implicit word reordering via an order teacher."""

__version__ = "0.1.0"
