"""Variable-length evolution toolkit."""
