"""Unit test package for broadcast-mac."""
