"""Test suite for aaa-toolkit."""
