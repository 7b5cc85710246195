"""Test suite for the GVKF reference pipeline."""
