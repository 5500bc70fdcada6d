"""Tests for latent4d."""
