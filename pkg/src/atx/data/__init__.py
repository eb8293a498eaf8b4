"""Manifests, patient splits, augmentation and synthetic corpora."""
