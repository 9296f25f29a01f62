"""Configuration, ingestion, augmentation, synthetic data and the training loop."""
