"""Downstream protocols: zero-shot prompts, linear probe, retrieval, export."""
