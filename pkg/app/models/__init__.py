"""Domain models: embeddings and enumerations."""
