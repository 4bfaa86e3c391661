# Manifests, synthetic corpus and speaker embeddings