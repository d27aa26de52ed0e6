"""Source selection: target-aware retrieval and the GRPO subset policy."""
