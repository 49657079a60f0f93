"""Attention-free TreeFFN encoder-decoder for ARC-style grid tasks."""
