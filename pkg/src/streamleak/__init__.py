"""Timing side-channel laboratory for enclave-hosted stream processing."""
