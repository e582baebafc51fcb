"""Heterogeneous Gaussian mechanism, Secure-SGD and certified robustness."""
