# Data models for the doubly mean-reflected MFBSDE solver
