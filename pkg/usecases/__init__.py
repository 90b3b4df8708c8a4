"""Use cases package: one module per pipeline stage, grouped by model"""
