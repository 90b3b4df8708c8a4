"""Dataset use cases"""
