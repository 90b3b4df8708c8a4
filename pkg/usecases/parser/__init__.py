"""Parser use cases"""
