"""Retriever use cases"""
