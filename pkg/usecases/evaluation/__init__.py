"""Evaluation use cases"""
