#!/usr/bin/env python3
"""
Main entry point for retrieval-coupled meta-learning experiments
"""

from handlers.cli_handler import cli

if __name__ == '__main__':
    cli()
