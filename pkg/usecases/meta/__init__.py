"""Meta-learning use cases"""
