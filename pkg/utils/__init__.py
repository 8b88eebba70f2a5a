"""
Configuration, exceptions and process metrics shared by every LilNetX package
"""
