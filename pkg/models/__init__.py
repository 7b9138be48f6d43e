"""
Types de données: configurations pydantic (schemas) et jeux de séquences.
"""
