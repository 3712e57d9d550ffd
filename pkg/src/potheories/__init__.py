"""Toy quantum theories with a primitive ontology on discretized configuration spaces."""
