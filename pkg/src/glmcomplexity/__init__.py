"""Annealed and quenched landscape complexity for generalized linear models."""
