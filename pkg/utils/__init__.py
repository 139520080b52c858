"""Utilidades compartidas: logging, semillas y escritura de resultados."""
