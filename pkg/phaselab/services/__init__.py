"""Servicios numéricos: potenciales, campos, descenso, medidas y experimentos."""
