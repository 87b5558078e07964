"""
Alinhamento Tri-Modal JM3D
Nuvens de pontos, vistas renderizadas e textos em um espaço de embeddings comum
"""

__version__ = "1.0.0"
