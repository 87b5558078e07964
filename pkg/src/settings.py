"""
Configurações centralizadas do projeto JM3D
Constantes do alinhamento tri-modal, logging e sementes
"""
import logging
import random
import sys
from typing import Optional

import numpy as np
import torch


class Configuracao:
    """Classe de configuração centralizada"""

    # Vistas candidatas (30 vistas a cada 12 graus)
    NUM_VISTAS_CANDIDATAS = 30
    PASSO_ANGULAR_GRAUS = 12.0
    OMEGA_PADRAO_GRAUS = 60.0

    # Profundidade: menor valor atribuído ao ponto mais próximo da câmera
    PROFUNDIDADE_MINIMA = 0.05
    N_FAIXAS_PROFUNDIDADE = 16

    # Normalização de camadas
    EPS_LAYERNORM = 1e-5

    # Perda contrastiva
    TEMPERATURA_PADRAO = 0.07

    # Avaliação zero-shot
    TEMPLATE_PROMPT = "a 3D representation of [CLASS]"
    MARCADOR_CLASSE = "[CLASS]"
    SPLITS_VALIDOS = ("All", "Medium", "Hard")

    # Ponte com o modelo de linguagem
    TOKEN_PONTO = "<point>"
    TOKEN_FIM = "</s>"
    TOKEN_PAD = "<pad>"
    TOKEN_DESCONHECIDO = "<unk>"
    TOKEN_USUARIO = "USER:"
    TOKEN_ASSISTENTE = "ASSISTANT:"
    TOKEN_QUEBRA = "\\n"
    LAYOUTS_CONVERSA = ("point-first", "point-last")

    # Tipo numérico do treino (payload dos checkpoints é float32)
    DTYPE_TREINO = torch.float32

    # Cabeçalhos dos formatos binários
    MAGICO_PONTOS = b"PCV1"
    MAGICO_EMBEDDINGS = b"EMB1"
    MAGICO_CHECKPOINT = b"JMCK"
    VERSAO_CHECKPOINT = 1

    @classmethod
    def angulo_da_vista(cls, indice: int) -> float:
        """Azimute (graus) da vista candidata de índice dado"""
        return cls.PASSO_ANGULAR_GRAUS * indice


class Logger:
    """Sistema de logging centralizado"""

    NOME = "jm3d"

    @staticmethod
    def obter() -> logging.Logger:
        return logging.getLogger(Logger.NOME)

    @staticmethod
    def info(mensagem: str):
        Logger.obter().info(mensagem)

    @staticmethod
    def warning(mensagem: str):
        Logger.obter().warning(mensagem)

    @staticmethod
    def error(mensagem: str):
        Logger.obter().error(mensagem)

    @staticmethod
    def debug(mensagem: str):
        Logger.obter().debug(mensagem)


def configurar_logging(nivel: str = "INFO") -> logging.Logger:
    """Configura o logger do projeto uma única vez (handler em stderr)"""
    logger = Logger.obter()
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s"))
        logger.addHandler(handler)
        logger.propagate = False
    logger.setLevel(nivel.upper())
    return logger


def fixar_semente(semente: int, threads: Optional[int] = 1) -> None:
    """
    Fixa as sementes de random, numpy e torch.

    Args:
        semente: Semente global
        threads: Número de threads do torch (None mantém o padrão)
    """
    random.seed(semente)
    np.random.seed(semente % (2**32))
    torch.manual_seed(semente)
    if threads is not None:
        torch.set_num_threads(threads)


def derivar_semente(*partes: int) -> int:
    """Deriva uma semente inteira estável a partir de uma sequência de inteiros"""
    return int(np.random.SeedSequence([int(p) for p in partes]).generate_state(1)[0])


def barra_progresso_ativa() -> bool:
    """Barras tqdm só quando há terminal"""
    return sys.stderr.isatty()
