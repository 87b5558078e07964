"""
CODIFICADORES - Nuvem de pontos, imagem e texto
Codificador de pontos treinável invariante a permutação, codificadores
congelados (stubs determinísticos ou tabelas pré-computadas) e fusão das
vistas com embeddings de ângulo e profundidade
"""
import math
import zlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from skimage.measure import block_reduce

from src.models import PointCloud, ViewImage
from src.settings import Configuracao


@dataclass(frozen=True, eq=False)
class Embedding:
    """Vetor D-dimensional produzido por um codificador"""
    vec: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=np.float64)
        if vec.ndim != 1:
            raise ValueError(f"Embedding deve ser um vetor, recebido forma {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("Embedding contém valores não finitos")
        if self.normalized and abs(np.linalg.norm(vec) - 1.0) > 1e-6:
            raise ValueError("Embedding marcado como normalizado sem norma unitária")
        vec.flags.writeable = False
        object.__setattr__(self, "vec", vec)

    @property
    def dim(self) -> int:
        return int(self.vec.shape[0])


def _normalizar(vec: np.ndarray) -> np.ndarray:
    norma = np.linalg.norm(vec)
    if norma == 0:
        raise ValueError("Vetor nulo não pode ser normalizado")
    return vec / norma


# ====================== CODIFICADORES CONGELADOS ======================

class CodificadorTextoStub:
    """Projeção aleatória (semente fixa) de contagens de n-gramas de caracteres"""

    def __init__(self, dim: int, seed: int, n_buckets: int = 4096,
                 ngramas: Sequence[int] = (1, 2, 3)):
        self.dim = dim
        self.n_buckets = n_buckets
        self.ngramas = tuple(ngramas)
        rng = np.random.default_rng([seed, 0x7E47])
        projecao = rng.normal(size=(n_buckets, dim)) / math.sqrt(dim)
        projecao.flags.writeable = False
        self._projecao = projecao

    def _bucket(self, chave: str) -> int:
        return zlib.crc32(chave.encode("utf-8")) % self.n_buckets

    def contagens(self, texto: str) -> np.ndarray:
        contagem = np.zeros(self.n_buckets)
        for palavra in texto.lower().split():
            contagem[self._bucket(f"w:{palavra}")] += 2.0
            marcada = f"<{palavra}>"
            for n in self.ngramas:
                for i in range(len(marcada) - n + 1):
                    contagem[self._bucket(f"{n}:{marcada[i:i + n]}")] += 1.0
        return np.log1p(contagem)

    def __call__(self, texto: str) -> np.ndarray:
        return _normalizar(self.contagens(texto) @ self._projecao)


class CodificadorImagemStub:
    """Projeção aleatória de estatísticas por patch (grade 4x4) de RGB e profundidade"""

    GRADE = 4

    def __init__(self, dim: int, seed: int):
        self.dim = dim
        n_feat = self.GRADE * self.GRADE * 6 + 1
        rng = np.random.default_rng([seed, 0x1A6E])
        projecao = rng.normal(size=(n_feat, dim)) / math.sqrt(dim)
        projecao.flags.writeable = False
        self._projecao = projecao

    def estatisticas(self, img: ViewImage) -> np.ndarray:
        H, W = img.depth.shape
        bloco = (math.ceil(H / self.GRADE), math.ceil(W / self.GRADE))
        ocupacao = (img.depth > 0).astype(np.float64)
        canais = np.dstack([img.rgb, img.depth, ocupacao])
        medias = block_reduce(canais, block_size=bloco + (1,), func=np.mean)
        maximos = block_reduce(img.depth, block_size=bloco, func=np.max)
        medias = medias[:self.GRADE, :self.GRADE].reshape(-1)
        maximos = maximos[:self.GRADE, :self.GRADE].reshape(-1)
        # termo constante: a imagem vazia também tem embedding definido
        return np.concatenate([medias, maximos, [1.0]])

    def __call__(self, img: ViewImage) -> np.ndarray:
        return _normalizar(self.estatisticas(img) @ self._projecao)


class CodificadorTabela:
    """Embeddings pré-computados carregados de um arquivo EMB1"""

    def __init__(self, caminho: Union[str, Path]):
        from src.persistencia import read_embedding_table
        self.caminho = Path(caminho)
        self._tabela = read_embedding_table(self.caminho)
        dims = {v.shape[0] for v in self._tabela.values()}
        self.dim = dims.pop() if dims else 0

    def __call__(self, chave: str) -> np.ndarray:
        try:
            return _normalizar(self._tabela[chave])
        except KeyError:
            raise KeyError(f"Chave ausente na tabela {self.caminho.name}: {chave!r}") from None


@dataclass(frozen=True)
class FrozenEncoderHandle:
    """Referência a um codificador congelado (stub-text, stub-image ou table)"""
    kind: str
    dim: int
    seed: int = 0
    table_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("stub-text", "stub-image", "table"):
            raise ValueError(f"Tipo de codificador desconhecido: {self.kind!r}")
        if self.kind == "table" and not self.table_path:
            raise ValueError("Codificador 'table' exige table_path")
        if self.dim < 1:
            raise ValueError("Dimensão deve ser positiva")

    @cached_property
    def codificador(self):
        if self.kind == "stub-text":
            return CodificadorTextoStub(self.dim, self.seed)
        if self.kind == "stub-image":
            return CodificadorImagemStub(self.dim, self.seed)
        tabela = CodificadorTabela(self.table_path)
        if tabela.dim != self.dim:
            raise ValueError(f"Tabela com dimensão {tabela.dim}, esperado {self.dim}")
        return tabela


def chave_imagem(img: ViewImage) -> str:
    """Chave de uma vista em tabelas de embeddings: '<source_id>#<angle_index>'"""
    return f"{img.source_id}#{img.angle_index}"


def encode_text(text: str, enc: FrozenEncoderHandle) -> Embedding:
    if not text:
        raise ValueError("Texto vazio")
    if enc.kind == "stub-image":
        raise ValueError("Codificador de imagem usado para texto")
    return Embedding(enc.codificador(text))


def encode_image(img: ViewImage, enc: FrozenEncoderHandle) -> Embedding:
    if enc.kind == "stub-text":
        raise ValueError("Codificador de texto usado para imagem")
    if enc.kind == "table":
        return Embedding(enc.codificador(chave_imagem(img)))
    return Embedding(enc.codificador(img))


# ====================== CODIFICADOR DE PONTOS ======================

class PointEncoder(nn.Module):
    """
    Codificador de pontos mínimo no estilo PointNet.

    Perceptron de 2 camadas por ponto -> max-pool -> cabeça de 2 camadas.
    O max-pool simétrico torna a saída invariante a permutações dos pontos.

    Shapes:
        points: [B, N, 3] (ou [N, 3])
        saída:  [B, D]    (ou [D])
    """

    def __init__(self, dim: int = 32, largura_ponto: Tuple[int, int] = (64, 128),
                 largura_cabeca: int = 128, ativacao: str = "gelu"):
        super().__init__()
        if ativacao not in ("gelu", "relu"):
            raise ValueError(f"Ativação desconhecida: {ativacao!r}")
        h1, h2 = largura_ponto
        self.dim = dim
        self.largura_intermediaria = h2
        self.ativacao = nn.GELU() if ativacao == "gelu" else nn.ReLU()
        self.mlp_ponto = nn.Sequential(nn.Linear(3, h1), self.ativacao, nn.Linear(h1, h2))
        self.cabeca = nn.Sequential(nn.Linear(h2, largura_cabeca), self.ativacao,
                                    nn.Linear(largura_cabeca, dim))

    def caracteristicas_por_ponto(self, points: torch.Tensor) -> torch.Tensor:
        """Features intermediárias por ponto (antes do pooling): [B, N, C]"""
        return self.mlp_ponto(points)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        sem_lote = points.dim() == 2
        if sem_lote:
            points = points.unsqueeze(0)
        if points.dim() != 3 or points.shape[-1] != 3:
            raise ValueError(f"points deve ter forma [B, N, 3], recebido {tuple(points.shape)}")
        global_feat = self.caracteristicas_por_ponto(points).max(dim=1).values
        saida = self.cabeca(global_feat)
        return saida.squeeze(0) if sem_lote else saida


def tensor_da_nuvem(cloud: PointCloud, dtype: torch.dtype = Configuracao.DTYPE_TREINO) -> torch.Tensor:
    return torch.as_tensor(np.array(cloud.points), dtype=dtype)


def encode_points(cloud: PointCloud, encoder: PointEncoder) -> torch.Tensor:
    """Embedding da nuvem (diferenciável em relação aos parâmetros): [D]"""
    dtype = next(encoder.parameters()).dtype
    return encoder(tensor_da_nuvem(cloud, dtype))


# ====================== FUSÃO DE VISTAS ======================

def tabela_senoidal(n_posicoes: int, dim: int) -> torch.Tensor:
    """Codificação posicional senoidal [n_posicoes, dim]"""
    posicao = torch.arange(n_posicoes, dtype=torch.float64).unsqueeze(1)
    divisor = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    tabela = torch.zeros(n_posicoes, dim, dtype=torch.float64)
    tabela[:, 0::2] = torch.sin(posicao * divisor)
    tabela[:, 1::2] = torch.cos(posicao * divisor)[:, : dim // 2]
    return tabela


def depth_bucket(mean_depth: Union[float, np.ndarray], max_depth: float,
                 n_buckets: int = Configuracao.N_FAIXAS_PROFUNDIDADE) -> np.ndarray:
    """Quantiza a profundidade média em n faixas de largura igual sobre [0, max_depth]"""
    if max_depth <= 0:
        raise ValueError("Profundidade máxima do corpus deve ser positiva")
    faixa = np.floor(np.asarray(mean_depth, dtype=np.float64) / max_depth * n_buckets)
    return np.clip(faixa, 0, n_buckets - 1).astype(np.int64)


class EmbeddingsVista(nn.Module):
    """Tabelas ε de ângulo (30) e profundidade (16) mais LayerNorm afim"""

    def __init__(self, dim: int, max_depth: float, usar_embeddings: bool = True):
        super().__init__()
        if max_depth <= 0:
            raise ValueError("Profundidade máxima do corpus deve ser positiva")
        self.dim = dim
        self.max_depth = float(max_depth)
        self.usar_embeddings = usar_embeddings
        self.angulo = nn.Parameter(tabela_senoidal(Configuracao.NUM_VISTAS_CANDIDATAS, dim)
                                   .to(torch.get_default_dtype()))
        self.profundidade = nn.Parameter(tabela_senoidal(Configuracao.N_FAIXAS_PROFUNDIDADE, dim)
                                         .to(torch.get_default_dtype()))
        self.norma = nn.LayerNorm(dim, eps=Configuracao.EPS_LAYERNORM)

    def forward(self, raw: torch.Tensor, angle_indices: torch.Tensor,
                depth_buckets: torch.Tensor) -> torch.Tensor:
        if torch.any(angle_indices < 0) or torch.any(angle_indices >= Configuracao.NUM_VISTAS_CANDIDATAS):
            raise ValueError("Índice angular fora de [0, 30)")
        x = raw
        if self.usar_embeddings:
            x = x + self.angulo[angle_indices] + self.profundidade[depth_buckets]
        return self.norma(x)


@dataclass(frozen=True, eq=False)
class ViewFeatureSet:
    """Features fundidas por vista com metadados de ângulo e profundidade"""
    features: torch.Tensor  # [V, D]
    angle_indices: Tuple[int, ...]
    mean_depths: Tuple[float, ...]

    def __post_init__(self):
        if self.features.dim() != 2 or self.features.shape[0] < 1:
            raise ValueError("Conjunto de vistas deve ser [V, D] com V >= 1")
        if not torch.all(torch.isfinite(self.features)):
            raise ValueError("Features de vista não finitas")
        if len(self.angle_indices) != self.features.shape[0]:
            raise ValueError("Número de índices angulares difere de V")

    @property
    def n_views(self) -> int:
        return int(self.features.shape[0])


def fuse_view_features(raw: torch.Tensor, angle_indices: Sequence[int],
                       mean_depths: Sequence[float], tables: EmbeddingsVista) -> ViewFeatureSet:
    """
    Fusão por vista: LayerNorm(raw + ε_grau[ângulo] + ε_prof[faixa(profundidade)]).

    Args:
        raw: Features brutas do codificador de imagem [V, D]
        angle_indices: Índice angular de cada vista
        mean_depths: Profundidade média de cada vista
        tables: Tabelas de embeddings e LayerNorm
    """
    raw = torch.as_tensor(raw, dtype=tables.angulo.dtype)
    if raw.dim() != 2 or raw.shape[1] != tables.dim:
        raise ValueError(f"raw deve ser [V, {tables.dim}], recebido {tuple(raw.shape)}")
    indices = list(angle_indices)
    if any(not (0 <= i < Configuracao.NUM_VISTAS_CANDIDATAS) for i in indices):
        raise ValueError(f"Índice angular fora de [0, 30): {indices}")
    faixas = torch.as_tensor(depth_bucket(np.asarray(mean_depths), tables.max_depth))
    fundidas = tables(raw, torch.as_tensor(indices, dtype=torch.long), faixas)
    return ViewFeatureSet(features=fundidas, angle_indices=tuple(indices),
                          mean_depths=tuple(float(d) for d in mean_depths))
