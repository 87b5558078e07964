"""
AVALIAÇÃO ZERO-SHOT E RECUPERAÇÃO
Banco de rótulos por prompt, classificação pelo texto mais próximo,
splits All/Medium/Hard e recuperação imagem -> nuvem de pontos
Versão 1.0
"""
from dataclasses import dataclass
from typing import Callable, Collection, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.codificadores import Embedding, FrozenEncoderHandle, encode_image, encode_text
from src.models import ViewImage
from src.settings import Configuracao

Vetor = Union[Embedding, np.ndarray]


def _vetor_unitario(x: Vetor) -> np.ndarray:
    vec = np.asarray(x.vec if isinstance(x, Embedding) else x, dtype=np.float64)
    norma = np.linalg.norm(vec)
    if norma == 0 or not np.isfinite(norma):
        raise ValueError("Consulta com norma nula ou não finita")
    return vec / norma


def _ordenar(similaridades: np.ndarray) -> np.ndarray:
    """Índices por similaridade decrescente; empates pelo índice crescente"""
    return np.lexsort((np.arange(similaridades.shape[0]), -similaridades))


# ====================== BANCO DE RÓTULOS ======================

@dataclass(frozen=True, eq=False)
class LabelBank:
    """Categorias, template do prompt e embeddings de texto unitários (um por categoria)"""
    categories: Tuple[str, ...]
    template: str
    embeddings: np.ndarray  # (K, D)

    def __post_init__(self):
        categorias = tuple(self.categories)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if not categorias:
            raise ValueError("Banco de rótulos vazio")
        if len(set(categorias)) != len(categorias):
            raise ValueError("Nomes de categoria duplicados no banco de rótulos")
        if emb.ndim != 2 or emb.shape[0] != len(categorias):
            raise ValueError("Deve haver exatamente um embedding por categoria")
        if np.any(np.abs(np.linalg.norm(emb, axis=1) - 1.0) > 1e-6):
            raise ValueError("Embeddings do banco devem ter norma unitária")
        emb.flags.writeable = False
        object.__setattr__(self, "categories", categorias)
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return len(self.categories)

    def codigo(self, categoria: str) -> int:
        return self.categories.index(categoria)

    def prompt(self, categoria: str) -> str:
        return self.template.replace(Configuracao.MARCADOR_CLASSE, categoria)


def build_label_bank(categories: Sequence[str], template: str,
                     enc: FrozenEncoderHandle) -> LabelBank:
    """Substitui cada nome em [CLASS], codifica e normaliza"""
    if not categories:
        raise ValueError("Lista de categorias vazia")
    if Configuracao.MARCADOR_CLASSE not in template:
        raise ValueError(f"Template sem o marcador {Configuracao.MARCADOR_CLASSE}: {template!r}")
    if len(set(categories)) != len(categories):
        raise ValueError("Nomes de categoria duplicados")
    vetores = [encode_text(template.replace(Configuracao.MARCADOR_CLASSE, c), enc).vec
               for c in categories]
    return LabelBank(categories=tuple(categories), template=template,
                     embeddings=np.stack([v / np.linalg.norm(v) for v in vetores]))


# ====================== CLASSIFICAÇÃO ======================

def similaridades_zeroshot(consultas: np.ndarray, bank: LabelBank) -> np.ndarray:
    """Cosseno entre cada consulta (linhas) e cada categoria: (N, K)"""
    q = np.asarray(consultas, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    return q @ bank.embeddings.T


def classify_zeroshot(cloud_emb: Vetor, bank: LabelBank, k: int = 5) -> List[Tuple[str, float]]:
    """
    Top-k categorias por similaridade cosseno decrescente; empates pelo
    código da categoria (posição no banco).
    """
    if not (1 <= k <= len(bank)):
        raise ValueError(f"k deve estar em [1, {len(bank)}], recebido {k}")
    similaridades = bank.embeddings @ _vetor_unitario(cloud_emb)
    return [(bank.categories[i], float(similaridades[i])) for i in _ordenar(similaridades)[:k]]


# ====================== SPLITS ======================

@dataclass(frozen=True)
class EvalSplit:
    """Split de avaliação: nome e categorias excluídas"""
    name: str
    excluded: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.name not in Configuracao.SPLITS_VALIDOS:
            raise ValueError(f"Split inválido: {self.name!r} (válidos: {Configuracao.SPLITS_VALIDOS})")
        object.__setattr__(self, "excluded", tuple(self.excluded))

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "excluded": list(self.excluded)}


def validar_hierarquia_splits(medium: EvalSplit, hard: EvalSplit) -> None:
    """Hard deve remover um superconjunto das remoções de Medium"""
    faltando = set(medium.excluded) - set(hard.excluded)
    if faltando:
        raise ValueError(f"Split Hard não exclui categorias removidas por Medium: {sorted(faltando)}")


def apply_split(similaridades: np.ndarray, labels: Sequence[str], split: EvalSplit,
                categorias: Sequence[str], reduzir_banco: bool = True) -> Dict[str, object]:
    """
    Acurácias top-1 e top-5 de um split.

    Args:
        similaridades: Matriz (N, K) consulta x categoria na ordem dos códigos
        labels: Categoria verdadeira de cada consulta
        split: Split com as categorias excluídas
        categorias: Nomes das K categorias (ordem dos códigos)
        reduzir_banco: Também remove as excluídas dos candidatos

    Returns:
        {split, top1, top5, n}
    """
    sims = np.asarray(similaridades, dtype=np.float64)
    categorias = list(categorias)
    if sims.ndim != 2 or sims.shape != (len(labels), len(categorias)):
        raise ValueError(f"Matriz de similaridades {sims.shape} incompatível com "
                         f"{len(labels)} rótulos e {len(categorias)} categorias")
    desconhecidas = sorted(set(split.excluded) - set(categorias))
    if desconhecidas:
        raise ValueError(f"Split {split.name} exclui categorias inexistentes: {desconhecidas}")
    sem_categoria = sorted(set(labels) - set(categorias))
    if sem_categoria:
        raise ValueError(f"Rótulos fora do banco: {sem_categoria}")

    excluidas = set(split.excluded)
    colunas = [j for j, c in enumerate(categorias) if not (reduzir_banco and c in excluidas)]
    linhas = [i for i, rotulo in enumerate(labels) if rotulo not in excluidas]
    if not linhas or not colunas:
        raise ValueError(f"Split {split.name} não deixa amostras para avaliar")

    codigo = {categorias[j]: posicao for posicao, j in enumerate(colunas)}
    sub = sims[np.ix_(linhas, colunas)]
    acertos1 = acertos5 = 0
    for linha, i in zip(sub, linhas):
        ordem = _ordenar(linha)
        verdadeiro = codigo.get(labels[i])
        if verdadeiro is None:
            continue
        acertos1 += int(ordem[0] == verdadeiro)
        acertos5 += int(verdadeiro in ordem[:5])
    n = len(linhas)
    return {"split": split.name, "top1": acertos1 / n, "top5": acertos5 / n, "n": n}


# ====================== RECUPERAÇÃO ======================

@dataclass(frozen=True)
class RetrievalResult:
    """Consulta e lista ranqueada (id da nuvem, similaridade)"""
    query_id: str
    ranking: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        ranking = tuple((str(i), float(s)) for i, s in self.ranking)
        ids = [i for i, _ in ranking]
        if len(set(ids)) != len(ids):
            raise ValueError("Ids duplicados no resultado de recuperação")
        if any(a[1] < b[1] for a, b in zip(ranking, ranking[1:])):
            raise ValueError("Similaridades da recuperação devem ser não crescentes")
        object.__setattr__(self, "ranking", ranking)

    @property
    def ids(self) -> List[str]:
        return [i for i, _ in self.ranking]

    def to_dict(self) -> Dict[str, object]:
        return {"query_id": self.query_id,
                "ranking": [{"id": i, "similaridade": s} for i, s in self.ranking]}


TransformacaoConsulta = Callable[[ViewImage, np.ndarray], np.ndarray]


def retrieve_clouds(image: ViewImage, gallery: Sequence[Tuple[str, Vetor]],
                    enc: FrozenEncoderHandle, k: int = 3,
                    transformar: Optional[TransformacaoConsulta] = None) -> RetrievalResult:
    """
    Ranqueia a galeria pela similaridade cosseno com a imagem codificada.

    Args:
        image: Vista de consulta
        gallery: Pares (id da nuvem, embedding)
        enc: Codificador de imagem congelado
        k: Quantos resultados
        transformar: Mapeia (vista, embedding bruto) para o espaço da galeria
    """
    if not gallery:
        raise ValueError("Galeria vazia")
    if not (1 <= k <= len(gallery)):
        raise ValueError(f"k deve estar em [1, {len(gallery)}], recebido {k}")
    ids = [i for i, _ in gallery]
    if len(set(ids)) != len(ids):
        raise ValueError("Ids duplicados na galeria")
    consulta = encode_image(image, enc).vec
    if transformar is not None:
        consulta = transformar(image, np.array(consulta))
    consulta = _vetor_unitario(consulta)
    matriz = np.stack([_vetor_unitario(e) for _, e in gallery])
    similaridades = matriz @ consulta
    ordem = _ordenar(similaridades)[:k]
    return RetrievalResult(query_id=f"{image.source_id}#{image.angle_index}",
                           ranking=tuple((ids[i], float(similaridades[i])) for i in ordem))


def retrieval_hit_at_k(resultados: Sequence[RetrievalResult],
                       relevantes: Sequence[Collection[str]], k: int = 3) -> float:
    """Fração de consultas com algum id relevante entre os k primeiros"""
    if len(resultados) != len(relevantes):
        raise ValueError("Um conjunto de ids relevantes por consulta")
    if not resultados:
        raise ValueError("Nenhuma consulta para avaliar")
    acertos = sum(bool(set(r.ids[:k]) & set(rel)) for r, rel in zip(resultados, relevantes))
    return acertos / len(resultados)
